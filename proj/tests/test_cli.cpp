// Exercises the command-line tool end to end. The binary path arrives as
// argv[1] (wired up by CMake).
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string g_binary;
fs::path g_dir;

struct CmdResult {
    int exit_code;
    std::string output; // stdout + stderr
};

CmdResult run_cmd(const std::string& args) {
    fs::path log = g_dir / "cmd.log";
    std::string full = g_binary + " " + args + " > " + log.string() + " 2>&1";
    int rc = std::system(full.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    int code = -1;
    if (rc != -1 && WIFEXITED(rc)) code = WEXITSTATUS(rc);
    return {code, ss.str()};
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

} // namespace

TEST_CASE("run: writes traces, summary, manifest and schema") {
    write_file(g_dir / "cfg.json",
               R"({"run": {"horizon": 10, "seeds": [1], "window": 5},
                   "output": {"dir": ")" + (g_dir / "out1").string() + R"("}})");
    CmdResult r = run_cmd("run --config " + (g_dir / "cfg.json").string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(g_dir / "out1" / "trace_s1.csv"));
    CHECK(fs::exists(g_dir / "out1" / "summary.json"));
    CHECK(fs::exists(g_dir / "out1" / "manifest.json"));
    CHECK(fs::exists(g_dir / "out1" / "schema.json"));
    // 5 metadata/header lines + 10 rows
    CHECK(count_lines(slurp(g_dir / "out1" / "trace_s1.csv")) == 15);
}

TEST_CASE("run: identical invocations produce byte-identical outputs") {
    write_file(g_dir / "cfg2.json", R"({"run": {"horizon": 40, "seeds": [3], "window": 10}})");
    CmdResult a = run_cmd("run --config " + (g_dir / "cfg2.json").string() + " --out " +
                          (g_dir / "rep_a").string());
    CmdResult b = run_cmd("run --config " + (g_dir / "cfg2.json").string() + " --out " +
                          (g_dir / "rep_b").string());
    CHECK(a.exit_code == 0);
    CHECK(b.exit_code == 0);
    CHECK(slurp(g_dir / "rep_a" / "trace_s3.csv") == slurp(g_dir / "rep_b" / "trace_s3.csv"));
    CHECK(slurp(g_dir / "rep_a" / "summary.json") == slurp(g_dir / "rep_b" / "summary.json"));
}

TEST_CASE("run: rerunning from the manifest reproduces the trace") {
    CmdResult c = run_cmd("run --config " + (g_dir / "rep_a" / "manifest.json").string() +
                          " --out " + (g_dir / "rep_c").string());
    CHECK(c.exit_code == 0);
    CHECK(slurp(g_dir / "rep_a" / "trace_s3.csv") == slurp(g_dir / "rep_c" / "trace_s3.csv"));
}

TEST_CASE("run: an inline parameter sweep is rejected with a pointer to sweep") {
    write_file(g_dir / "bad_sweep.json", R"({"policy": {"alpha": [0.1, 0.2]}})");
    CmdResult r = run_cmd("run --config " + (g_dir / "bad_sweep.json").string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("policy.alpha") != std::string::npos);
    CHECK(r.output.find("sweep") != std::string::npos);
}

TEST_CASE("run: unknown keys are rejected by path") {
    write_file(g_dir / "bad_key.json", R"({"policy": {"alpah": 0.1}})");
    CmdResult r = run_cmd("run --config " + (g_dir / "bad_key.json").string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("policy.alpah") != std::string::npos);
}

TEST_CASE("run: seed offset shifts the configured seeds") {
    write_file(g_dir / "cfg3.json", R"({"run": {"horizon": 8, "seeds": [1], "window": 4}})");
    CmdResult r = run_cmd("run --config " + (g_dir / "cfg3.json").string() + " --seed-offset 10" +
                          " --out " + (g_dir / "offset").string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(g_dir / "offset" / "trace_s11.csv"));
}

TEST_CASE("sweep: cross product rows, caps, and empty grids") {
    write_file(g_dir / "base.json", R"({"run": {"horizon": 30, "seeds": [1, 2], "window": 10}})");
    write_file(g_dir / "grid.json", R"({"alpha": [0.0, 0.1]})");
    CmdResult r = run_cmd("sweep --config " + (g_dir / "base.json").string() + " --grid " +
                          (g_dir / "grid.json").string() + " --out " + (g_dir / "sw").string() +
                          " --jobs 2");
    CHECK(r.exit_code == 0);
    std::string csv = slurp(g_dir / "sw" / "sweep.csv");
    CHECK(count_lines(csv) == 5); // header + 2 alphas x 2 seeds

    write_file(g_dir / "empty_grid.json", "{}");
    CmdResult e = run_cmd("sweep --config " + (g_dir / "base.json").string() + " --grid " +
                          (g_dir / "empty_grid.json").string());
    CHECK(e.exit_code == 1);

    CmdResult capped = run_cmd("sweep --config " + (g_dir / "base.json").string() + " --grid " +
                               (g_dir / "grid.json").string() + " --max-runs 3");
    CHECK(capped.exit_code == 1);
    CHECK(capped.output.find("4") != std::string::npos);
}

TEST_CASE("report: aggregates seeds and rejects mismatched configs") {
    write_file(g_dir / "rcfg.json", R"({"run": {"horizon": 30, "seeds": [1, 2], "window": 10}})");
    CmdResult r = run_cmd("run --config " + (g_dir / "rcfg.json").string() + " --out " +
                          (g_dir / "rout").string());
    CHECK(r.exit_code == 0);
    CmdResult rep = run_cmd("report " + (g_dir / "rout" / "trace_s1.csv").string() + " " +
                            (g_dir / "rout" / "trace_s2.csv").string() + " --out " +
                            (g_dir / "ragg").string());
    CHECK(rep.exit_code == 0);
    std::string curve = slurp(g_dir / "ragg" / "report_success_curve.csv");
    CHECK(count_lines(curve) == 22); // header + t in [10, 30]
    CHECK(fs::exists(g_dir / "ragg" / "report_regret_curve.csv"));

    // single trace: sd column all zeros
    CmdResult one = run_cmd("report " + (g_dir / "rout" / "trace_s1.csv").string() + " --out " +
                            (g_dir / "ragg1").string());
    CHECK(one.exit_code == 0);
    std::istringstream lines(slurp(g_dir / "ragg1" / "report_success_curve.csv"));
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        CHECK(line.substr(line.rfind(',') + 1) == "0");
    }

    write_file(g_dir / "rcfg_b.json",
               R"({"env": {"lipschitz": 3.0}, "run": {"horizon": 30, "seeds": [1], "window": 10}})");
    CmdResult rb = run_cmd("run --config " + (g_dir / "rcfg_b.json").string() + " --out " +
                           (g_dir / "rout_b").string());
    CHECK(rb.exit_code == 0);
    CmdResult bad = run_cmd("report " + (g_dir / "rout" / "trace_s1.csv").string() + " " +
                            (g_dir / "rout_b" / "trace_s1.csv").string());
    CHECK(bad.exit_code == 1);
    CHECK(bad.output.find("env.lipschitz") != std::string::npos);
}

TEST_CASE("validate: all suites pass, repeat runs agree, drift injection fails") {
    CmdResult a = run_cmd("validate");
    CHECK(a.exit_code == 0);
    CHECK(a.output.find("PASS gradient-check") != std::string::npos);
    CHECK(a.output.find("PASS inverse-drift") != std::string::npos);
    CHECK(a.output.find("PASS symmetric-init-zero") != std::string::npos);
    CHECK(a.output.find("PASS decomposition-identity") != std::string::npos);

    CmdResult b = run_cmd("validate");
    CHECK(b.output == a.output);

    CmdResult drift = run_cmd("validate --inject-inverse-drift 0.5");
    CHECK(drift.exit_code == 2);
    CHECK(drift.output.find("FAIL inverse-drift") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1") {
    CmdResult r = run_cmd("run");
    CHECK(r.exit_code == 1);
    CmdResult missing = run_cmd("run --config /nonexistent/cfg.json");
    CHECK(missing.exit_code == 1);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-casebandit-binary>\n");
        return 2;
    }
    g_binary = argv[1];
    g_dir = fs::temp_directory_path() / "casebandit_cli_test";
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);
    doctest::Context context;
    int rc = context.run();
    fs::remove_all(g_dir);
    return rc;
}
