#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "casebandit/config.hpp"
#include "casebandit/engine.hpp"
#include "casebandit/errors.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace casebandit;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_coverage(uint64_t horizon = 200) {
    ExperimentConfig cfg;
    cfg.env.kind = "coverage";
    cfg.env.query_dim = 2;
    cfg.env.lipschitz = 2.0;
    cfg.env.p_min = 0.1;
    cfg.policy.kind = "neural_lin_log_ucb";
    cfg.policy.encoder_width = 16;
    cfg.policy.encoder_output_dim = 8;
    cfg.policy.recall_k = 8;
    cfg.run.horizon = horizon;
    cfg.run.window = std::min<uint64_t>(50, horizon);
    cfg.run.seeds = {1};
    return cfg;
}

RunTrace synthetic_trace(const std::vector<double>& utilities) {
    RunTrace t;
    t.env_kind = "coverage";
    for (std::size_t i = 0; i < utilities.size(); ++i) {
        StepRecord r;
        r.t = i + 1;
        r.chosen_utility = utilities[i];
        r.oracle_delta = (1.0 - utilities[i]) / 2.0;
        r.oracle_rho = (1.0 - utilities[i]) / 2.0;
        r.reward = 1;
        t.records.push_back(r);
    }
    return t;
}

} // namespace

TEST_CASE("the first step of an empty bank falls back to zero-shot") {
    ExperimentConfig cfg = small_coverage(1);
    cfg.run.window = 1;
    RunTrace trace = execute_run(cfg, 3);
    REQUIRE(trace.records.size() == 1);
    const StepRecord& r = trace.records[0];
    CHECK(r.chosen_id == -1);
    CHECK(r.candidate_ids.empty());
    CHECK(r.chosen_utility == doctest::Approx(0.1));
    CHECK(r.oracle_rho == 0.0);
    CHECK(r.oracle_delta == doctest::Approx(0.9));
}

TEST_CASE("reruns under the same seed are identical") {
    ExperimentConfig cfg = small_coverage(150);
    RunTrace a = execute_run(cfg, 7);
    RunTrace b = execute_run(cfg, 7);

    fs::path pa = fs::temp_directory_path() / "casebandit_eng_a.csv";
    fs::path pb = fs::temp_directory_path() / "casebandit_eng_b.csv";
    write_trace_csv(a, pa.string());
    write_trace_csv(b, pb.string());
    std::ifstream fa(pa), fb(pb);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
    fs::remove(pa);
    fs::remove(pb);
}

TEST_CASE("bank size grows exactly by the reward") {
    ExperimentConfig cfg = small_coverage(300);
    RunTrace trace = execute_run(cfg, 11);
    uint64_t prev = 0;
    for (const StepRecord& r : trace.records) {
        CHECK(r.bank_size_after == prev + static_cast<uint64_t>(r.reward));
        prev = r.bank_size_after;
    }
}

TEST_CASE("per-step decomposition identity holds and violations are caught") {
    ExperimentConfig cfg = small_coverage(300);
    RunTrace trace = execute_run(cfg, 13);
    auto [deltas, rhos] = decompose(trace);
    REQUIRE(deltas.size() == trace.records.size());
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        CHECK(std::abs(deltas[i] + rhos[i] - (1.0 - trace.records[i].chosen_utility)) <= 1e-9);
    }

    RunTrace corrupted = trace;
    corrupted.records[5].oracle_rho += 1e-6;
    CHECK_THROWS_AS(decompose(corrupted), consistency_error);

    // the per-step sums reconcile with the cumulative regret series
    auto regret = pseudo_regret(trace);
    double total = 0.0;
    for (std::size_t i = 0; i < deltas.size(); ++i) total += deltas[i] + rhos[i];
    CHECK(total == doctest::Approx(regret.back()).epsilon(1e-6));
}

TEST_CASE("decomposition corner cases") {
    // perfect coverage, suboptimal choice: delta 0, rho > 0
    RunTrace t;
    t.env_kind = "coverage";
    StepRecord r;
    r.t = 1;
    r.chosen_utility = 0.7;
    r.oracle_delta = 0.0;
    r.oracle_rho = 0.3;
    t.records.push_back(r);
    // imperfect bank, optimal choice: rho 0, delta > 0
    r.t = 2;
    r.chosen_utility = 0.6;
    r.oracle_delta = 0.4;
    r.oracle_rho = 0.0;
    t.records.push_back(r);
    auto [d, rho] = decompose(t);
    CHECK(d[0] == 0.0);
    CHECK(rho[0] > 0.0);
    CHECK(rho[1] == 0.0);
    CHECK(d[1] > 0.0);
}

TEST_CASE("pseudo-regret series") {
    RunTrace oracle_run = synthetic_trace({1.0, 1.0, 1.0});
    CHECK(pseudo_regret(oracle_run).back() == 0.0);

    RunTrace constant = synthetic_trace(std::vector<double>(10, 0.75));
    auto series = pseudo_regret(constant);
    CHECK(series.back() == doctest::Approx(10 * 0.25).epsilon(1e-12));
    for (std::size_t i = 1; i < series.size(); ++i) CHECK(series[i] >= series[i - 1]);
}

TEST_CASE("success curve windows") {
    RunTrace t;
    t.env_kind = "coverage";
    for (int i = 0; i < 10; ++i) {
        StepRecord r;
        r.t = i + 1;
        r.reward = 1;
        t.records.push_back(r);
    }
    for (double v : success_curve(t, 4)) CHECK(v == 1.0);

    for (int i = 0; i < 10; ++i) t.records[i].reward = i % 2;
    for (double v : success_curve(t, 2)) CHECK(v == doctest::Approx(0.5));

    auto whole = success_curve(t, 10);
    REQUIRE(whole.size() == 1);
    CHECK(whole[0] == doctest::Approx(0.5));

    CHECK_THROWS_AS(success_curve(t, 0), std::invalid_argument);
    CHECK_THROWS_AS(success_curve(t, 11), std::invalid_argument);
}

TEST_CASE("the random policy accumulates linear regret on the latent env") {
    double sum500 = 0.0, sum4000 = 0.0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        ExperimentConfig cfg;
        cfg.env.kind = "latent";
        cfg.env.feature_dim = 8;
        cfg.env.arms = 10;
        cfg.env.hidden_width = 16;
        cfg.env.logit_scale = 4.0;
        cfg.policy.kind = "random";
        cfg.run.horizon = 4000;
        cfg.run.window = 200;
        cfg.run.seeds = {seed};
        RunTrace trace = execute_run(cfg, seed);
        auto regret = pseudo_regret(trace);
        sum500 += regret[499] / 500.0;
        sum4000 += regret[3999] / 4000.0;
    }
    double ratio = (sum4000 / 10.0) / (sum500 / 10.0);
    CHECK(ratio > 0.85);
    CHECK(ratio < 1.15);
}

TEST_CASE("discovery steps retain a perfect case and stay within budget") {
    ExperimentConfig cfg = small_coverage(400);
    cfg.discovery.enabled = true;
    cfg.discovery.metric = "explore";
    cfg.discovery.budget = 0.10;
    RunTrace trace = execute_run(cfg, 17);
    uint64_t discoveries = 0;
    for (const StepRecord& r : trace.records) {
        if (r.discovery) {
            ++discoveries;
            CHECK(r.reward == 1);
            CHECK(r.chosen_id == -1);
            CHECK(r.chosen_utility == 1.0);
            CHECK(r.oracle_delta == 0.0);
            CHECK(r.oracle_rho == 0.0);
        }
    }
    CHECK(discoveries > 0);
    CHECK(discoveries <= static_cast<uint64_t>(std::ceil(0.10 * 400)));
}

TEST_CASE("top-k runs update every selected case") {
    ExperimentConfig cfg = small_coverage(200);
    cfg.policy.top_k = 3;
    cfg.policy.recall_k = 8;
    std::optional<BanditState> policy;
    RunTrace trace = execute_run(cfg, 19, nullptr, &policy);
    REQUIRE(policy.has_value());
    // each non-discovery step with a pool applies min(3, pool) design updates
    uint64_t expected_updates = 0;
    for (const StepRecord& r : trace.records) {
        if (!r.discovery && !r.candidate_ids.empty()) {
            expected_updates += std::min<std::size_t>(3, r.candidate_ids.size());
        }
    }
    CHECK(policy->design().update_count == expected_updates);
    // chosen utility is the max over the selected set, so rho stays >= 0
    for (const StepRecord& r : trace.records) CHECK(r.oracle_rho >= -1e-12);
}

TEST_CASE("trace csv round-trips records and metadata") {
    ExperimentConfig cfg = small_coverage(60);
    cfg.discovery.enabled = true;
    cfg.discovery.metric = "ucb";
    RunTrace trace = execute_run(cfg, 23);
    fs::path path = fs::temp_directory_path() / "casebandit_trace_rt.csv";
    write_trace_csv(trace, path.string());
    RunTrace rt = read_trace_csv(path.string());
    CHECK(rt.env_kind == trace.env_kind);
    CHECK(rt.seed == trace.seed);
    CHECK(rt.config_json == trace.config_json);
    REQUIRE(rt.records.size() == trace.records.size());
    for (std::size_t i = 0; i < rt.records.size(); ++i) {
        const StepRecord &a = trace.records[i], &b = rt.records[i];
        CHECK(a.t == b.t);
        CHECK(a.candidate_ids == b.candidate_ids);
        CHECK(a.chosen_id == b.chosen_id);
        CHECK(a.score.ucb == b.score.ucb); // %.17g round-trip is exact
        CHECK(a.reward == b.reward);
        CHECK(a.oracle_delta == b.oracle_delta);
        CHECK(a.oracle_rho == b.oracle_rho);
        CHECK(a.bank_delta == b.bank_delta);
        CHECK(a.chosen_utility == b.chosen_utility);
        CHECK(a.bank_size_after == b.bank_size_after);
        CHECK(a.discovery == b.discovery);
    }
    fs::remove(path);
}

TEST_CASE("config validation rejects inconsistent setups") {
    ExperimentConfig cfg = small_coverage();
    cfg.policy.top_k = 99; // above recall_k
    CHECK_THROWS_AS(cfg.validate(), config_error);

    cfg = small_coverage();
    cfg.env.kind = "latent";
    cfg.discovery.enabled = true;
    CHECK_THROWS_AS(cfg.validate(), config_error);

    cfg = small_coverage();
    cfg.run.window = cfg.run.horizon + 1;
    CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("adaptive policy beats the non-parametric and random baselines in a sweep") {
    auto final_rate = [](const std::string& kind, uint64_t seed) {
        ExperimentConfig cfg;
        cfg.env.kind = "coverage";
        cfg.env.query_dim = 4;
        cfg.env.lipschitz = 1.0;
        cfg.env.p_min = 0.1;
        cfg.env.embed_noise = 0.5;
        cfg.policy.kind = kind;
        cfg.policy.alpha = 0.1;
        cfg.policy.eta = 0.05;
        cfg.policy.head_lambda = 0.01;
        cfg.policy.encoder_eta = 0.05;
        cfg.policy.encoder_steps = 16;
        cfg.run.horizon = 3000;
        cfg.run.window = 500;
        cfg.run.seeds = {seed};
        return success_curve(execute_run(cfg, seed), 500).back();
    };
    double ucb = 0.0, npc = 0.0, rnd = 0.0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        ucb += final_rate("neural_lin_log_ucb", seed);
        npc += final_rate("np_cbr", seed);
        rnd += final_rate("random", seed);
    }
    CHECK(ucb > npc);
    CHECK(ucb > rnd);
}
