#include "casebandit/config.hpp"

#include "casebandit/errors.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace casebandit {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw config_error(what, path);
}

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            fail(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
        }
    }
}

double get_num(const json& obj, const std::string& path, const std::string& key, double dflt) {
    if (!obj.contains(key)) return dflt;
    const json& v = obj.at(key);
    if (v.is_array()) {
        fail(path + "." + key, "expected a number, got an array (sweeps belong to the sweep command)");
    }
    if (!v.is_number()) fail(path + "." + key, "expected a number");
    return v.get<double>();
}

uint64_t get_uint(const json& obj, const std::string& path, const std::string& key, uint64_t dflt) {
    if (!obj.contains(key)) return dflt;
    const json& v = obj.at(key);
    if (v.is_array()) {
        fail(path + "." + key, "expected an integer, got an array (sweeps belong to the sweep command)");
    }
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0)) {
        fail(path + "." + key, "expected a non-negative integer");
    }
    return v.get<uint64_t>();
}

bool get_bool(const json& obj, const std::string& path, const std::string& key, bool dflt) {
    if (!obj.contains(key)) return dflt;
    const json& v = obj.at(key);
    if (!v.is_boolean()) fail(path + "." + key, "expected a boolean");
    return v.get<bool>();
}

std::string get_str(const json& obj, const std::string& path, const std::string& key,
                    const std::string& dflt) {
    if (!obj.contains(key)) return dflt;
    const json& v = obj.at(key);
    if (v.is_array()) {
        fail(path + "." + key, "expected a string, got an array (sweeps belong to the sweep command)");
    }
    if (!v.is_string()) fail(path + "." + key, "expected a string");
    return v.get<std::string>();
}

} // namespace

std::string fnv1a_hex(const std::string& data) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void ExperimentConfig::validate() const {
    if (env.kind != "coverage" && env.kind != "latent") {
        throw config_error("must be 'coverage' or 'latent'", "env.kind");
    }
    if (env.kind == "coverage") {
        if (env.query_dim == 0) throw config_error("must be >= 1", "env.query_dim");
        if (!(env.lipschitz > 0.0)) throw config_error("must be > 0", "env.lipschitz");
        if (!(env.p_min > 0.0 && env.p_min < 1.0)) throw config_error("must be in (0,1)", "env.p_min");
        if (env.embed_noise < 0.0 || env.embed_noise > 1.0) {
            throw config_error("must be in [0,1]", "env.embed_noise");
        }
    } else {
        if (env.feature_dim == 0 || env.feature_dim % 2 != 0) {
            throw config_error("must be a positive even integer", "env.feature_dim");
        }
        if (env.arms == 0) throw config_error("must be >= 1", "env.arms");
        if (env.hidden_depth < 2) throw config_error("must be >= 2", "env.hidden_depth");
        if (!(env.logit_scale > 0.0)) throw config_error("must be > 0", "env.logit_scale");
        if (policy.top_k != 1) throw config_error("top_k > 1 requires a coverage env", "policy.top_k");
        if (discovery.enabled) {
            throw config_error("the discovery gate requires a coverage env", "discovery");
        }
    }
    policy_kind_from_string(policy.kind);
    if (policy.alpha < 0.0) throw config_error("must be >= 0", "policy.alpha");
    if (!(policy.eta > 0.0)) throw config_error("must be > 0", "policy.eta");
    if (policy.head_lambda < 0.0) throw config_error("must be >= 0", "policy.head_lambda");
    if (!(policy.design_lambda > 0.0)) throw config_error("must be > 0", "policy.design_lambda");
    if (policy.update_interval == 0) throw config_error("must be >= 1", "policy.update_interval");
    if (policy.recall_k == 0) throw config_error("must be >= 1", "policy.recall_k");
    if (policy.top_k == 0 || policy.top_k > policy.recall_k) {
        throw config_error("must be in [1, recall_k]", "policy.top_k");
    }
    if (policy.encoder_width == 0 || policy.encoder_width % 2 != 0) {
        throw config_error("must be a positive even integer", "policy.encoder.width");
    }
    if (policy.encoder_depth < 2) throw config_error("must be >= 2", "policy.encoder.depth");
    if (policy.encoder_output_dim == 0) throw config_error("must be >= 1", "policy.encoder.output_dim");
    if (!(policy.encoder_eta > 0.0)) throw config_error("must be > 0", "policy.encoder.eta");
    if (policy.encoder_steps < 1) throw config_error("must be >= 1", "policy.encoder.steps");
    if (policy.encoder_reg_lambda < 0.0) {
        throw config_error("must be >= 0", "policy.encoder.reg_lambda");
    }
    if (policy.head_update != "sgd" && policy.head_update != "full") {
        throw config_error("must be 'sgd' or 'full'", "policy.head_update");
    }
    if (policy.alpha_schedule != "fixed" && policy.alpha_schedule != "theoretical") {
        throw config_error("must be 'fixed' or 'theoretical'", "policy.alpha_schedule");
    }
    if (policy.kind == "neural_log_ucb" && policy.encoder_output_dim != 1) {
        throw config_error("neural_log_ucb requires encoder output_dim 1",
                           "policy.encoder.output_dim");
    }
    if (run.horizon == 0) throw config_error("must be >= 1", "run.horizon");
    if (run.seeds.empty()) throw config_error("must be nonempty", "run.seeds");
    if (run.window == 0 || run.window > run.horizon) {
        throw config_error("must be in [1, horizon]", "run.window");
    }
    if (discovery.enabled) {
        discovery_metric_from_string(discovery.metric);
        if (!(discovery.budget > 0.0 && discovery.budget <= 1.0)) {
            throw config_error("must be in (0,1]", "discovery.budget");
        }
    }
    if (output.dir.empty()) throw config_error("must be nonempty", "output.dir");
    for (const std::string& f : output.formats) {
        if (f != "csv" && f != "json") throw config_error("unknown format '" + f + "'", "output.formats");
    }
}

static json to_json_resolved(const ExperimentConfig& c) {
    json j;
    j["env"]["kind"] = c.env.kind;
    if (c.env.kind == "coverage") {
        j["env"]["query_dim"] = c.env.query_dim;
        j["env"]["lipschitz"] = c.env.lipschitz;
        j["env"]["p_min"] = c.env.p_min;
        j["env"]["embed_noise"] = c.env.embed_noise;
    } else {
        j["env"]["feature_dim"] = c.env.feature_dim;
        j["env"]["arms"] = c.env.arms;
        j["env"]["hidden_width"] = c.env.hidden_width;
        j["env"]["hidden_depth"] = c.env.hidden_depth;
        j["env"]["logit_scale"] = c.env.logit_scale;
    }
    j["policy"]["kind"] = c.policy.kind;
    j["policy"]["alpha"] = c.policy.alpha;
    j["policy"]["eta"] = c.policy.eta;
    j["policy"]["head_lambda"] = c.policy.head_lambda;
    j["policy"]["design_lambda"] = c.policy.design_lambda;
    j["policy"]["update_interval"] = c.policy.update_interval;
    j["policy"]["recall_k"] = c.policy.recall_k;
    j["policy"]["top_k"] = c.policy.top_k;
    j["policy"]["encoder"]["width"] = c.policy.encoder_width;
    j["policy"]["encoder"]["depth"] = c.policy.encoder_depth;
    j["policy"]["encoder"]["output_dim"] = c.policy.encoder_output_dim;
    j["policy"]["encoder"]["scale"] = c.policy.encoder_scale;
    j["policy"]["encoder"]["eta"] = c.policy.encoder_eta;
    j["policy"]["encoder"]["steps"] = c.policy.encoder_steps;
    j["policy"]["encoder"]["reg_lambda"] = c.policy.encoder_reg_lambda;
    j["policy"]["head_update"] = c.policy.head_update;
    j["policy"]["alpha_schedule"] = c.policy.alpha_schedule;
    j["policy"]["theory"]["nu"] = c.policy.theory_nu;
    j["policy"]["theory"]["M"] = c.policy.theory_M;
    j["policy"]["theory"]["delta"] = c.policy.theory_delta;
    j["policy"]["theory"]["kappa_sigma"] = c.policy.theory_kappa_sigma;
    j["policy"]["recompute_design"] = c.policy.recompute_design;
    j["run"]["horizon"] = c.run.horizon;
    j["run"]["seeds"] = c.run.seeds;
    j["run"]["window"] = c.run.window;
    if (c.discovery.enabled) {
        j["discovery"]["metric"] = c.discovery.metric;
        j["discovery"]["budget"] = c.discovery.budget;
    }
    j["output"]["dir"] = c.output.dir;
    j["output"]["formats"] = c.output.formats;
    return j;
}

std::string ExperimentConfig::canonical_json() const { return to_json_resolved(*this).dump(); }

std::string ExperimentConfig::hash() const { return fnv1a_hex(canonical_json()); }

static ExperimentConfig from_json(const json& root) {
    if (!root.is_object()) throw config_error("config root must be a JSON object");
    check_keys(root, "", {"env", "policy", "run", "discovery", "output"});
    ExperimentConfig c;

    if (root.contains("env")) {
        const json& e = root.at("env");
        if (!e.is_object()) fail("env", "expected an object");
        c.env.kind = get_str(e, "env", "kind", c.env.kind);
        if (c.env.kind == "latent") {
            check_keys(e, "env", {"kind", "feature_dim", "arms", "hidden_width", "hidden_depth",
                                  "logit_scale"});
            c.env.feature_dim = get_uint(e, "env", "feature_dim", c.env.feature_dim);
            c.env.arms = get_uint(e, "env", "arms", c.env.arms);
            c.env.hidden_width = get_uint(e, "env", "hidden_width", c.env.hidden_width);
            c.env.hidden_depth = get_uint(e, "env", "hidden_depth", c.env.hidden_depth);
            c.env.logit_scale = get_num(e, "env", "logit_scale", c.env.logit_scale);
        } else {
            check_keys(e, "env", {"kind", "query_dim", "lipschitz", "p_min", "embed_noise"});
            c.env.query_dim = get_uint(e, "env", "query_dim", c.env.query_dim);
            c.env.lipschitz = get_num(e, "env", "lipschitz", c.env.lipschitz);
            c.env.p_min = get_num(e, "env", "p_min", c.env.p_min);
            c.env.embed_noise = get_num(e, "env", "embed_noise", c.env.embed_noise);
        }
    }

    if (root.contains("policy")) {
        const json& p = root.at("policy");
        if (!p.is_object()) fail("policy", "expected an object");
        check_keys(p, "policy",
                   {"kind", "alpha", "eta", "head_lambda", "design_lambda", "update_interval",
                    "recall_k", "top_k", "encoder", "head_update", "alpha_schedule", "theory",
                    "recompute_design"});
        c.policy.kind = get_str(p, "policy", "kind", c.policy.kind);
        c.policy.alpha = get_num(p, "policy", "alpha", c.policy.alpha);
        c.policy.eta = get_num(p, "policy", "eta", c.policy.eta);
        c.policy.head_lambda = get_num(p, "policy", "head_lambda", c.policy.head_lambda);
        c.policy.design_lambda = get_num(p, "policy", "design_lambda", c.policy.design_lambda);
        c.policy.update_interval = get_uint(p, "policy", "update_interval", c.policy.update_interval);
        c.policy.recall_k = get_uint(p, "policy", "recall_k", c.policy.recall_k);
        c.policy.top_k = get_uint(p, "policy", "top_k", c.policy.top_k);
        if (p.contains("encoder")) {
            const json& e = p.at("encoder");
            if (!e.is_object()) fail("policy.encoder", "expected an object");
            check_keys(e, "policy.encoder",
                       {"width", "depth", "output_dim", "scale", "eta", "steps", "reg_lambda"});
            c.policy.encoder_width = get_uint(e, "policy.encoder", "width", c.policy.encoder_width);
            c.policy.encoder_depth = get_uint(e, "policy.encoder", "depth", c.policy.encoder_depth);
            c.policy.encoder_output_dim =
                get_uint(e, "policy.encoder", "output_dim", c.policy.encoder_output_dim);
            c.policy.encoder_scale = get_num(e, "policy.encoder", "scale", c.policy.encoder_scale);
            c.policy.encoder_eta = get_num(e, "policy.encoder", "eta", c.policy.encoder_eta);
            c.policy.encoder_steps =
                static_cast<int>(get_uint(e, "policy.encoder", "steps", c.policy.encoder_steps));
            c.policy.encoder_reg_lambda =
                get_num(e, "policy.encoder", "reg_lambda", c.policy.encoder_reg_lambda);
        }
        c.policy.head_update = get_str(p, "policy", "head_update", c.policy.head_update);
        c.policy.alpha_schedule = get_str(p, "policy", "alpha_schedule", c.policy.alpha_schedule);
        if (p.contains("theory")) {
            const json& t = p.at("theory");
            if (!t.is_object()) fail("policy.theory", "expected an object");
            check_keys(t, "policy.theory", {"nu", "M", "delta", "kappa_sigma"});
            c.policy.theory_nu = get_num(t, "policy.theory", "nu", c.policy.theory_nu);
            c.policy.theory_M = get_num(t, "policy.theory", "M", c.policy.theory_M);
            c.policy.theory_delta = get_num(t, "policy.theory", "delta", c.policy.theory_delta);
            c.policy.theory_kappa_sigma =
                get_num(t, "policy.theory", "kappa_sigma", c.policy.theory_kappa_sigma);
        }
        c.policy.recompute_design = get_bool(p, "policy", "recompute_design", c.policy.recompute_design);
    }

    if (root.contains("run")) {
        const json& r = root.at("run");
        if (!r.is_object()) fail("run", "expected an object");
        check_keys(r, "run", {"horizon", "seeds", "window"});
        c.run.horizon = get_uint(r, "run", "horizon", c.run.horizon);
        if (r.contains("seeds")) {
            const json& s = r.at("seeds");
            if (!s.is_array() || s.empty()) fail("run.seeds", "expected a nonempty array");
            c.run.seeds.clear();
            for (const json& v : s) {
                if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0)) {
                    fail("run.seeds", "expected non-negative integers");
                }
                c.run.seeds.push_back(v.get<uint64_t>());
            }
        }
        if (r.contains("window")) {
            c.run.window = get_uint(r, "run", "window", c.run.window);
        } else {
            c.run.window = std::min<uint64_t>(200, c.run.horizon);
        }
    } else {
        c.run.window = std::min<uint64_t>(200, c.run.horizon);
    }

    if (root.contains("discovery") && !root.at("discovery").is_null()) {
        const json& d = root.at("discovery");
        if (!d.is_object()) fail("discovery", "expected an object");
        check_keys(d, "discovery", {"metric", "budget"});
        c.discovery.enabled = true;
        c.discovery.metric = get_str(d, "discovery", "metric", c.discovery.metric);
        c.discovery.budget = get_num(d, "discovery", "budget", c.discovery.budget);
    }

    if (root.contains("output")) {
        const json& o = root.at("output");
        if (!o.is_object()) fail("output", "expected an object");
        check_keys(o, "output", {"dir", "formats"});
        c.output.dir = get_str(o, "output", "dir", c.output.dir);
        if (o.contains("formats")) {
            const json& f = o.at("formats");
            if (!f.is_array()) fail("output.formats", "expected an array");
            c.output.formats.clear();
            for (const json& v : f) {
                if (!v.is_string()) fail("output.formats", "expected strings");
                c.output.formats.push_back(v.get<std::string>());
            }
        }
    }

    c.validate();
    return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw config_error(std::string("invalid JSON: ") + e.what());
    }
    if (root.is_object() && root.contains("casebandit_manifest")) {
        if (!root.contains("config")) throw config_error("manifest missing 'config'");
        return from_json(root.at("config"));
    }
    return from_json(root);
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string make_manifest(const ExperimentConfig& cfg, const std::string& version) {
    json m;
    m["casebandit_manifest"] = 1;
    m["version"] = version;
    m["config"] = json::parse(cfg.canonical_json());
    m["config_hash"] = cfg.hash();
    m["seeds"] = cfg.run.seeds;
    return m.dump(2) + "\n";
}

BanditConfig make_bandit_config(const ExperimentConfig& cfg, uint64_t seed) {
    BanditConfig bc;
    bc.kind = policy_kind_from_string(cfg.policy.kind);
    bc.alpha = cfg.policy.alpha;
    bc.eta = cfg.policy.eta;
    bc.head_lambda = cfg.policy.head_lambda;
    bc.design_lambda = cfg.policy.design_lambda;
    bc.update_interval = cfg.policy.update_interval;
    bc.encoder.input_dim =
        cfg.env.kind == "coverage" ? 4 * cfg.env.query_dim : cfg.env.feature_dim;
    bc.encoder.width = cfg.policy.encoder_width;
    bc.encoder.depth = cfg.policy.encoder_depth;
    bc.encoder.output_dim = cfg.policy.encoder_output_dim;
    bc.encoder.scale = cfg.policy.encoder_scale;
    bc.encoder.seed = Rng(seed).fork(streams::kInit).next_u64();
    bc.encoder_eta = cfg.policy.encoder_eta;
    bc.encoder_steps = cfg.policy.encoder_steps;
    bc.encoder_reg_lambda = cfg.policy.encoder_reg_lambda;
    bc.head_update = cfg.policy.head_update == "full" ? HeadUpdate::FullRefit : HeadUpdate::Sgd;
    bc.alpha_schedule =
        cfg.policy.alpha_schedule == "theoretical" ? AlphaSchedule::Theoretical : AlphaSchedule::Fixed;
    bc.theory.nu = cfg.policy.theory_nu;
    bc.theory.M = cfg.policy.theory_M;
    bc.theory.delta = cfg.policy.theory_delta;
    bc.theory.kappa_sigma = cfg.policy.theory_kappa_sigma;
    bc.theory.depth = cfg.policy.encoder_depth;
    bc.theory.dim = bc.kind == PolicyKind::LinLogUcb ? bc.encoder.input_dim
                                                     : cfg.policy.encoder_output_dim;
    bc.theory.lambda = cfg.policy.design_lambda;
    bc.recompute_design = cfg.policy.recompute_design;
    bc.seed = seed;
    return bc;
}

RunTrace execute_run(const ExperimentConfig& cfg, uint64_t seed, CaseBank* bank_out,
                     std::optional<BanditState>* policy_out) {
    cfg.validate();
    BanditState policy(make_bandit_config(cfg, seed));

    RunTrace trace;
    if (cfg.env.kind == "coverage") {
        CoverageEnv env;
        env.query_dim = cfg.env.query_dim;
        env.lipschitz = cfg.env.lipschitz;
        env.p_min = cfg.env.p_min;
        env.embed_noise = cfg.env.embed_noise;
        env.seed = seed;

        std::optional<GateSpec> gate;
        if (cfg.discovery.enabled) {
            gate = GateSpec{discovery_metric_from_string(cfg.discovery.metric),
                            cfg.discovery.budget};
        }
        RunParams params;
        params.horizon = cfg.run.horizon;
        params.recall_k = cfg.policy.recall_k;
        params.top_k = cfg.policy.top_k;
        trace = run_coverage(env, policy, gate, params, seed, bank_out);
    } else {
        LatentArmEnv::Config ec;
        ec.feature_dim = cfg.env.feature_dim;
        ec.arms = cfg.env.arms;
        ec.hidden_width = cfg.env.hidden_width;
        ec.hidden_depth = cfg.env.hidden_depth;
        ec.logit_scale = cfg.env.logit_scale;
        ec.seed = seed;
        LatentArmEnv env(ec);
        trace = run_latent(env, policy, cfg.run.horizon, seed);
    }
    trace.config_json = cfg.canonical_json();
    if (policy_out) policy_out->emplace(std::move(policy));
    return trace;
}

} // namespace casebandit
