#pragma once

#include "casebandit/engine.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace casebandit {

struct EnvConfig {
    std::string kind = "coverage";
    // coverage
    std::size_t query_dim = 2;
    double lipschitz = 2.0;
    double p_min = 0.1;
    double embed_noise = 0.0;
    // latent
    std::size_t feature_dim = 8;
    std::size_t arms = 10;
    std::size_t hidden_width = 16;
    std::size_t hidden_depth = 2;
    double logit_scale = 4.0;
};

struct PolicyConfig {
    std::string kind = "neural_lin_log_ucb";
    double alpha = 0.1;
    double eta = 0.01;
    double head_lambda = 0.1;
    double design_lambda = 0.1;
    std::size_t update_interval = 32;
    std::size_t recall_k = 32;
    std::size_t top_k = 1;
    std::size_t encoder_width = 64;
    std::size_t encoder_depth = 2;
    std::size_t encoder_output_dim = 16;
    double encoder_scale = 0.0; // <= 0 means sqrt(width)
    double encoder_eta = 0.01;
    int encoder_steps = 1;
    double encoder_reg_lambda = 0.0;
    std::string head_update = "sgd";
    std::string alpha_schedule = "fixed";
    double theory_nu = 1.0;
    double theory_M = 1.0;
    double theory_delta = 0.1;
    double theory_kappa_sigma = 0.25;
    bool recompute_design = false;
};

struct RunConfig {
    uint64_t horizon = 200;
    std::vector<uint64_t> seeds = {1};
    std::size_t window = 200;
};

struct DiscoveryConfig {
    bool enabled = false;
    std::string metric = "exploit";
    double budget = 0.10;
};

struct OutputConfig {
    std::string dir = "out";
    std::vector<std::string> formats = {"csv", "json"};
};

/// Complete experiment description. An empty JSON object is a valid config;
/// unknown keys are rejected with their full path.
struct ExperimentConfig {
    EnvConfig env;
    PolicyConfig policy;
    RunConfig run;
    DiscoveryConfig discovery;
    OutputConfig output;

    void validate() const;

    /// Fully resolved canonical JSON (sorted keys, all defaults explicit).
    std::string canonical_json() const;
    /// FNV-1a 64 hash of canonical_json(), as hex.
    std::string hash() const;
};

ExperimentConfig parse_config_text(const std::string& text);
/// Reads a config file; a reproducibility manifest is accepted too and
/// unwraps to its embedded config.
ExperimentConfig load_config_file(const std::string& path);

std::string make_manifest(const ExperimentConfig& cfg, const std::string& version);

/// Builds env/policy/gate from the config and executes one seeded run.
RunTrace execute_run(const ExperimentConfig& cfg, uint64_t seed, CaseBank* bank_out = nullptr,
                     std::optional<BanditState>* policy_out = nullptr);

BanditConfig make_bandit_config(const ExperimentConfig& cfg, uint64_t seed);

std::string fnv1a_hex(const std::string& data);

} // namespace casebandit
