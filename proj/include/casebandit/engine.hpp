#pragma once

#include "casebandit/bandit.hpp"
#include "casebandit/casebank.hpp"
#include "casebandit/env.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace casebandit {

struct StepRecord {
    uint64_t t = 0;
    uint64_t query_id = 0;
    std::vector<int64_t> candidate_ids;
    int64_t chosen_id = -1; // -1 = none (zero-shot or discovery)
    ScoreBreakdown score;
    int reward = 0;
    double oracle_delta = 0.0;   // coverage shortfall of the candidate pool
    double oracle_rho = 0.0;     // retrieval regret within the pool
    double bank_delta = 0.0;     // coverage gap against the whole bank
    double chosen_utility = 0.0;
    uint64_t bank_size_after = 0;
    bool discovery = false;
};

struct RunTrace {
    std::string env_kind;    // "coverage" or "latent"
    std::string config_json; // canonical config snapshot, may be empty
    uint64_t seed = 0;
    std::vector<StepRecord> records;
    double wall_time_seconds = 0.0;
};

struct RunParams {
    uint64_t horizon = 200;
    std::size_t recall_k = 32;
    std::size_t top_k = 1;
};

struct GateSpec {
    DiscoveryMetric metric = DiscoveryMetric::Exploit;
    double budget_fraction = 0.10;
};

/// Full retrieval loop on the coverage environment: recall, score, select
/// (or discover), observe Bernoulli feedback, update the policy, retain on
/// success. `bank_out`, when given, receives the final case bank.
RunTrace run_coverage(const CoverageEnv& env, BanditState& policy,
                      const std::optional<GateSpec>& gate, const RunParams& params,
                      uint64_t seed, CaseBank* bank_out = nullptr);

/// Pure contextual-arm loop on the latent environment (no case bank).
RunTrace run_latent(const LatentArmEnv& env, BanditState& policy, uint64_t horizon,
                    uint64_t seed);

/// Cumulative pseudo-regret series R_t.
std::vector<double> pseudo_regret(const RunTrace& trace);

/// Per-step (coverage gap, retrieval regret) series; verifies the
/// decomposition identity on coverage traces and throws consistency_error on
/// violation.
std::pair<std::vector<double>, std::vector<double>> decompose(const RunTrace& trace);

/// Sliding-window mean reward, one value per t in [window, T].
std::vector<double> success_curve(const RunTrace& trace, std::size_t window);

void write_trace_csv(const RunTrace& trace, const std::string& path);
RunTrace read_trace_csv(const std::string& path);

/// Documented column order of the trace CSV.
const std::vector<std::string>& trace_columns();

} // namespace casebandit
