#include "casebandit/engine.hpp"

#include "casebandit/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace casebandit {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct PoolScores {
    std::vector<ScoreBreakdown> breakdowns;
    std::size_t argmax_exploit = 0;
    std::size_t argmax_explore = 0;
    std::size_t argmax_ucb = 0;
};

PoolScores score_pool(const BanditState& policy, const std::vector<Vec>& contexts) {
    PoolScores ps;
    ps.breakdowns.reserve(contexts.size());
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        ScoreBreakdown s = policy.ucb_score(contexts[i]);
        if (i == 0 || s.exploit > ps.breakdowns[ps.argmax_exploit].exploit) ps.argmax_exploit = i;
        if (i == 0 || s.explore > ps.breakdowns[ps.argmax_explore].explore) ps.argmax_explore = i;
        if (i == 0 || s.ucb > ps.breakdowns[ps.argmax_ucb].ucb) ps.argmax_ucb = i;
        ps.breakdowns.push_back(s);
    }
    return ps;
}

// The gate watches the best value of its metric over the pool ("is any case
// believed useful?"), so hand it the breakdown of that argmax candidate.
ScoreBreakdown gate_score(const PoolScores& ps, DiscoveryMetric metric) {
    switch (metric) {
        case DiscoveryMetric::Explore: return ps.breakdowns[ps.argmax_explore];
        case DiscoveryMetric::Exploit: return ps.breakdowns[ps.argmax_exploit];
        case DiscoveryMetric::Ucb: return ps.breakdowns[ps.argmax_ucb];
        case DiscoveryMetric::Random: return ps.breakdowns[ps.argmax_ucb];
    }
    return {};
}

} // namespace

RunTrace run_coverage(const CoverageEnv& env, BanditState& policy,
                      const std::optional<GateSpec>& gate_spec, const RunParams& params,
                      uint64_t seed, CaseBank* bank_out) {
    if (params.horizon == 0) throw std::invalid_argument("run: horizon must be >= 1");
    if (params.recall_k == 0) throw std::invalid_argument("run: recall_k must be >= 1");
    if (params.top_k == 0 || params.top_k > params.recall_k) {
        throw std::invalid_argument("run: top_k must be in [1, recall_k]");
    }
    if (policy.config().encoder.input_dim != 4 * env.query_dim &&
        policy.kind() != PolicyKind::Random && policy.kind() != PolicyKind::NpCbr) {
        throw config_error("policy input dimension " +
                           std::to_string(policy.config().encoder.input_dim) +
                           " does not match context dimension " + std::to_string(4 * env.query_dim));
    }

    auto start = std::chrono::steady_clock::now();
    RunTrace trace;
    trace.env_kind = "coverage";
    trace.seed = seed;
    trace.records.reserve(params.horizon);

    CaseBank bank(env.query_dim);
    Rng policy_rng = Rng(seed).fork(streams::kPolicy);
    DiscoveryGate gate;
    if (gate_spec) {
        gate.metric = gate_spec->metric;
        gate.budget_fraction = gate_spec->budget_fraction;
    }

    for (uint64_t t = 1; t <= params.horizon; ++t) {
        CoverageEnv::Query query = env.sample_query(t);
        std::vector<std::size_t> pool = bank.recall(query.embedding, params.recall_k);

        StepRecord rec;
        rec.t = t;
        rec.query_id = t;
        auto [bank_delta, bank_best] = env.oracle_terms(query.point, bank);
        rec.bank_delta = bank_delta;

        if (pool.empty()) {
            // zero-shot fallback: the floor is the only option
            rec.chosen_id = -1;
            rec.chosen_utility = env.p_min;
            rec.oracle_delta = 1.0 - env.p_min;
            rec.oracle_rho = 0.0;
            rec.reward = env.step_reward(env.p_min, t);
            if (rec.reward == 1) {
                bank.retain(encode_payload(query.point), "zero-shot", 1,
                            env.full_embedding(query.point), t);
            }
            rec.bank_size_after = bank.size();
            trace.records.push_back(std::move(rec));
            continue;
        }

        std::vector<Vec> contexts;
        contexts.reserve(pool.size());
        std::vector<double> utilities(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            const Case& c = bank.at(pool[i]);
            contexts.push_back(context_features(query.embedding, c.embedding));
            utilities[i] = env.expected_utility(query.point, &c);
            rec.candidate_ids.push_back(static_cast<int64_t>(c.id));
        }
        double pool_best = *std::max_element(utilities.begin(), utilities.end());

        if (gate_spec) {
            PoolScores ps = score_pool(policy, contexts);
            if (discovery_decide(gate, gate_score(ps, gate.metric), policy_rng)) {
                // oracle discovery: retain a perfect case for this query
                rec.discovery = true;
                rec.chosen_id = -1;
                rec.score = gate_score(ps, gate.metric);
                rec.chosen_utility = 1.0;
                rec.oracle_delta = 0.0;
                rec.oracle_rho = 0.0;
                rec.reward = 1;
                bank.retain(encode_payload(query.point), "discovery", 1,
                            env.full_embedding(query.point), t);
                rec.bank_size_after = bank.size();
                trace.records.push_back(std::move(rec));
                continue;
            }
        }

        std::vector<std::size_t> picked;
        std::size_t k = std::min(params.top_k, pool.size());
        if (k == 1) {
            ScoreBreakdown chosen_score;
            picked.push_back(policy.select(contexts, policy_rng, &chosen_score));
            rec.score = chosen_score;
        } else {
            picked = policy.select_top_k(contexts, k);
            rec.score = policy.ucb_score(contexts[picked.front()]);
        }

        // with several cases in context, the best one drives the outcome
        double util = 0.0;
        for (std::size_t idx : picked) util = std::max(util, utilities[idx]);
        rec.chosen_id = static_cast<int64_t>(bank.at(pool[picked.front()]).id);
        rec.chosen_utility = util;
        rec.oracle_delta = 1.0 - pool_best;
        rec.oracle_rho = pool_best - util;
        rec.reward = env.step_reward(util, t);

        for (std::size_t idx : picked) {
            policy.update(contexts[idx], policy.score_features(contexts[idx]), rec.reward);
        }
        policy.update_encoder_if_due();

        if (rec.reward == 1) {
            bank.retain(encode_payload(query.point), encode_payload(query.point), 1,
                        env.full_embedding(query.point), t);
        }
        rec.bank_size_after = bank.size();
        trace.records.push_back(std::move(rec));
    }

    trace.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (bank_out) *bank_out = std::move(bank);
    return trace;
}

RunTrace run_latent(const LatentArmEnv& env, BanditState& policy, uint64_t horizon,
                    uint64_t seed) {
    if (horizon == 0) throw std::invalid_argument("run: horizon must be >= 1");
    if (policy.config().encoder.input_dim != env.config().feature_dim &&
        policy.kind() != PolicyKind::Random) {
        throw config_error("policy input dimension does not match latent feature dimension");
    }

    auto start = std::chrono::steady_clock::now();
    RunTrace trace;
    trace.env_kind = "latent";
    trace.seed = seed;
    trace.records.reserve(horizon);
    Rng policy_rng = Rng(seed).fork(streams::kPolicy);

    for (uint64_t t = 1; t <= horizon; ++t) {
        std::vector<Vec> contexts = env.latent_contexts(t);
        std::vector<double> truths(contexts.size());
        double best = 0.0;
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            truths[i] = env.latent_truth(contexts[i]);
            best = std::max(best, truths[i]);
        }

        StepRecord rec;
        rec.t = t;
        rec.query_id = t;
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            rec.candidate_ids.push_back(static_cast<int64_t>(i));
        }

        ScoreBreakdown score;
        std::size_t idx = policy.select(contexts, policy_rng, &score);
        rec.score = score;
        rec.chosen_id = static_cast<int64_t>(idx);
        rec.chosen_utility = truths[idx];
        rec.oracle_delta = 0.0;
        rec.oracle_rho = best - truths[idx];
        rec.reward = env.step_reward(truths[idx], t);

        policy.update(contexts[idx], policy.score_features(contexts[idx]), rec.reward);
        policy.update_encoder_if_due();

        rec.bank_size_after = 0;
        trace.records.push_back(std::move(rec));
    }

    trace.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return trace;
}

std::vector<double> pseudo_regret(const RunTrace& trace) {
    std::vector<double> series;
    series.reserve(trace.records.size());
    double acc = 0.0;
    for (const StepRecord& r : trace.records) {
        acc += r.oracle_delta + r.oracle_rho;
        series.push_back(acc);
    }
    return series;
}

std::pair<std::vector<double>, std::vector<double>> decompose(const RunTrace& trace) {
    std::vector<double> deltas, rhos;
    deltas.reserve(trace.records.size());
    rhos.reserve(trace.records.size());
    for (const StepRecord& r : trace.records) {
        if (trace.env_kind == "coverage") {
            double lhs = r.oracle_delta + r.oracle_rho;
            double rhs = 1.0 - r.chosen_utility;
            if (std::abs(lhs - rhs) > 1e-9) {
                throw consistency_error("regret decomposition identity violated at t=" +
                                        std::to_string(r.t) + ": delta+rho=" + std::to_string(lhs) +
                                        " vs 1-utility=" + std::to_string(rhs));
            }
        }
        deltas.push_back(r.oracle_delta);
        rhos.push_back(r.oracle_rho);
    }
    return {std::move(deltas), std::move(rhos)};
}

std::vector<double> success_curve(const RunTrace& trace, std::size_t window) {
    const std::size_t T = trace.records.size();
    if (window == 0 || window > T) {
        throw std::invalid_argument("success_curve: window must be in [1, T]");
    }
    std::vector<double> out;
    out.reserve(T - window + 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < T; ++i) {
        acc += trace.records[i].reward;
        if (i + 1 >= window) {
            out.push_back(acc / static_cast<double>(window));
            acc -= trace.records[i + 1 - window].reward;
        }
    }
    return out;
}

const std::vector<std::string>& trace_columns() {
    static const std::vector<std::string> cols = {
        "t",           "query_id", "candidate_ids", "chosen_id",
        "exploit",     "explore",  "ucb",           "reward",
        "oracle_delta", "oracle_rho", "bank_delta", "chosen_utility",
        "bank_size_after", "discovery"};
    return cols;
}

void write_trace_csv(const RunTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw parse_error("cannot open for writing: " + path);
    out << "# casebandit-trace v1\n";
    out << "# env " << trace.env_kind << "\n";
    out << "# seed " << trace.seed << "\n";
    out << "# config " << (trace.config_json.empty() ? "{}" : trace.config_json) << "\n";
    const auto& cols = trace_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << "\n";
    for (const StepRecord& r : trace.records) {
        out << r.t << ',' << r.query_id << ',';
        for (std::size_t i = 0; i < r.candidate_ids.size(); ++i) {
            if (i) out << ';';
            out << r.candidate_ids[i];
        }
        out << ',' << r.chosen_id << ',' << fmt(r.score.exploit) << ',' << fmt(r.score.explore)
            << ',' << fmt(r.score.ucb) << ',' << r.reward << ',' << fmt(r.oracle_delta) << ','
            << fmt(r.oracle_rho) << ',' << fmt(r.bank_delta) << ',' << fmt(r.chosen_utility) << ','
            << r.bank_size_after << ',' << (r.discovery ? 1 : 0) << "\n";
    }
    if (!out) throw parse_error("failed writing " + path);
}

RunTrace read_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open for reading: " + path);
    RunTrace trace;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.rfind("# env ", 0) == 0) {
            trace.env_kind = line.substr(6);
            continue;
        }
        if (line.rfind("# seed ", 0) == 0) {
            trace.seed = std::stoull(line.substr(7));
            continue;
        }
        if (line.rfind("# config ", 0) == 0) {
            trace.config_json = line.substr(9);
            continue;
        }
        if (!line.empty() && line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true; // column header row
            continue;
        }
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != trace_columns().size()) {
            throw parse_error("wrong number of columns", line_no);
        }
        try {
            StepRecord r;
            r.t = std::stoull(fields[0]);
            r.query_id = std::stoull(fields[1]);
            if (!fields[2].empty()) {
                std::size_t s = 0;
                for (std::size_t i = 0; i <= fields[2].size(); ++i) {
                    if (i == fields[2].size() || fields[2][i] == ';') {
                        r.candidate_ids.push_back(std::stoll(fields[2].substr(s, i - s)));
                        s = i + 1;
                    }
                }
            }
            r.chosen_id = std::stoll(fields[3]);
            r.score.exploit = std::stod(fields[4]);
            r.score.explore = std::stod(fields[5]);
            r.score.ucb = std::stod(fields[6]);
            r.reward = std::stoi(fields[7]);
            r.oracle_delta = std::stod(fields[8]);
            r.oracle_rho = std::stod(fields[9]);
            r.bank_delta = std::stod(fields[10]);
            r.chosen_utility = std::stod(fields[11]);
            r.bank_size_after = std::stoull(fields[12]);
            r.discovery = fields[13] == "1";
            trace.records.push_back(std::move(r));
        } catch (const std::exception&) {
            throw parse_error("malformed trace row", line_no);
        }
    }
    return trace;
}

} // namespace casebandit
