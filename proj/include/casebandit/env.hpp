#pragma once

#include "casebandit/casebank.hpp"
#include "casebandit/encoder.hpp"
#include "casebandit/linalg.hpp"
#include "casebandit/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace casebandit {

std::string encode_payload(const Vec& v);
Vec decode_payload(const std::string& payload);

/// Synthetic single-turn environment with oracle access to expected utility.
///
/// Queries are i.i.d. uniform on the unit cube; the utility of answering
/// query q with a retained case whose query was q' is
/// clamp(1 - lipschitz * |q - q'|, p_min, 1), so nearby cases help and even
/// an irrelevant case (or no case at all) keeps a p_min success floor.
/// embed_noise hides a trailing fraction of the query's coordinates from its
/// observable embedding, modelling an imperfect embedding model.
struct CoverageEnv {
    std::size_t query_dim = 2;
    double lipschitz = 2.0;
    double p_min = 0.1;
    double embed_noise = 0.0;
    uint64_t seed = 0;

    struct Query {
        Vec point;      // the full query, in [0,1]^d
        Vec embedding;  // observable unit-norm embedding (possibly masked)
    };

    Query sample_query(uint64_t step) const;

    /// Unit-norm embedding of a fully known point (used when retaining cases:
    /// a solved case's content is not masked).
    Vec full_embedding(const Vec& point) const;

    /// Expected utility of conditioning on `c` (nullptr = zero-shot).
    double expected_utility(const Vec& query, const Case* c) const;

    /// Bernoulli reward with the per-step coin shared across policies.
    int step_reward(double utility, uint64_t step) const;

    /// (coverage gap, best utility) against the whole bank including the
    /// zero-shot floor.
    std::pair<double, double> oracle_terms(const Vec& query, const CaseBank& bank) const;
};

/// Contextual-arm environment with a frozen hidden reward network:
/// P(r=1 | x) = sigmoid(theta* . f*(x)). Contexts are unit vectors with
/// duplicated halves. The hidden network starts from the symmetric
/// initialization, is perturbed away from it, and theta* is rescaled so the
/// latent logits have a configurable spread.
class LatentArmEnv {
public:
    struct Config {
        std::size_t feature_dim = 8; // even
        std::size_t arms = 10;
        std::size_t hidden_width = 16;
        std::size_t hidden_depth = 2;
        double logit_scale = 4.0;
        uint64_t seed = 0;
    };

    explicit LatentArmEnv(const Config& cfg);

    const Config& config() const { return cfg_; }

    std::vector<Vec> latent_contexts(uint64_t step) const;

    /// Oracle-only ground truth; never exposed to policies.
    double latent_truth(const Vec& x) const;

    int step_reward(double truth, uint64_t step) const;

    const EncoderWeights& hidden_network() const { return hidden_; }
    const Vec& theta_star() const { return theta_star_; }

private:
    Config cfg_;
    EncoderWeights hidden_;
    Vec theta_star_;
};

} // namespace casebandit
