#pragma once

#include "casebandit/encoder.hpp"
#include "casebandit/linalg.hpp"
#include "casebandit/rng.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace casebandit {

enum class PolicyKind {
    NeuralLinLogUcb, // deep features, logistic head, UCB exploration
    LinLogUcb,       // raw contexts as features, logistic head
    NeuralLogUcb,    // scalar network output as the logit, gradient features for exploration
    NeuralLinUcb,    // deep features, squared-loss head
    NpCbr,           // fixed similarity order, no learning
    Random,
    Greedy,          // NeuralLinLogUcb with alpha forced to 0
};

const char* to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);

struct ScoreBreakdown {
    double exploit = 0.0;
    double explore = 0.0;
    double ucb = 0.0;
};

/// Constants of the theoretical exploration schedule.
struct TheoryParams {
    double nu = 1.0;          // sub-Gaussian noise scale
    double M = 1.0;           // bound on |theta*|
    double delta = 0.1;       // failure probability
    double kappa_sigma = 0.25; // strong monotonicity constant of the sigmoid
    std::size_t depth = 2;    // L
    std::size_t dim = 16;     // feature dimension d
    double lambda = 0.1;

    void validate() const;
};

/// alpha_t = (1/kappa) * (nu * sqrt(2 (d log(1 + L t^2 / lambda) + log(1/delta))) + sqrt(lambda) M)
double theoretical_alpha(uint64_t t, const TheoryParams& p);

enum class DiscoveryMetric { Explore, Exploit, Ucb, Random };

const char* to_string(DiscoveryMetric metric);
DiscoveryMetric discovery_metric_from_string(const std::string& name);

/// Budgeted trigger for oracle discovery steps: fire when the configured
/// metric drops strictly below the 10th percentile (nearest rank) of the
/// last 16 observed values, as long as used/total stays under the budget.
struct DiscoveryGate {
    DiscoveryMetric metric = DiscoveryMetric::Exploit;
    double budget_fraction = 0.10;
    std::deque<double> queue; // most recent 16 metric values
    uint64_t used = 0;
    uint64_t total = 0;
};

bool discovery_decide(DiscoveryGate& gate, const ScoreBreakdown& score, Rng& rng);

enum class HeadUpdate { Sgd, FullRefit };
enum class AlphaSchedule { Fixed, Theoretical };

struct BanditConfig {
    PolicyKind kind = PolicyKind::NeuralLinLogUcb;
    double alpha = 0.1;
    double eta = 0.01;           // head learning rate
    double head_lambda = 0.1;    // L2 strength in the head updates
    double design_lambda = 0.1;  // regularization of the design matrix
    std::size_t update_interval = 32; // H, encoder epoch schedule
    EncoderConfig encoder;       // input_dim is set from the environment
    double encoder_eta = 0.01;
    int encoder_steps = 1;
    double encoder_reg_lambda = 0.0;
    HeadUpdate head_update = HeadUpdate::Sgd;
    AlphaSchedule alpha_schedule = AlphaSchedule::Fixed;
    TheoryParams theory;
    bool recompute_design = false; // rebuild A with current weights after each epoch
    uint64_t seed = 0;
};

/// Mutable policy state: encoder weights, linear head, design-matrix inverse
/// and the per-epoch buffer. One instance per run; never shared.
class BanditState {
public:
    explicit BanditState(const BanditConfig& cfg);

    const BanditConfig& config() const { return cfg_; }
    PolicyKind kind() const { return cfg_.kind; }
    uint64_t step_count() const { return t_; }
    const Vec& theta() const { return theta_; }
    Vec& theta_mut() { return theta_; }
    const PDInverse& design() const { return design_; }
    PDInverse& design_mut() { return design_; }
    const EncoderWeights& encoder() const { return encoder_; }
    std::size_t epoch_buffer_size() const { return epoch_buffer_.size(); }

    /// Features driving the exploit term.
    Vec score_features(const Vec& x) const;
    /// Features driving the design matrix / exploration term (differs from
    /// score_features only for the gradient-feature baseline).
    Vec uncertainty_features(const Vec& x) const;

    double current_alpha() const;

    ScoreBreakdown ucb_score(const Vec& x) const;
    ScoreBreakdown score_from_features(const Vec& z_score, const Vec& z_unc) const;

    /// Argmax of the UCB over candidates; ties break to the lowest index.
    /// Random draws uniformly, NpCbr takes index 0, Greedy scores with
    /// alpha = 0.
    std::size_t select(const std::vector<Vec>& candidates, Rng& rng,
                       ScoreBreakdown* chosen_score = nullptr) const;

    /// k distinct indices by descending UCB, ties by ascending index.
    std::vector<std::size_t> select_top_k(const std::vector<Vec>& candidates, std::size_t k) const;

    /// One observation step: head update (per policy kind), design update
    /// with the selection-time feature, and epoch buffering. x is the raw
    /// context the feature z was computed from.
    void update(const Vec& x, const Vec& z_selected, int reward);

    /// Runs an encoder epoch when t is a multiple of H and the buffer is
    /// nonempty; theta is held fixed. Clears the buffer.
    void update_encoder_if_due();

    void save_checkpoint(const std::string& path) const;
    static BanditState load_checkpoint(const std::string& path);

    bool operator==(const BanditState& other) const;

private:
    void update_head_sgd(const Vec& z, int reward);

    BanditConfig cfg_;
    EncoderWeights encoder_;
    Vec theta_;
    PDInverse design_;
    uint64_t t_ = 0;
    std::vector<std::pair<Vec, int>> epoch_buffer_; // raw inputs since last epoch
    std::vector<std::pair<Vec, int>> feature_history_; // (z, r), kept for full head refits
    std::vector<std::pair<Vec, int>> raw_history_;     // kept for design recompute mode
};

/// Regularized logistic regression head fit by damped Newton iterations,
/// run until the objective gradient's infinity norm is at most `tol`.
/// Throws convergence_error (carrying the achieved norm) past `max_iters`.
Vec fit_head_full(const std::vector<std::pair<Vec, int>>& history, double lambda,
                  double tol = 1e-8, int max_iters = 100);

} // namespace casebandit
