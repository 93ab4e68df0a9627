#include "casebandit/bandit.hpp"

#include "casebandit/binio.hpp"
#include "casebandit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace casebandit {

const char* to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::NeuralLinLogUcb: return "neural_lin_log_ucb";
        case PolicyKind::LinLogUcb: return "lin_log_ucb";
        case PolicyKind::NeuralLogUcb: return "neural_log_ucb";
        case PolicyKind::NeuralLinUcb: return "neural_lin_ucb";
        case PolicyKind::NpCbr: return "np_cbr";
        case PolicyKind::Random: return "random";
        case PolicyKind::Greedy: return "greedy";
    }
    return "?";
}

PolicyKind policy_kind_from_string(const std::string& name) {
    for (PolicyKind k : {PolicyKind::NeuralLinLogUcb, PolicyKind::LinLogUcb,
                         PolicyKind::NeuralLogUcb, PolicyKind::NeuralLinUcb, PolicyKind::NpCbr,
                         PolicyKind::Random, PolicyKind::Greedy}) {
        if (name == to_string(k)) return k;
    }
    throw config_error("unknown policy kind '" + name + "'");
}

const char* to_string(DiscoveryMetric metric) {
    switch (metric) {
        case DiscoveryMetric::Explore: return "explore";
        case DiscoveryMetric::Exploit: return "exploit";
        case DiscoveryMetric::Ucb: return "ucb";
        case DiscoveryMetric::Random: return "random";
    }
    return "?";
}

DiscoveryMetric discovery_metric_from_string(const std::string& name) {
    for (DiscoveryMetric m : {DiscoveryMetric::Explore, DiscoveryMetric::Exploit,
                              DiscoveryMetric::Ucb, DiscoveryMetric::Random}) {
        if (name == to_string(m)) return m;
    }
    throw config_error("unknown discovery metric '" + name + "'");
}

void TheoryParams::validate() const {
    if (!(nu > 0.0)) throw std::invalid_argument("theory: nu must be > 0");
    if (!(M > 0.0)) throw std::invalid_argument("theory: M must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("theory: delta must be in (0,1)");
    if (!(kappa_sigma > 0.0 && kappa_sigma <= 0.25)) {
        throw std::invalid_argument("theory: kappa_sigma must be in (0, 0.25]");
    }
    if (depth < 2) throw std::invalid_argument("theory: depth must be >= 2");
    if (dim == 0) throw std::invalid_argument("theory: dim must be positive");
    if (!(lambda > 0.0)) throw std::invalid_argument("theory: lambda must be > 0");
}

double theoretical_alpha(uint64_t t, const TheoryParams& p) {
    p.validate();
    if (t == 0) throw std::invalid_argument("theoretical_alpha: t must be >= 1");
    double td = static_cast<double>(t);
    double inside = static_cast<double>(p.dim) *
                        std::log(1.0 + static_cast<double>(p.depth) * td * td / p.lambda) +
                    std::log(1.0 / p.delta);
    return (p.nu * std::sqrt(2.0 * inside) + std::sqrt(p.lambda) * p.M) / p.kappa_sigma;
}

bool discovery_decide(DiscoveryGate& gate, const ScoreBreakdown& score, Rng& rng) {
    bool budget_ok = gate.total == 0 ||
                     static_cast<double>(gate.used) / static_cast<double>(gate.total) <
                         gate.budget_fraction;
    bool fire = false;
    if (gate.metric == DiscoveryMetric::Random) {
        fire = budget_ok && rng.uniform() < gate.budget_fraction;
    } else {
        double value = 0.0;
        switch (gate.metric) {
            case DiscoveryMetric::Explore: value = score.explore; break;
            case DiscoveryMetric::Exploit: value = score.exploit; break;
            case DiscoveryMetric::Ucb: value = score.ucb; break;
            case DiscoveryMetric::Random: break;
        }
        if (budget_ok && !gate.queue.empty()) {
            // nearest-rank 10th percentile of the queued values
            std::vector<double> sorted(gate.queue.begin(), gate.queue.end());
            std::sort(sorted.begin(), sorted.end());
            std::size_t rank = static_cast<std::size_t>(
                std::ceil(0.10 * static_cast<double>(sorted.size())));
            if (rank == 0) rank = 1;
            double threshold = sorted[rank - 1];
            fire = value < threshold;
        }
        gate.queue.push_back(value);
        while (gate.queue.size() > 16) gate.queue.pop_front();
    }
    ++gate.total;
    if (fire) ++gate.used;
    return fire;
}

BanditState::BanditState(const BanditConfig& cfg) : cfg_(cfg) {
    if (!(cfg.alpha >= 0.0)) throw std::invalid_argument("bandit: alpha must be >= 0");
    if (!(cfg.eta > 0.0)) throw std::invalid_argument("bandit: eta must be > 0");
    if (cfg.head_lambda < 0.0) throw std::invalid_argument("bandit: head_lambda must be >= 0");
    if (cfg.update_interval == 0) throw std::invalid_argument("bandit: update interval must be >= 1");
    if (cfg.kind == PolicyKind::NeuralLogUcb && cfg.encoder.output_dim != 1) {
        throw std::invalid_argument("bandit: neural_log_ucb requires encoder output_dim 1");
    }

    encoder_ = init_symmetric(cfg.encoder);

    std::size_t head_dim;
    std::size_t design_dim;
    switch (cfg_.kind) {
        case PolicyKind::LinLogUcb:
            head_dim = design_dim = cfg.encoder.input_dim;
            break;
        case PolicyKind::NeuralLogUcb:
            head_dim = 1;
            design_dim = cfg.encoder.param_count();
            break;
        default:
            head_dim = design_dim = cfg.encoder.output_dim;
            break;
    }

    theta_.assign(head_dim, 0.0);
    if (cfg_.kind == PolicyKind::NeuralLogUcb) {
        theta_[0] = 1.0; // the network output itself is the logit
    } else {
        Rng rng = Rng(cfg.seed).fork(streams::kInit).fork(2);
        double sd = std::sqrt(1.0 / static_cast<double>(head_dim));
        for (double& v : theta_) v = sd * rng.normal();
    }
    design_ = design_init(design_dim, cfg.design_lambda);
}

Vec BanditState::score_features(const Vec& x) const {
    if (cfg_.kind == PolicyKind::LinLogUcb) return x;
    return forward(encoder_, x);
}

Vec BanditState::uncertainty_features(const Vec& x) const {
    if (cfg_.kind == PolicyKind::LinLogUcb) return x;
    if (cfg_.kind == PolicyKind::NeuralLogUcb) {
        Matrix jac = grad_params(encoder_, x); // 1 x p
        Vec g = jac.data;
        double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(cfg_.encoder.width));
        for (double& v : g) v *= inv_sqrt_m;
        return g;
    }
    return forward(encoder_, x);
}

double BanditState::current_alpha() const {
    if (cfg_.kind == PolicyKind::Greedy) return 0.0;
    if (cfg_.alpha_schedule == AlphaSchedule::Theoretical) {
        return theoretical_alpha(t_ + 1, cfg_.theory);
    }
    return cfg_.alpha;
}

ScoreBreakdown BanditState::score_from_features(const Vec& z_score, const Vec& z_unc) const {
    ScoreBreakdown s;
    s.exploit = dot(theta_, z_score);
    s.explore = mahalanobis(design_, z_unc);
    s.ucb = s.exploit + current_alpha() * s.explore;
    return s;
}

ScoreBreakdown BanditState::ucb_score(const Vec& x) const {
    if (cfg_.kind == PolicyKind::NeuralLogUcb) {
        return score_from_features(score_features(x), uncertainty_features(x));
    }
    Vec z = score_features(x);
    return score_from_features(z, z);
}

std::size_t BanditState::select(const std::vector<Vec>& candidates, Rng& rng,
                                ScoreBreakdown* chosen_score) const {
    if (candidates.empty()) throw std::invalid_argument("select: empty candidate list");

    if (cfg_.kind == PolicyKind::Random) {
        std::size_t idx = static_cast<std::size_t>(rng.uniform_int(candidates.size()));
        if (chosen_score) *chosen_score = ucb_score(candidates[idx]);
        return idx;
    }
    if (cfg_.kind == PolicyKind::NpCbr) {
        // candidates arrive ordered by embedding similarity
        if (chosen_score) *chosen_score = ucb_score(candidates[0]);
        return 0;
    }

    std::size_t best = 0;
    ScoreBreakdown best_score = ucb_score(candidates[0]);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        ScoreBreakdown s = ucb_score(candidates[i]);
        if (s.ucb > best_score.ucb) {
            best = i;
            best_score = s;
        }
    }
    if (chosen_score) *chosen_score = best_score;
    return best;
}

std::vector<std::size_t> BanditState::select_top_k(const std::vector<Vec>& candidates,
                                                   std::size_t k) const {
    if (candidates.empty()) throw std::invalid_argument("select_top_k: empty candidate list");
    if (k == 0 || k > candidates.size()) {
        throw std::invalid_argument("select_top_k: k must be in [1, |candidates|]");
    }
    std::vector<double> scores(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) scores[i] = ucb_score(candidates[i]).ucb;
    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    idx.resize(k);
    return idx;
}

void BanditState::update_head_sgd(const Vec& z, int reward) {
    const double r = static_cast<double>(reward);
    double margin = dot(theta_, z);
    double residual;
    if (cfg_.kind == PolicyKind::NeuralLinUcb) {
        residual = margin - r; // squared loss
    } else {
        residual = sigmoid(margin) - r; // logistic loss
    }
    for (std::size_t i = 0; i < theta_.size(); ++i) {
        theta_[i] -= cfg_.eta * (residual * z[i] + cfg_.head_lambda * theta_[i]);
    }
    check_finite(theta_, "head update");
}

void BanditState::update(const Vec& x, const Vec& z_selected, int reward) {
    if (reward != 0 && reward != 1) throw std::invalid_argument("update: reward must be 0 or 1");

    if (cfg_.kind != PolicyKind::NpCbr && cfg_.kind != PolicyKind::Random) {
        if (cfg_.kind == PolicyKind::NeuralLogUcb) {
            rank_one_update(design_, uncertainty_features(x));
        } else {
            rank_one_update(design_, z_selected);
            if (cfg_.head_update == HeadUpdate::FullRefit) {
                feature_history_.emplace_back(z_selected, reward);
                theta_ = fit_head_full(feature_history_, cfg_.head_lambda);
            } else {
                update_head_sgd(z_selected, reward);
            }
        }
        epoch_buffer_.emplace_back(x, reward);
        if (cfg_.recompute_design) raw_history_.emplace_back(x, reward);
    }
    ++t_;
}

void BanditState::update_encoder_if_due() {
    if (t_ % cfg_.update_interval != 0 || epoch_buffer_.empty()) return;
    if (cfg_.kind == PolicyKind::LinLogUcb || cfg_.kind == PolicyKind::NpCbr ||
        cfg_.kind == PolicyKind::Random) {
        epoch_buffer_.clear();
        return;
    }
    encoder_epoch_update(encoder_, theta_, epoch_buffer_, cfg_.encoder_eta,
                         cfg_.encoder_reg_lambda, cfg_.encoder_steps);
    epoch_buffer_.clear();

    if (cfg_.recompute_design) {
        // rebuild A from all stored raw inputs with the freshly updated weights
        design_ = design_init(design_.dim, cfg_.design_lambda);
        for (const auto& [x, r] : raw_history_) {
            rank_one_update(design_, uncertainty_features(x));
        }
    }
}

Vec fit_head_full(const std::vector<std::pair<Vec, int>>& history, double lambda, double tol,
                  int max_iters) {
    if (history.empty()) throw std::invalid_argument("fit_head_full: empty history");
    if (!(lambda > 0.0)) throw std::invalid_argument("fit_head_full: lambda must be > 0");
    const std::size_t d = history.front().first.size();
    for (const auto& [z, r] : history) {
        if (z.size() != d) throw std::invalid_argument("fit_head_full: inconsistent dimensions");
        if (r != 0 && r != 1) throw std::invalid_argument("fit_head_full: labels must be 0 or 1");
    }

    Vec theta(d, 0.0);
    auto objective = [&](const Vec& th) {
        double obj = 0.5 * lambda * dot(th, th);
        for (const auto& [z, r] : history) {
            double m = dot(th, z);
            // -log sigma(m) = log(1 + e^{-m}), computed stably
            double nll_pos = m >= 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
            obj += r ? nll_pos : nll_pos + m;
        }
        return obj;
    };
    auto gradient = [&](const Vec& th) {
        Vec g(d, 0.0);
        for (const auto& [z, r] : history) {
            double residual = sigmoid(dot(th, z)) - static_cast<double>(r);
            for (std::size_t i = 0; i < d; ++i) g[i] += residual * z[i];
        }
        for (std::size_t i = 0; i < d; ++i) g[i] += lambda * th[i];
        return g;
    };
    auto inf_norm = [](const Vec& v) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    };

    double gnorm = inf_norm(gradient(theta));
    for (int iter = 0; iter < max_iters; ++iter) {
        if (gnorm <= tol) return theta;

        Vec g = gradient(theta);
        // Newton system: (H + lambda I) step = -g with H the logistic Hessian
        Matrix H(d, d, 0.0);
        for (const auto& [z, r] : history) {
            (void)r;
            double p = sigmoid(dot(theta, z));
            double w = p * (1.0 - p);
            for (std::size_t i = 0; i < d; ++i) {
                if (z[i] == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) H(i, j) += w * z[i] * z[j];
            }
        }
        for (std::size_t i = 0; i < d; ++i) H(i, i) += lambda;

        // Cholesky solve H step = g
        Matrix L(d, d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                double s = H(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
                if (i == j) {
                    if (s <= 0.0) throw numerical_error("fit_head_full: Hessian not PD");
                    L(i, i) = std::sqrt(s);
                } else {
                    L(i, j) = s / L(j, j);
                }
            }
        }
        Vec y(d), step(d);
        for (std::size_t i = 0; i < d; ++i) {
            double s = g[i];
            for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * y[k];
            y[i] = s / L(i, i);
        }
        for (std::size_t i = d; i-- > 0;) {
            double s = y[i];
            for (std::size_t k = i + 1; k < d; ++k) s -= L(k, i) * step[k];
            step[i] = s / L(i, i);
        }

        // backtracking line search on the objective
        double obj = objective(theta);
        double scale = 1.0;
        Vec trial(d);
        for (int back = 0; back < 30; ++back) {
            for (std::size_t i = 0; i < d; ++i) trial[i] = theta[i] - scale * step[i];
            if (objective(trial) <= obj) break;
            scale *= 0.5;
        }
        for (std::size_t i = 0; i < d; ++i) theta[i] -= scale * step[i];
        gnorm = inf_norm(gradient(theta));
    }
    if (gnorm <= tol) return theta;
    throw convergence_error("fit_head_full: gradient norm " + std::to_string(gnorm) +
                                " above tolerance after iteration cap",
                            gnorm);
}

static constexpr uint32_t kCheckpointMagic = 0x43425043; // "CBPC"

namespace {

void write_pairs(BinWriter& out, const std::vector<std::pair<Vec, int>>& pairs) {
    out.u64(pairs.size());
    for (const auto& [v, r] : pairs) {
        out.f64s(v);
        out.u32(static_cast<uint32_t>(r));
    }
}

std::vector<std::pair<Vec, int>> read_pairs(BinReader& in) {
    std::vector<std::pair<Vec, int>> pairs(in.u64());
    for (auto& [v, r] : pairs) {
        v = in.f64s();
        r = static_cast<int>(in.u32());
    }
    return pairs;
}

} // namespace

void BanditState::save_checkpoint(const std::string& path) const {
    BinWriter out(path);
    out.u32(kCheckpointMagic);
    out.u32(1);
    out.str(to_string(cfg_.kind));
    out.f64(cfg_.alpha);
    out.f64(cfg_.eta);
    out.f64(cfg_.head_lambda);
    out.f64(cfg_.design_lambda);
    out.u64(cfg_.update_interval);
    out.f64(cfg_.encoder_eta);
    out.u32(static_cast<uint32_t>(cfg_.encoder_steps));
    out.f64(cfg_.encoder_reg_lambda);
    out.u32(cfg_.head_update == HeadUpdate::FullRefit ? 1 : 0);
    out.u32(cfg_.alpha_schedule == AlphaSchedule::Theoretical ? 1 : 0);
    out.f64(cfg_.theory.nu);
    out.f64(cfg_.theory.M);
    out.f64(cfg_.theory.delta);
    out.f64(cfg_.theory.kappa_sigma);
    out.u64(cfg_.theory.depth);
    out.u64(cfg_.theory.dim);
    out.f64(cfg_.theory.lambda);
    out.u32(cfg_.recompute_design ? 1 : 0);
    out.u64(cfg_.seed);

    out.u32(static_cast<uint32_t>(cfg_.encoder.input_dim));
    out.u32(static_cast<uint32_t>(cfg_.encoder.width));
    out.u32(static_cast<uint32_t>(cfg_.encoder.depth));
    out.u32(static_cast<uint32_t>(cfg_.encoder.output_dim));
    out.f64(cfg_.encoder.scale);
    out.u64(cfg_.encoder.seed);
    for (const Matrix& W : encoder_.layers) out.f64s(W.data);
    for (const Matrix& W : encoder_.initial) out.f64s(W.data);

    out.f64s(theta_);
    out.u64(design_.dim);
    out.f64(design_.lambda);
    out.u64(design_.update_count);
    out.f64s(design_.inv.data);
    out.u64(t_);
    write_pairs(out, epoch_buffer_);
    write_pairs(out, feature_history_);
    write_pairs(out, raw_history_);
    if (!out.good()) throw parse_error("failed writing " + path);
}

BanditState BanditState::load_checkpoint(const std::string& path) {
    BinReader in(path);
    if (in.u32() != kCheckpointMagic) throw parse_error("not a policy checkpoint: " + path);
    if (in.u32() != 1) throw parse_error("unsupported checkpoint version: " + path);

    BanditConfig cfg;
    cfg.kind = policy_kind_from_string(in.str());
    cfg.alpha = in.f64();
    cfg.eta = in.f64();
    cfg.head_lambda = in.f64();
    cfg.design_lambda = in.f64();
    cfg.update_interval = in.u64();
    cfg.encoder_eta = in.f64();
    cfg.encoder_steps = static_cast<int>(in.u32());
    cfg.encoder_reg_lambda = in.f64();
    cfg.head_update = in.u32() ? HeadUpdate::FullRefit : HeadUpdate::Sgd;
    cfg.alpha_schedule = in.u32() ? AlphaSchedule::Theoretical : AlphaSchedule::Fixed;
    cfg.theory.nu = in.f64();
    cfg.theory.M = in.f64();
    cfg.theory.delta = in.f64();
    cfg.theory.kappa_sigma = in.f64();
    cfg.theory.depth = in.u64();
    cfg.theory.dim = in.u64();
    cfg.theory.lambda = in.f64();
    cfg.recompute_design = in.u32() != 0;
    cfg.seed = in.u64();

    cfg.encoder.input_dim = in.u32();
    cfg.encoder.width = in.u32();
    cfg.encoder.depth = in.u32();
    cfg.encoder.output_dim = in.u32();
    cfg.encoder.scale = in.f64();
    cfg.encoder.seed = in.u64();

    BanditState state(cfg);
    for (Matrix& W : state.encoder_.layers) {
        W.data = in.f64s();
        if (W.data.size() != W.rows * W.cols) throw parse_error("bad layer size in " + path);
    }
    for (Matrix& W : state.encoder_.initial) {
        W.data = in.f64s();
        if (W.data.size() != W.rows * W.cols) throw parse_error("bad layer size in " + path);
    }
    state.theta_ = in.f64s();
    std::size_t design_dim = in.u64();
    double design_lambda = in.f64();
    uint64_t updates = in.u64();
    state.design_ = design_init(design_dim, design_lambda);
    state.design_.inv.data = in.f64s();
    if (state.design_.inv.data.size() != design_dim * design_dim) {
        throw parse_error("bad design matrix size in " + path);
    }
    state.design_.update_count = updates;
    state.t_ = in.u64();
    state.epoch_buffer_ = read_pairs(in);
    state.feature_history_ = read_pairs(in);
    state.raw_history_ = read_pairs(in);
    return state;
}

bool BanditState::operator==(const BanditState& other) const {
    auto layers_equal = [](const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].data != b[i].data) return false;
        }
        return true;
    };
    return cfg_.kind == other.cfg_.kind && theta_ == other.theta_ &&
           design_.inv.data == other.design_.inv.data &&
           design_.update_count == other.design_.update_count && t_ == other.t_ &&
           epoch_buffer_ == other.epoch_buffer_ &&
           feature_history_ == other.feature_history_ && raw_history_ == other.raw_history_ &&
           layers_equal(encoder_.layers, other.encoder_.layers) &&
           layers_equal(encoder_.initial, other.encoder_.initial);
}

} // namespace casebandit
