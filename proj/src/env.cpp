#include "casebandit/env.hpp"

#include "casebandit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace casebandit {

std::string encode_payload(const Vec& v) {
    std::string out;
    char buf[32];
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        out += buf;
    }
    return out;
}

Vec decode_payload(const std::string& payload) {
    Vec v;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= payload.size(); ++i) {
        if (i == payload.size() || payload[i] == ',') {
            std::string tok = payload.substr(start, i - start);
            try {
                std::size_t used = 0;
                double x = std::stod(tok, &used);
                if (used != tok.size()) throw std::invalid_argument(tok);
                v.push_back(x);
            } catch (const std::exception&) {
                throw parse_error("corrupt numeric payload near '" + tok + "'");
            }
            start = i + 1;
        }
    }
    return v;
}

static Vec normalize_or_basis(Vec v) {
    double n = norm2(v);
    if (n == 0.0) {
        // degenerate (fully masked) embedding; fall back to a fixed direction
        v.assign(v.size(), 0.0);
        v[0] = 1.0;
        return v;
    }
    for (double& x : v) x /= n;
    return v;
}

CoverageEnv::Query CoverageEnv::sample_query(uint64_t step) const {
    Rng rng = Rng::at(seed, streams::kQuery, step);
    Query q;
    q.point.resize(query_dim);
    for (double& x : q.point) x = rng.uniform();

    Vec masked = q.point;
    std::size_t hidden = static_cast<std::size_t>(
        std::ceil(embed_noise * static_cast<double>(query_dim)));
    hidden = std::min(hidden, query_dim);
    for (std::size_t i = query_dim - hidden; i < query_dim; ++i) masked[i] = 0.0;
    q.embedding = normalize_or_basis(std::move(masked));
    return q;
}

Vec CoverageEnv::full_embedding(const Vec& point) const {
    if (point.size() != query_dim) {
        throw std::invalid_argument("full_embedding: dimension mismatch");
    }
    return normalize_or_basis(point);
}

double CoverageEnv::expected_utility(const Vec& query, const Case* c) const {
    if (c == nullptr) return p_min;
    Vec qc = decode_payload(c->query_payload);
    if (qc.size() != query.size()) {
        throw parse_error("case payload dimension does not match query");
    }
    double dist2 = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) {
        double d = query[i] - qc[i];
        dist2 += d * d;
    }
    double u = 1.0 - lipschitz * std::sqrt(dist2);
    return std::clamp(u, p_min, 1.0);
}

int CoverageEnv::step_reward(double utility, uint64_t step) const {
    double u = Rng::at(seed, streams::kReward, step).uniform();
    return u < utility ? 1 : 0;
}

std::pair<double, double> CoverageEnv::oracle_terms(const Vec& query, const CaseBank& bank) const {
    double best = p_min; // the zero-shot option is always available
    for (const Case& c : bank.cases()) {
        best = std::max(best, expected_utility(query, &c));
    }
    return {1.0 - best, best};
}

LatentArmEnv::LatentArmEnv(const Config& cfg) : cfg_(cfg) {
    if (cfg.feature_dim == 0 || cfg.feature_dim % 2 != 0) {
        throw std::invalid_argument("LatentArmEnv: feature_dim must be a positive even integer");
    }
    if (cfg.arms == 0) throw std::invalid_argument("LatentArmEnv: arms must be positive");

    EncoderConfig hc;
    hc.input_dim = cfg.feature_dim;
    hc.width = cfg.hidden_width;
    hc.depth = cfg.hidden_depth;
    hc.output_dim = cfg.feature_dim;
    hc.seed = Rng(cfg.seed).fork(streams::kHidden).next_u64();
    hidden_ = init_symmetric(hc);

    // perturb the frozen truth network away from the symmetric start so the
    // latent reward varies across contexts
    Rng rng = Rng(cfg.seed).fork(streams::kHidden).fork(1);
    const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_width));
    for (Matrix& W : hidden_.layers) {
        for (double& v : W.data) v += sd * rng.normal();
    }

    theta_star_.resize(cfg.feature_dim);
    for (double& v : theta_star_) v = rng.normal();
    double n = norm2(theta_star_);
    for (double& v : theta_star_) v /= n;

    // rescale theta* so the logit spread over random contexts matches
    // logit_scale
    Rng calib = Rng(cfg.seed).fork(streams::kCalibration);
    const std::size_t probes = 512;
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < probes; ++i) {
        Vec u(cfg.feature_dim / 2);
        for (double& x : u) x = calib.normal();
        double un = norm2(u);
        Vec x(cfg.feature_dim);
        for (std::size_t j = 0; j < u.size(); ++j) {
            double v = u[j] / (un * std::sqrt(2.0));
            x[j] = v;
            x[j + u.size()] = v;
        }
        double logit = dot(theta_star_, forward(hidden_, x));
        sum += logit;
        sumsq += logit * logit;
    }
    double mean = sum / probes;
    double var = sumsq / probes - mean * mean;
    double sdev = std::sqrt(std::max(var, 0.0));
    double s = sdev > 1e-12 ? cfg.logit_scale / sdev : 1.0;
    for (double& v : theta_star_) v *= s;
}

std::vector<Vec> LatentArmEnv::latent_contexts(uint64_t step) const {
    Rng rng = Rng::at(cfg_.seed, streams::kContexts, step);
    std::vector<Vec> contexts;
    contexts.reserve(cfg_.arms);
    const std::size_t h = cfg_.feature_dim / 2;
    for (std::size_t k = 0; k < cfg_.arms; ++k) {
        Vec u(h);
        double n = 0.0;
        while (n == 0.0) {
            for (double& x : u) x = rng.normal();
            n = norm2(u);
        }
        Vec x(cfg_.feature_dim);
        for (std::size_t j = 0; j < h; ++j) {
            double v = u[j] / (n * std::sqrt(2.0));
            x[j] = v;
            x[j + h] = v;
        }
        contexts.push_back(std::move(x));
    }
    return contexts;
}

double LatentArmEnv::latent_truth(const Vec& x) const {
    return sigmoid(dot(theta_star_, forward(hidden_, x)));
}

int LatentArmEnv::step_reward(double truth, uint64_t step) const {
    double u = Rng::at(cfg_.seed, streams::kReward, step).uniform();
    return u < truth ? 1 : 0;
}

} // namespace casebandit
