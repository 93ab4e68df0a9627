#include "casebandit/encoder.hpp"

#include "casebandit/binio.hpp"
#include "casebandit/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace casebandit {

double sigmoid(double z) {
    // stable branch: never exponentiate a large positive argument
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

double EncoderConfig::effective_scale() const {
    return scale > 0.0 ? scale : std::sqrt(static_cast<double>(width));
}

static void validate(const EncoderConfig& cfg) {
    if (cfg.input_dim == 0 || cfg.input_dim % 2 != 0) {
        throw std::invalid_argument("encoder: input_dim must be a positive even integer");
    }
    if (cfg.width == 0 || cfg.width % 2 != 0) {
        throw std::invalid_argument("encoder: width must be a positive even integer");
    }
    if (cfg.depth < 2) throw std::invalid_argument("encoder: depth must be >= 2");
    if (cfg.output_dim == 0) throw std::invalid_argument("encoder: output_dim must be positive");
}

EncoderWeights init_symmetric(const EncoderConfig& cfg) {
    validate(cfg);
    Rng rng = Rng(cfg.seed).fork(streams::kInit);
    EncoderWeights w;
    w.config = cfg;

    const std::size_t m = cfg.width, h = m / 2;
    const double hidden_sd = std::sqrt(4.0 / static_cast<double>(m));
    const double last_sd = std::sqrt(2.0 / static_cast<double>(m));

    // W_1: block-diagonal over the two input halves
    {
        const std::size_t dh = cfg.input_dim / 2;
        Matrix block(h, dh);
        for (double& v : block.data) v = hidden_sd * rng.normal();
        Matrix W1(m, cfg.input_dim, 0.0);
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < dh; ++j) {
                W1(i, j) = block(i, j);
                W1(i + h, j + dh) = block(i, j);
            }
        }
        w.layers.push_back(std::move(W1));
    }
    // W_2 .. W_{L-1}: block-diagonal m x m
    for (std::size_t l = 2; l < cfg.depth; ++l) {
        Matrix block(h, h);
        for (double& v : block.data) v = hidden_sd * rng.normal();
        Matrix Wi(m, m, 0.0);
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < h; ++j) {
                Wi(i, j) = block(i, j);
                Wi(i + h, j + h) = block(i, j);
            }
        }
        w.layers.push_back(std::move(Wi));
    }
    // W_L = [W^T, -W^T]
    {
        Matrix block(h, cfg.output_dim);
        for (double& v : block.data) v = last_sd * rng.normal();
        Matrix WL(cfg.output_dim, m, 0.0);
        for (std::size_t i = 0; i < cfg.output_dim; ++i) {
            for (std::size_t j = 0; j < h; ++j) {
                WL(i, j) = block(j, i);
                WL(i, j + h) = -block(j, i);
            }
        }
        w.layers.push_back(std::move(WL));
    }

    w.initial = w.layers;
    return w;
}

static Vec forward_layers(const std::vector<Matrix>& layers, const EncoderConfig& cfg, const Vec& x) {
    if (x.size() != cfg.input_dim) throw std::invalid_argument("encoder forward: dimension mismatch");
    Vec a = x;
    for (const Matrix& W : layers) {
        a = W.apply(a);
        for (double& v : a) v = v > 0.0 ? v : 0.0;
    }
    const double s = cfg.effective_scale();
    for (double& v : a) v *= s;
    return a;
}

Vec forward(const EncoderWeights& w, const Vec& x) { return forward_layers(w.layers, w.config, x); }

Vec forward_initial(const EncoderWeights& w, const Vec& x) {
    return forward_layers(w.initial, w.config, x);
}

namespace {

struct Activations {
    std::vector<Vec> inputs;   // input to each layer (inputs[0] = x)
    std::vector<Vec> pre;      // pre-activation of each layer
    Vec out;                   // scaled final activation
};

Activations run_forward(const EncoderWeights& w, const Vec& x) {
    if (x.size() != w.config.input_dim) {
        throw std::invalid_argument("encoder forward: dimension mismatch");
    }
    Activations acts;
    Vec a = x;
    for (const Matrix& W : w.layers) {
        acts.inputs.push_back(a);
        Vec p = W.apply(a);
        acts.pre.push_back(p);
        a = p;
        for (double& v : a) v = v > 0.0 ? v : 0.0;
    }
    const double s = w.config.effective_scale();
    acts.out = a;
    for (double& v : acts.out) v *= s;
    return acts;
}

// Backprop shared by grad_params and backward(); cot is d(loss)/d(output).
std::vector<Matrix> backprop(const EncoderWeights& w, const Activations& acts, const Vec& cot) {
    const std::size_t L = w.layers.size();
    std::vector<Matrix> grads;
    grads.reserve(L);
    for (const Matrix& W : w.layers) grads.emplace_back(W.rows, W.cols, 0.0);

    const double s = w.config.effective_scale();
    Vec g(cot.size());
    for (std::size_t i = 0; i < cot.size(); ++i) {
        g[i] = acts.pre[L - 1][i] > 0.0 ? s * cot[i] : 0.0;
    }
    for (std::size_t l = L; l-- > 0;) {
        const Vec& in = acts.inputs[l];
        Matrix& G = grads[l];
        for (std::size_t i = 0; i < G.rows; ++i) {
            if (g[i] == 0.0) continue;
            for (std::size_t j = 0; j < G.cols; ++j) G(i, j) += g[i] * in[j];
        }
        if (l > 0) {
            Vec up = w.layers[l].apply_transposed(g);
            g.assign(up.size(), 0.0);
            for (std::size_t i = 0; i < up.size(); ++i) {
                g[i] = acts.pre[l - 1][i] > 0.0 ? up[i] : 0.0;
            }
        }
    }
    return grads;
}

} // namespace

std::vector<Matrix> backward(const EncoderWeights& w, const Vec& x, const Vec& cotangent) {
    if (cotangent.size() != w.config.output_dim) {
        throw std::invalid_argument("encoder backward: cotangent dimension mismatch");
    }
    Activations acts = run_forward(w, x);
    return backprop(w, acts, cotangent);
}

Matrix grad_params(const EncoderWeights& w, const Vec& x) {
    Activations acts = run_forward(w, x);
    const std::size_t p = w.config.param_count();
    Matrix jac(w.config.output_dim, p, 0.0);
    Vec cot(w.config.output_dim, 0.0);
    for (std::size_t j = 0; j < w.config.output_dim; ++j) {
        cot[j] = 1.0;
        std::vector<Matrix> grads = backprop(w, acts, cot);
        cot[j] = 0.0;
        std::size_t off = 0;
        for (const Matrix& G : grads) {
            for (std::size_t k = 0; k < G.data.size(); ++k) jac(j, off + k) = G.data[k];
            off += G.data.size();
        }
    }
    return jac;
}

double epoch_loss(const EncoderWeights& w, const Vec& theta,
                  const std::vector<std::pair<Vec, int>>& batch, double reg_lambda) {
    if (batch.empty()) throw std::invalid_argument("epoch_loss: empty batch");
    double total = 0.0;
    for (const auto& [x, r] : batch) {
        double p = sigmoid(dot(theta, forward(w, x)));
        // clamp to keep the loss finite at saturated predictions
        p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
        total += r ? -std::log(p) : -std::log(1.0 - p);
    }
    total /= static_cast<double>(batch.size());
    if (reg_lambda > 0.0) {
        double sq = 0.0;
        for (std::size_t l = 0; l < w.layers.size(); ++l) {
            for (std::size_t k = 0; k < w.layers[l].data.size(); ++k) {
                double d = w.layers[l].data[k] - w.initial[l].data[k];
                sq += d * d;
            }
        }
        total += 0.5 * reg_lambda * sq;
    }
    return total;
}

void encoder_epoch_update(EncoderWeights& w, const Vec& theta,
                          const std::vector<std::pair<Vec, int>>& batch,
                          double eta, double reg_lambda, int steps) {
    if (batch.empty()) throw std::invalid_argument("encoder_epoch_update: empty batch");
    if (theta.size() != w.config.output_dim) {
        throw std::invalid_argument("encoder_epoch_update: theta dimension mismatch");
    }
    if (steps < 1) throw std::invalid_argument("encoder_epoch_update: steps must be positive");

    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (int s = 0; s < steps; ++s) {
        std::vector<Matrix> grads;
        grads.reserve(w.layers.size());
        for (const Matrix& W : w.layers) grads.emplace_back(W.rows, W.cols, 0.0);

        for (const auto& [x, r] : batch) {
            Activations acts = run_forward(w, x);
            double p = sigmoid(dot(theta, acts.out));
            double coeff = (p - static_cast<double>(r)) * inv_n;
            Vec cot(theta.size());
            for (std::size_t i = 0; i < theta.size(); ++i) cot[i] = coeff * theta[i];
            std::vector<Matrix> g = backprop(w, acts, cot);
            for (std::size_t l = 0; l < grads.size(); ++l) {
                for (std::size_t k = 0; k < grads[l].data.size(); ++k) {
                    grads[l].data[k] += g[l].data[k];
                }
            }
        }
        for (std::size_t l = 0; l < w.layers.size(); ++l) {
            for (std::size_t k = 0; k < w.layers[l].data.size(); ++k) {
                double g = grads[l].data[k];
                if (reg_lambda > 0.0) {
                    g += reg_lambda * (w.layers[l].data[k] - w.initial[l].data[k]);
                }
                w.layers[l].data[k] -= eta * g;
            }
        }
    }
}

static constexpr uint32_t kEncoderMagic = 0x43424557; // "CBEW"

void save_encoder(const EncoderWeights& w, const std::string& path) {
    BinWriter out(path);
    out.u32(kEncoderMagic);
    out.u32(1);
    out.u32(static_cast<uint32_t>(w.config.input_dim));
    out.u32(static_cast<uint32_t>(w.config.width));
    out.u32(static_cast<uint32_t>(w.config.depth));
    out.u32(static_cast<uint32_t>(w.config.output_dim));
    out.f64(w.config.scale);
    out.u64(w.config.seed);
    for (const Matrix& W : w.layers) out.f64s(W.data);
    for (const Matrix& W : w.initial) out.f64s(W.data);
    if (!out.good()) throw parse_error("failed writing " + path);
}

EncoderWeights load_encoder(const std::string& path) {
    BinReader in(path);
    if (in.u32() != kEncoderMagic) throw parse_error("not an encoder weight file: " + path);
    if (in.u32() != 1) throw parse_error("unsupported encoder file version: " + path);
    EncoderConfig cfg;
    cfg.input_dim = in.u32();
    cfg.width = in.u32();
    cfg.depth = in.u32();
    cfg.output_dim = in.u32();
    cfg.scale = in.f64();
    cfg.seed = in.u64();
    validate(cfg);

    EncoderWeights w;
    w.config = cfg;
    auto read_stack = [&](std::vector<Matrix>& dst) {
        dst.clear();
        std::size_t in_dim = cfg.input_dim;
        for (std::size_t l = 0; l + 1 < cfg.depth; ++l) {
            Matrix W(cfg.width, in_dim);
            W.data = in.f64s();
            if (W.data.size() != W.rows * W.cols) throw parse_error("bad layer size in " + path);
            dst.push_back(std::move(W));
            in_dim = cfg.width;
        }
        Matrix WL(cfg.output_dim, cfg.width);
        WL.data = in.f64s();
        if (WL.data.size() != WL.rows * WL.cols) throw parse_error("bad layer size in " + path);
        dst.push_back(std::move(WL));
    };
    read_stack(w.layers);
    read_stack(w.initial);
    return w;
}

} // namespace casebandit
