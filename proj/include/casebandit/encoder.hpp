#pragma once

#include "casebandit/linalg.hpp"
#include "casebandit/rng.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace casebandit {

/// Fully connected ReLU feature encoder f(x; w) = s * relu(W_L relu(... relu(W_1 x))).
///
/// Hidden layers are initialized block-diagonally and the last layer
/// antisymmetrically, so any unit input with equal halves maps to (numerically)
/// zero at the initial weights.
struct EncoderConfig {
    std::size_t input_dim = 8;   // must be even
    std::size_t width = 64;      // m, must be even
    std::size_t depth = 2;       // L >= 2
    std::size_t output_dim = 16;
    double scale = 0.0;          // output multiplier; <= 0 means sqrt(width)
    uint64_t seed = 0;

    double effective_scale() const;
    std::size_t param_count() const {
        return width * input_dim + width * width * (depth - 2) + output_dim * width;
    }
};

struct EncoderWeights {
    EncoderConfig config;
    std::vector<Matrix> layers;    // W_1 (m x d_in), W_2..W_{L-1} (m x m), W_L (d_out x m)
    std::vector<Matrix> initial;   // snapshot of the weights at initialization

    std::size_t output_dim() const { return config.output_dim; }
    std::size_t input_dim() const { return config.input_dim; }
};

EncoderWeights init_symmetric(const EncoderConfig& cfg);

Vec forward(const EncoderWeights& w, const Vec& x);

/// Forward pass using the stored initialization snapshot.
Vec forward_initial(const EncoderWeights& w, const Vec& x);

/// Jacobian of the output w.r.t. all weights: one row per output coordinate,
/// columns ordered layer by layer, each layer row-major. ReLU subgradient at
/// exactly 0 is taken as 0.
Matrix grad_params(const EncoderWeights& w, const Vec& x);

/// Gradient of <cotangent, f(x;w)> w.r.t. the weights, shaped like `layers`.
std::vector<Matrix> backward(const EncoderWeights& w, const Vec& x, const Vec& cotangent);

/// Mean cross-entropy of sigmoid(theta . f(x;w)) against binary labels, plus
/// (reg_lambda/2)*||w - w0||^2.
double epoch_loss(const EncoderWeights& w, const Vec& theta,
                  const std::vector<std::pair<Vec, int>>& batch, double reg_lambda);

/// `steps` full-batch gradient descent steps on epoch_loss with theta fixed.
void encoder_epoch_update(EncoderWeights& w, const Vec& theta,
                          const std::vector<std::pair<Vec, int>>& batch,
                          double eta, double reg_lambda, int steps);

void save_encoder(const EncoderWeights& w, const std::string& path);
EncoderWeights load_encoder(const std::string& path);

double sigmoid(double z);

} // namespace casebandit
