#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "casebandit/encoder.hpp"
#include "casebandit/errors.hpp"
#include "oracles.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace casebandit;

namespace {

EncoderConfig small_cfg(std::size_t depth = 2, uint64_t seed = 1) {
    EncoderConfig cfg;
    cfg.input_dim = 8;
    cfg.width = 16;
    cfg.depth = depth;
    cfg.output_dim = 4;
    cfg.seed = seed;
    return cfg;
}

EncoderWeights perturbed(const EncoderConfig& cfg, uint64_t noise_seed, double sd = 0.05) {
    EncoderWeights w = init_symmetric(cfg);
    Rng rng(noise_seed);
    for (Matrix& W : w.layers) {
        for (double& v : W.data) v += sd * rng.normal();
    }
    return w;
}

double batch_loss(const EncoderWeights& w, const Vec& theta,
                  const std::vector<std::pair<Vec, int>>& batch, double reg) {
    return epoch_loss(w, theta, batch, reg);
}

} // namespace

TEST_CASE("layer shapes and parameter count") {
    EncoderConfig cfg;
    cfg.input_dim = 4;
    cfg.width = 8;
    cfg.depth = 3;
    cfg.output_dim = 2;
    cfg.seed = 5;
    EncoderWeights w = init_symmetric(cfg);
    REQUIRE(w.layers.size() == 3);
    CHECK(w.layers[0].rows == 8);
    CHECK(w.layers[0].cols == 4);
    CHECK(w.layers[1].rows == 8);
    CHECK(w.layers[1].cols == 8);
    CHECK(w.layers[2].rows == 2);
    CHECK(w.layers[2].cols == 8);
    CHECK(cfg.param_count() == 8 * 4 + 8 * 8 + 2 * 8);
}

TEST_CASE("init validation") {
    EncoderConfig cfg = small_cfg();
    cfg.input_dim = 7;
    CHECK_THROWS_AS(init_symmetric(cfg), std::invalid_argument);
    cfg = small_cfg();
    cfg.width = 9;
    CHECK_THROWS_AS(init_symmetric(cfg), std::invalid_argument);
    cfg = small_cfg();
    cfg.depth = 1;
    CHECK_THROWS_AS(init_symmetric(cfg), std::invalid_argument);
}

TEST_CASE("different seeds give different weights, same seed is bitwise identical") {
    EncoderWeights a = init_symmetric(small_cfg(2, 1));
    EncoderWeights b = init_symmetric(small_cfg(2, 2));
    EncoderWeights c = init_symmetric(small_cfg(2, 1));
    bool any_diff = false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].data != b.layers[l].data) any_diff = true;
        CHECK(a.layers[l].data == c.layers[l].data);
    }
    CHECK(any_diff);
}

TEST_CASE("duplicated-half unit inputs map to (numerically) zero at init") {
    EncoderWeights w = init_symmetric(small_cfg());
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        Vec x = oracles::random_dup_half(rng, 8);
        for (double v : forward(w, x)) CHECK(std::abs(v) <= 1e-8);
    }
}

TEST_CASE("hand-evaluated two-layer forward pass") {
    EncoderConfig cfg;
    cfg.input_dim = 2;
    cfg.width = 2;
    cfg.depth = 2;
    cfg.output_dim = 1;
    cfg.scale = 1.0;
    EncoderWeights w = init_symmetric(cfg);
    w.layers[0](0, 0) = 1.0;
    w.layers[0](0, 1) = 0.0;
    w.layers[0](1, 0) = 0.0;
    w.layers[0](1, 1) = 1.0;
    w.layers[1](0, 0) = 1.0;
    w.layers[1](0, 1) = -1.0;
    // relu(W1 x) = (2, 0); W2 . = 2; relu = 2; scale 1
    Vec out = forward(w, {2.0, -3.0});
    REQUIRE(out.size() == 1);
    CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("all-zero weights give zero output and zero gradient") {
    EncoderConfig cfg = small_cfg();
    EncoderWeights w = init_symmetric(cfg);
    for (Matrix& W : w.layers) {
        for (double& v : W.data) v = 0.0;
    }
    Rng rng(5);
    Vec x = oracles::random_vec(rng, 8);
    for (double v : forward(w, x)) CHECK(v == 0.0);
    Matrix jac = grad_params(w, x);
    for (double v : jac.data) CHECK(v == 0.0);
}

TEST_CASE("analytic gradients match central finite differences") {
    for (std::size_t depth : {2u, 3u}) {
        EncoderWeights w = perturbed(small_cfg(depth, 10 + depth), 20 + depth);
        Rng rng(30 + depth);
        for (int probe = 0; probe < 10; ++probe) {
            Vec x = oracles::random_vec(rng, 8);
            Matrix jac = grad_params(w, x);
            const double h = 1e-5;
            std::size_t off = 0;
            for (std::size_t l = 0; l < w.layers.size(); ++l) {
                for (int rep = 0; rep < 5; ++rep) {
                    std::size_t k = rng.uniform_int(w.layers[l].data.size());
                    double orig = w.layers[l].data[k];
                    w.layers[l].data[k] = orig + h;
                    Vec fp = forward(w, x);
                    w.layers[l].data[k] = orig - h;
                    Vec fm = forward(w, x);
                    w.layers[l].data[k] = orig;
                    for (std::size_t j = 0; j < 4; ++j) {
                        double fd = (fp[j] - fm[j]) / (2.0 * h);
                        double an = jac(j, off + k);
                        double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
                        CHECK(std::abs(fd - an) / denom < 1e-4);
                    }
                }
                off += w.layers[l].data.size();
            }
        }
    }
}

TEST_CASE("last-layer gradient is scale times activations, independent of W_L") {
    EncoderConfig cfg = small_cfg();
    EncoderWeights w = perturbed(cfg, 77);
    Rng rng(78);
    Vec x = oracles::random_vec(rng, 8);

    Matrix jac1 = grad_params(w, x);
    std::size_t last_off = cfg.param_count() - cfg.output_dim * cfg.width;

    // find an output with an open final gate, then rescale its row
    Vec out = forward(w, x);
    std::size_t j = 0;
    while (j < out.size() && out[j] == 0.0) ++j;
    REQUIRE(j < out.size());
    for (std::size_t i = 0; i < cfg.width; ++i) w.layers.back()(j, i) *= 3.0;

    Matrix jac2 = grad_params(w, x);
    for (std::size_t i = 0; i < cfg.width; ++i) {
        std::size_t col = last_off + j * cfg.width + i;
        CHECK(jac2(j, col) == doctest::Approx(jac1(j, col)).epsilon(1e-12));
    }
}

TEST_CASE("one epoch step on a duplicated-half batch does not increase the loss") {
    EncoderConfig cfg = small_cfg();
    EncoderWeights w = init_symmetric(cfg);
    Rng rng(41);
    std::vector<std::pair<Vec, int>> batch;
    for (int i = 0; i < 8; ++i) batch.push_back({oracles::random_dup_half(rng, 8), 1});
    Vec theta = oracles::random_vec(rng, 4);

    double before = batch_loss(w, theta, batch, 0.0);
    CHECK(before == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    encoder_epoch_update(w, theta, batch, 0.01, 0.0, 1);
    CHECK(batch_loss(w, theta, batch, 0.0) <= before + 1e-12);
}

TEST_CASE("zero head makes the initial weights a fixed point") {
    EncoderConfig cfg = small_cfg();
    EncoderWeights w = init_symmetric(cfg);
    EncoderWeights before = w;
    Rng rng(43);
    std::vector<std::pair<Vec, int>> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({oracles::random_vec(rng, 8), i % 2});
    Vec theta(4, 0.0); // data-term gradient is exactly zero
    encoder_epoch_update(w, theta, batch, 0.1, 0.5, 3);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        for (std::size_t k = 0; k < w.layers[l].data.size(); ++k) {
            CHECK(std::abs(w.layers[l].data[k] - before.layers[l].data[k]) <= 1e-12);
        }
    }
}

TEST_CASE("epoch loss gradient matches finite differences on a 3-item batch") {
    EncoderConfig cfg = small_cfg();
    EncoderWeights w = perturbed(cfg, 55);
    Rng rng(56);
    std::vector<std::pair<Vec, int>> batch;
    for (int i = 0; i < 3; ++i) batch.push_back({oracles::random_vec(rng, 8), i % 2});
    Vec theta = oracles::random_vec(rng, 4);
    const double reg = 0.2;

    // recover the step direction from a tiny update; it equals eta * grad
    const double eta = 1e-7;
    EncoderWeights stepped = w;
    encoder_epoch_update(stepped, theta, batch, eta, reg, 1);

    const double h = 1e-5;
    Rng pick(57);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        for (int rep = 0; rep < 8; ++rep) {
            std::size_t k = pick.uniform_int(w.layers[l].data.size());
            double analytic = (w.layers[l].data[k] - stepped.layers[l].data[k]) / eta;
            double orig = w.layers[l].data[k];
            w.layers[l].data[k] = orig + h;
            double fp = batch_loss(w, theta, batch, reg);
            w.layers[l].data[k] = orig - h;
            double fm = batch_loss(w, theta, batch, reg);
            w.layers[l].data[k] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
            CHECK(std::abs(fd - analytic) / denom < 1e-4);
        }
    }
}

TEST_CASE("small-step epoch updates rarely increase the loss") {
    Rng rng(61);
    int violations = 0;
    for (int trial = 0; trial < 10; ++trial) {
        EncoderWeights w = perturbed(small_cfg(2, 100 + trial), 200 + trial, 0.1);
        std::vector<std::pair<Vec, int>> batch;
        for (int i = 0; i < 8; ++i) batch.push_back({oracles::random_vec(rng, 8), i % 2});
        Vec theta = oracles::random_vec(rng, 4);
        double before = batch_loss(w, theta, batch, 0.0);
        encoder_epoch_update(w, theta, batch, 1e-3, 0.0, 1);
        if (batch_loss(w, theta, batch, 0.0) > before) ++violations;
    }
    CHECK(violations <= 1);
}

TEST_CASE("epoch update rejects an empty batch") {
    EncoderWeights w = init_symmetric(small_cfg());
    Vec theta(4, 0.0);
    CHECK_THROWS_AS(encoder_epoch_update(w, theta, {}, 0.01, 0.0, 1), std::invalid_argument);
}

TEST_CASE("weight save/load round-trips bit-exact") {
    namespace fs = std::filesystem;
    fs::path path = fs::temp_directory_path() / "casebandit_enc_test.bin";
    EncoderWeights w = perturbed(small_cfg(3, 91), 92);
    save_encoder(w, path.string());
    EncoderWeights r = load_encoder(path.string());
    REQUIRE(r.layers.size() == w.layers.size());
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        CHECK(r.layers[l].data == w.layers[l].data);
        CHECK(r.initial[l].data == w.initial[l].data);
    }
    CHECK(r.config.seed == w.config.seed);
    fs::remove(path);

    CHECK_THROWS_AS(load_encoder("/nonexistent/enc.bin"), parse_error);
}
