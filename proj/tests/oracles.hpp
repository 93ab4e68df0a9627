// Test-only oracles, deliberately independent of the library's own
// computation paths: dense Gauss-Jordan inversion, Cholesky factorization,
// and helpers for random inputs.
#pragma once

#include "casebandit/linalg.hpp"
#include "casebandit/rng.hpp"

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace oracles {

using casebandit::Rng;
using casebandit::Vec;

struct DenseMat {
    std::size_t n = 0;
    std::vector<double> a;
    explicit DenseMat(std::size_t n_) : n(n_), a(n_ * n_, 0.0) {}
    double& at(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

inline std::optional<DenseMat> invert(DenseMat m) {
    const std::size_t n = m.n;
    DenseMat out(n);
    for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(m.at(r, col)) > std::abs(m.at(piv, col))) piv = r;
        }
        if (std::abs(m.at(piv, col)) < 1e-14) return std::nullopt;
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(m.at(piv, j), m.at(col, j));
                std::swap(out.at(piv, j), out.at(col, j));
            }
        }
        double d = m.at(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            m.at(col, j) /= d;
            out.at(col, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = m.at(r, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                m.at(r, j) -= f * m.at(col, j);
                out.at(r, j) -= f * out.at(col, j);
            }
        }
    }
    return out;
}

/// True iff the matrix admits a Cholesky factorization (is PD).
inline bool cholesky_ok(const DenseMat& m) {
    const std::size_t n = m.n;
    DenseMat L(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = m.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= L.at(i, k) * L.at(j, k);
            if (i == j) {
                if (s <= 0.0) return false;
                L.at(i, i) = std::sqrt(s);
            } else {
                L.at(i, j) = s / L.at(j, j);
            }
        }
    }
    return true;
}

inline Vec random_vec(Rng& rng, std::size_t d, double scale = 1.0) {
    Vec v(d);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

/// Unit vector with equal halves (the duplicated-half feature form).
inline Vec random_dup_half(Rng& rng, std::size_t d) {
    Vec half(d / 2);
    double n = 0.0;
    while (n == 0.0) {
        for (double& x : half) x = rng.normal();
        n = casebandit::norm2(half);
    }
    Vec x(d);
    for (std::size_t j = 0; j < half.size(); ++j) {
        x[j] = half[j] / (n * std::sqrt(2.0));
        x[j + half.size()] = x[j];
    }
    return x;
}

} // namespace oracles
