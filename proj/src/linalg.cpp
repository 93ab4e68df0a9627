#include "casebandit/linalg.hpp"

#include "casebandit/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace casebandit {

double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("dot: dimension mismatch (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

void check_finite(const Vec& v, const char* where) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw numerical_error(std::string(where) + ": non-finite entry");
        }
    }
}

Vec Matrix::apply(const Vec& x) const {
    if (x.size() != cols) throw std::invalid_argument("Matrix::apply: dimension mismatch");
    Vec y(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        const double* row = &data[i * cols];
        for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

Vec Matrix::apply_transposed(const Vec& x) const {
    if (x.size() != rows) throw std::invalid_argument("Matrix::apply_transposed: dimension mismatch");
    Vec y(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = &data[i * cols];
        for (std::size_t j = 0; j < cols; ++j) y[j] += row[j] * x[i];
    }
    return y;
}

PDInverse design_init(std::size_t d, double lambda) {
    if (d < 1) throw std::invalid_argument("design_init: d must be >= 1");
    if (!(lambda > 0.0)) throw std::invalid_argument("design_init: lambda must be > 0");
    PDInverse s;
    s.dim = d;
    s.lambda = lambda;
    s.inv = Matrix(d, d, 0.0);
    for (std::size_t i = 0; i < d; ++i) s.inv(i, i) = 1.0 / lambda;
    s.update_count = 0;
    return s;
}

void rank_one_update(PDInverse& state, const Vec& z) {
    if (z.size() != state.dim) throw std::invalid_argument("rank_one_update: dimension mismatch");
    check_finite(z, "rank_one_update");
    const std::size_t d = state.dim;
    Vec az = state.inv.apply(z);
    double denom = 1.0 + dot(z, az);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            state.inv(i, j) -= az[i] * az[j] / denom;
        }
    }
    // keep the inverse symmetric under long update sequences
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            double m = 0.5 * (state.inv(i, j) + state.inv(j, i));
            state.inv(i, j) = m;
            state.inv(j, i) = m;
        }
    }
    ++state.update_count;
}

double mahalanobis(const PDInverse& state, const Vec& z) {
    if (z.size() != state.dim) throw std::invalid_argument("mahalanobis: dimension mismatch");
    double q = dot(z, state.inv.apply(z));
    if (q < -1e-12) {
        throw numerical_error("mahalanobis: quadratic form " + std::to_string(q) +
                              " < -1e-12, inverse lost positive definiteness");
    }
    return std::sqrt(q < 0.0 ? 0.0 : q);
}

} // namespace casebandit
