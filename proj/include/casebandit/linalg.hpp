#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace casebandit {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b);
double norm2(const Vec& v);
/// Throws numerical_error if any entry is NaN or infinite.
void check_finite(const Vec& v, const char* where);

/// Dense row-major matrix. Just enough for the encoder and design updates.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    /// y = M x
    Vec apply(const Vec& x) const;
    /// y = M^T x
    Vec apply_transposed(const Vec& x) const;
};

/// Incrementally maintained inverse of a regularized design matrix
/// A = lambda*I + sum of feature outer products. Stores A^{-1} directly and
/// folds each new observation in with the Sherman-Morrison identity, then
/// re-symmetrizes to stop float drift from accumulating.
struct PDInverse {
    std::size_t dim = 0;
    double lambda = 1.0;
    Matrix inv;
    uint64_t update_count = 0;
};

PDInverse design_init(std::size_t d, double lambda);
void rank_one_update(PDInverse& state, const Vec& z);
/// sqrt(z^T A^{-1} z); quadratic forms in [-1e-12, 0) clamp to 0, anything
/// more negative throws numerical_error.
double mahalanobis(const PDInverse& state, const Vec& z);

} // namespace casebandit
