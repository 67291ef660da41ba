#pragma once

#include <cmath>
#include <random>

#include "sgp/matrix.hpp"

namespace sgp::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                            double scale = 1.0) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = dist(eng);
    return m;
}

// Random matrix with orthonormal columns (for constructing basis memories).
inline Matrix random_orthonormal(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Matrix basis;
    append_orthonormal(basis, random_matrix(rows, cols, seed), 1e-12);
    return basis;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double mx = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
    return mx;
}

// Relative Frobenius error of u * diag(sigma) * vt against a.
inline double reconstruction_error(const SvdResult& f, const Matrix& a) {
    Matrix usv(f.u.rows(), f.vt.cols());
    for (std::size_t i = 0; i < usv.rows(); ++i)
        for (std::size_t j = 0; j < usv.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < f.sigma.size(); ++k)
                s += f.u(i, k) * f.sigma[k] * f.vt(k, j);
            usv(i, j) = s;
        }
    const double denom = std::sqrt(frobenius_norm_sq(a));
    return std::sqrt(frobenius_norm_sq(sub(usv, a))) / (denom > 0.0 ? denom : 1.0);
}

// Max deviation of b^T b from the identity.
inline double orthonormality_error(const Matrix& b) {
    double mx = 0.0;
    for (std::size_t i = 0; i < b.cols(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double dot = 0.0;
            for (std::size_t r = 0; r < b.rows(); ++r) dot += b(r, i) * b(r, j);
            mx = std::max(mx, std::abs(dot - (i == j ? 1.0 : 0.0)));
        }
    return mx;
}

} // namespace sgp::test
