#pragma once

#include <cstddef>
#include <vector>

#include "sgp/error.hpp"

namespace sgp {

// Dense real matrix, double precision, row-major.
// Entries are validated finite when constructed from external data.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols); // zero-filled
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

    static Matrix identity(std::size_t n);
    // Assemble from equal-length column vectors.
    static Matrix from_columns(const std::vector<std::vector<double>>& columns);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    std::vector<double> column(std::size_t c) const;
    // First `count` columns as a new matrix.
    Matrix left_columns(std::size_t count) const;
    // Horizontal concatenation [*this, right]; rows must match.
    Matrix hcat(const Matrix& right) const;

    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
double frobenius_norm_sq(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);

struct SvdResult {
    Matrix u;                  // left singular vectors, column-orthonormal
    std::vector<double> sigma; // non-negative, sorted descending
    Matrix vt;                 // right singular vectors, transposed
};

// Deterministic SVD (one-sided Jacobi). Thin factorization:
// u is rows x k, vt is k x cols with k = min(rows, cols).
// Sign convention: in each left singular vector the entry of largest
// absolute value is non-negative, ties broken by lowest index.
// Throws NumericalError if the sweep cap is reached without convergence.
SvdResult svd(const Matrix& a);

// Smallest k such that the first k squared singular values reach
// epsilon_th of the total squared mass. sigma must be non-increasing and
// non-negative; all-zero input throws NumericalError.
// Values below 1e-10 * max(sigma) are treated as zero.
std::size_t select_rank(const std::vector<double>& sigma, double epsilon_th);

// Relative threshold below which a singular value counts as zero.
inline constexpr double kSigmaZeroRel = 1e-10;

// Modified Gram-Schmidt: orthonormalize the columns of `candidates` against
// the (already orthonormal) columns of `basis` and against each other, then
// append the survivors to `basis`. Columns whose residual norm falls below
// drop_tol are discarded. Returns indices (into candidates) of kept columns.
std::vector<std::size_t> append_orthonormal(Matrix& basis, const Matrix& candidates,
                                            double drop_tol = 1e-8);

} // namespace sgp
