#include "sgp/matrix.hpp"

#include <cmath>
#include <string>

namespace sgp {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
    if (data_.size() != rows_ * cols_)
        throw DimensionError("Matrix: entry count " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(*this));
    if (!all_finite())
        throw NumericalError("Matrix: non-finite entry in " + shape_str(*this) + " input");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_columns(const std::vector<std::vector<double>>& columns) {
    if (columns.empty()) return Matrix();
    const std::size_t rows = columns.front().size();
    Matrix m(rows, columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c].size() != rows)
            throw DimensionError("from_columns: column " + std::to_string(c) +
                                 " has length " + std::to_string(columns[c].size()) +
                                 ", expected " + std::to_string(rows));
        for (std::size_t r = 0; r < rows; ++r) m(r, c) = columns[c][r];
    }
    return m;
}

std::vector<double> Matrix::column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
}

Matrix Matrix::left_columns(std::size_t count) const {
    if (count > cols_)
        throw DimensionError("left_columns: requested " + std::to_string(count) +
                             " of " + std::to_string(cols_));
    Matrix m(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < count; ++c) m(r, c) = (*this)(r, c);
    return m;
}

Matrix Matrix::hcat(const Matrix& right) const {
    if (empty()) return right;
    if (right.empty()) return *this;
    if (rows_ != right.rows())
        throw DimensionError("hcat: row mismatch " + shape_str(*this) + " vs " + shape_str(right));
    Matrix m(rows_, cols_ + right.cols());
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) m(r, c) = (*this)(r, c);
        for (std::size_t c = 0; c < right.cols(); ++c) m(r, cols_ + c) = right(r, c);
    }
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
    Matrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* orow = &out.data()[i * n];
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.data()[k * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw DimensionError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
    Matrix out(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* brow = &b.data()[k * n];
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            double* orow = &out.data()[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
    return out;
}

double frobenius_norm_sq(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return s;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("add: " + shape_str(a) + " vs " + shape_str(b));
    Matrix out = a;
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("sub: " + shape_str(a) + " vs " + shape_str(b));
    Matrix out = a;
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

std::size_t select_rank(const std::vector<double>& sigma, double epsilon_th) {
    if (sigma.empty()) throw NumericalError("select_rank: empty singular value vector");
    if (!(epsilon_th > 0.0 && epsilon_th < 1.0))
        throw ConfigError("select_rank: epsilon_th must lie in (0,1), got " +
                          std::to_string(epsilon_th));
    double total = 0.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        if (sigma[i] < 0.0)
            throw NumericalError("select_rank: negative singular value");
        if (i > 0 && sigma[i] > sigma[i - 1])
            throw NumericalError("select_rank: singular values not sorted descending");
        total += sigma[i] * sigma[i];
    }
    if (total == 0.0) throw NumericalError("select_rank: all singular values are zero");

    const double zero_cut = kSigmaZeroRel * sigma.front();
    std::size_t nonzero = 0;
    while (nonzero < sigma.size() && sigma[nonzero] > zero_cut) ++nonzero;

    double prefix = 0.0;
    for (std::size_t k = 0; k < nonzero; ++k) {
        prefix += sigma[k] * sigma[k];
        if (prefix >= epsilon_th * total) return k + 1;
    }
    return nonzero; // numerically spurious tail never counts toward rank
}

std::vector<std::size_t> append_orthonormal(Matrix& basis, const Matrix& candidates,
                                            double drop_tol) {
    std::vector<std::size_t> kept;
    if (candidates.empty()) return kept;
    if (!basis.empty() && basis.rows() != candidates.rows())
        throw DimensionError("append_orthonormal: row mismatch " + shape_str(basis) +
                             " vs " + shape_str(candidates));

    const std::size_t dim = candidates.rows();
    std::vector<std::vector<double>> ortho; // accepted columns, in order
    ortho.reserve(basis.cols() + candidates.cols());
    for (std::size_t c = 0; c < basis.cols(); ++c) ortho.push_back(basis.column(c));

    const std::size_t n_existing = basis.cols();
    for (std::size_t c = 0; c < candidates.cols(); ++c) {
        std::vector<double> v = candidates.column(c);
        // two MGS passes for stability
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& u : ortho) {
                double dot = 0.0;
                for (std::size_t r = 0; r < dim; ++r) dot += u[r] * v[r];
                for (std::size_t r = 0; r < dim; ++r) v[r] -= dot * u[r];
            }
        }
        double norm_sq = 0.0;
        for (double x : v) norm_sq += x * x;
        const double norm = std::sqrt(norm_sq);
        if (norm <= drop_tol) continue;
        for (double& x : v) x /= norm;
        ortho.push_back(std::move(v));
        kept.push_back(c);
    }

    if (ortho.size() == n_existing) return kept; // nothing survived
    Matrix out(dim, ortho.size());
    for (std::size_t c = 0; c < ortho.size(); ++c)
        for (std::size_t r = 0; r < dim; ++r) out(r, c) = ortho[c][r];
    basis = std::move(out);
    return kept;
}

} // namespace sgp
