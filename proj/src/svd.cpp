#include "sgp/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace sgp {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kRotateTol = 1e-14;    // relative off-diagonal threshold
constexpr double kZeroColRel = 1e-13;   // column counts as null-space below this

double col_dot(const Matrix& w, std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) s += w(r, p) * w(r, q);
    return s;
}

void rotate_cols(Matrix& m, std::size_t p, std::size_t q, double c, double s) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double mp = m(r, p), mq = m(r, q);
        m(r, p) = c * mp - s * mq;
        m(r, q) = s * mp + c * mq;
    }
}

// Factor w (rows >= cols) as u * diag(sigma) * v^T with u rows x cols,
// v cols x cols. Hestenes one-sided Jacobi: rotate column pairs of w until
// mutually orthogonal, accumulating the rotations in v.
void jacobi_factor(Matrix w, Matrix& u, std::vector<double>& sigma, Matrix& v) {
    const std::size_t m = w.rows(), n = w.cols();
    v = Matrix::identity(n);

    bool converged = (n <= 1);
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double app = col_dot(w, p, p);
                const double aqq = col_dot(w, q, q);
                const double apq = col_dot(w, p, q);
                if (std::abs(apq) <= kRotateTol * std::sqrt(app * aqq)) continue;
                converged = false;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate_cols(w, p, q, c, s);
                rotate_cols(v, p, q, c, s);
            }
        }
    }
    if (!converged)
        throw NumericalError("svd: Jacobi sweeps did not converge within " +
                             std::to_string(kMaxSweeps) + " iterations");

    // Column norms are the singular values; sort descending, ties by index.
    std::vector<double> norms(n);
    for (std::size_t c = 0; c < n; ++c) norms[c] = std::sqrt(col_dot(w, c, c));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

    sigma.resize(n);
    u = Matrix(m, n);
    Matrix v_sorted(n, n);
    const double sig_max = norms.empty() ? 0.0 : norms[order.front()];
    const double zero_cut = kZeroColRel * sig_max;
    std::size_t rank = 0;
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t src = order[c];
        sigma[c] = norms[src];
        for (std::size_t r = 0; r < n; ++r) v_sorted(r, c) = v(r, src);
        if (sigma[c] > zero_cut && sigma[c] > 0.0) {
            for (std::size_t r = 0; r < m; ++r) u(r, c) = w(r, src) / sigma[c];
            rank = c + 1;
        } else {
            sigma[c] = norms[src]; // keep the tiny value, column filled below
        }
    }
    v = std::move(v_sorted);

    // Null-space columns of u: complete deterministically from canonical
    // basis vectors, Gram-Schmidt against everything accepted so far.
    std::size_t next_axis = 0;
    for (std::size_t c = rank; c < n; ++c) {
        bool placed = false;
        while (next_axis < m && !placed) {
            std::vector<double> cand(m, 0.0);
            cand[next_axis] = 1.0;
            ++next_axis;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t j = 0; j < c; ++j) {
                    double dot = 0.0;
                    for (std::size_t r = 0; r < m; ++r) dot += u(r, j) * cand[r];
                    for (std::size_t r = 0; r < m; ++r) cand[r] -= dot * u(r, j);
                }
            }
            double norm_sq = 0.0;
            for (double x : cand) norm_sq += x * x;
            if (norm_sq > 1e-6) {
                const double inv = 1.0 / std::sqrt(norm_sq);
                for (std::size_t r = 0; r < m; ++r) u(r, c) = cand[r] * inv;
                placed = true;
            }
        }
        if (!placed)
            throw NumericalError("svd: failed to complete orthonormal basis");
    }
}

} // namespace

SvdResult svd(const Matrix& a) {
    if (a.empty()) throw DimensionError("svd: empty matrix");
    if (!a.all_finite()) throw NumericalError("svd: non-finite entries");

    SvdResult out;
    Matrix v;
    if (a.rows() >= a.cols()) {
        jacobi_factor(a, out.u, out.sigma, v);
        out.vt = transpose(v);
    } else {
        // Factor the transpose and swap the roles of u and v.
        Matrix ut;
        jacobi_factor(transpose(a), ut, out.sigma, v);
        out.u = std::move(v);
        out.vt = transpose(ut);
    }

    // Sign convention: largest-magnitude entry of each left singular vector
    // is non-negative; ties resolved toward the lowest row index.
    for (std::size_t c = 0; c < out.u.cols(); ++c) {
        std::size_t arg = 0;
        double best = std::abs(out.u(0, c));
        for (std::size_t r = 1; r < out.u.rows(); ++r) {
            const double v_abs = std::abs(out.u(r, c));
            if (v_abs > best) {
                best = v_abs;
                arg = r;
            }
        }
        if (out.u(arg, c) < 0.0) {
            for (std::size_t r = 0; r < out.u.rows(); ++r) out.u(r, c) = -out.u(r, c);
            for (std::size_t j = 0; j < out.vt.cols(); ++j) out.vt(c, j) = -out.vt(c, j);
        }
    }
    return out;
}

} // namespace sgp
