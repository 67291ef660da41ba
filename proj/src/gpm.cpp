#include "sgp/gpm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "sgp/binary_io.hpp"
#include "sgp/rng.hpp"

namespace sgp {

namespace {

constexpr char kMemMagic[4] = {'S', 'G', 'P', 'M'};
constexpr std::uint32_t kMemVersion = 1;

// Representations with squared norm at or below this are treated as dead
// layers and skipped by the memory update.
constexpr double kDeadLayerNormSq = 1e-24;

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

} // namespace

double ScaleConfig::epsilon_for_layer(std::size_t layer) const {
    if (epsilon_th.empty()) throw ConfigError("ScaleConfig: epsilon_th is empty");
    if (epsilon_th.size() == 1) return epsilon_th.front();
    if (layer >= epsilon_th.size())
        throw ConfigError("ScaleConfig: no epsilon_th entry for layer " + std::to_string(layer));
    return epsilon_th[layer];
}

void ScaleConfig::advance_epsilon() {
    for (double& e : epsilon_th) e += epsilon_increment;
}

void ScaleConfig::validate(std::size_t task_count, std::size_t layer_count) const {
    if (alpha < 0.0) throw ConfigError("ScaleConfig: alpha must be non-negative");
    if (epsilon_increment < 0.0)
        throw ConfigError("ScaleConfig: epsilon_increment must be non-negative");
    if (epsilon_th.empty()) throw ConfigError("ScaleConfig: epsilon_th is empty");
    if (epsilon_th.size() != 1 && epsilon_th.size() < layer_count)
        throw ConfigError("ScaleConfig: need 1 or >= " + std::to_string(layer_count) +
                          " epsilon_th values, got " + std::to_string(epsilon_th.size()));
    for (double e : epsilon_th) {
        if (!(e > 0.0 && e < 1.0))
            throw ConfigError("ScaleConfig: epsilon_th must lie in (0,1), got " +
                              std::to_string(e));
        // The increment is applied after every task including the last.
        if (!(e + double(task_count) * epsilon_increment < 1.0))
            throw ConfigError("ScaleConfig: epsilon_th + tasks * increment must stay below 1");
    }
}

BasisMemory BasisMemory::empty_for_layers(std::size_t layer_count) {
    BasisMemory mem;
    mem.layers.resize(layer_count);
    return mem;
}

std::vector<double> compute_importance(const std::vector<double>& sigma, double alpha) {
    if (alpha < 0.0) throw ConfigError("compute_importance: alpha must be non-negative");
    if (sigma.empty()) throw NumericalError("compute_importance: empty singular value vector");
    double mx = 0.0;
    for (double s : sigma) {
        if (s < 0.0) throw NumericalError("compute_importance: negative singular value");
        mx = std::max(mx, s);
    }
    if (mx <= 0.0)
        throw NumericalError("compute_importance: all singular values are zero");

    std::vector<double> lambda(sigma.size());
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        if (sigma[i] == mx) {
            lambda[i] = 1.0; // exact at the maximum, independent of alpha
        } else {
            lambda[i] = std::min(1.0, (alpha + 1.0) * sigma[i] / (alpha * sigma[i] + mx));
        }
    }
    return lambda;
}

Matrix project_gradient(const Matrix& grad, const LayerBasis& mem) {
    if (mem.empty()) return grad;
    if (mem.basis.rows() != grad.cols())
        throw DimensionError("project_gradient: gradient has " + std::to_string(grad.cols()) +
                             " input columns, basis rows are " +
                             std::to_string(mem.basis.rows()));
    Matrix coeff = matmul(grad, mem.basis); // out x k
    for (std::size_t r = 0; r < coeff.rows(); ++r)
        for (std::size_t c = 0; c < coeff.cols(); ++c) coeff(r, c) *= mem.importance[c];
    return sub(grad, matmul(coeff, transpose(mem.basis)));
}

ResidualSplit compute_residual(const Matrix& r, const LayerBasis& mem) {
    if (mem.empty()) return {r, Matrix(r.rows(), r.cols())};
    if (mem.basis.rows() != r.rows())
        throw DimensionError("compute_residual: representation rows " +
                             std::to_string(r.rows()) + " vs basis rows " +
                             std::to_string(mem.basis.rows()));
    Matrix projected = matmul(mem.basis, matmul_tn(mem.basis, r));
    return {sub(r, projected), std::move(projected)};
}

NewBases select_new_bases(const Matrix& residual, const Matrix& r_projected,
                          const Matrix& r_full, double epsilon_th) {
    const double full_sq = frobenius_norm_sq(r_full);
    const double proj_sq = frobenius_norm_sq(r_projected);
    NewBases out;
    if (full_sq == 0.0) return out;
    if (proj_sq >= epsilon_th * full_sq) return out; // stored span already suffices

    SvdResult f = svd(residual);
    const double zero_cut = f.sigma.empty() ? 0.0 : kSigmaZeroRel * f.sigma.front();
    std::size_t nonzero = 0;
    while (nonzero < f.sigma.size() && f.sigma[nonzero] > zero_cut && f.sigma[nonzero] > 0.0)
        ++nonzero;

    double captured = proj_sq;
    std::size_t k = 0;
    while (k < nonzero) {
        captured += f.sigma[k] * f.sigma[k];
        ++k;
        if (captured >= epsilon_th * full_sq) break;
    }
    out.basis_cols = f.u.left_columns(k);
    out.sigma_hat.assign(f.sigma.begin(), f.sigma.begin() + static_cast<std::ptrdiff_t>(k));
    return out;
}

Matrix projection_coefficients(const LayerBasis& mem, const Matrix& u_span,
                               const std::vector<double>& sigma_span) {
    if (mem.empty()) throw ConsistencyError("projection_coefficients: empty memory");
    if (u_span.cols() != sigma_span.size())
        throw DimensionError("projection_coefficients: " + std::to_string(u_span.cols()) +
                             " columns vs " + std::to_string(sigma_span.size()) +
                             " singular values");
    if (!u_span.empty() && u_span.rows() != mem.basis.rows())
        throw DimensionError("projection_coefficients: row mismatch");

    Matrix c = u_span.empty() ? Matrix(mem.count(), 0) : matmul_tn(mem.basis, u_span);

    const double sig_max = sigma_span.empty()
                               ? 0.0
                               : *std::max_element(sigma_span.begin(), sigma_span.end());
    for (std::size_t j = 0; j < u_span.cols(); ++j) {
        if (sigma_span[j] <= kSigmaZeroRel * sig_max) continue; // nulled downstream
        // residual of u_j against span(B) must vanish: |u_j|^2 = |B^T u_j|^2
        double u_sq = 0.0, c_sq = 0.0;
        for (std::size_t r = 0; r < u_span.rows(); ++r) u_sq += u_span(r, j) * u_span(r, j);
        for (std::size_t r = 0; r < c.rows(); ++r) c_sq += c(r, j) * c(r, j);
        if (std::sqrt(std::max(0.0, u_sq - c_sq)) > 1e-6)
            throw ConsistencyError("projection_coefficients: column " + std::to_string(j) +
                                   " lies outside the stored span (residual norm " +
                                   std::to_string(std::sqrt(std::max(0.0, u_sq - c_sq))) + ")");
    }
    return c;
}

std::vector<double> surrogate_singular_values(const Matrix& c,
                                              const std::vector<double>& sigma_span) {
    if (c.cols() != sigma_span.size())
        throw DimensionError("surrogate_singular_values: " + std::to_string(c.cols()) +
                             " coefficient columns vs " + std::to_string(sigma_span.size()) +
                             " singular values");
    std::vector<double> out(c.rows(), 0.0);
    for (std::size_t i = 0; i < c.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c.cols(); ++j)
            s += c(i, j) * c(i, j) * sigma_span[j] * sigma_span[j];
        out[i] = std::sqrt(s);
    }
    return out;
}

std::vector<double> assemble_singular_vector(const std::vector<double>& sigma_prime,
                                             const std::vector<double>& sigma_hat) {
    std::vector<double> out;
    out.reserve(sigma_prime.size() + sigma_hat.size());
    out.insert(out.end(), sigma_prime.begin(), sigma_prime.end());
    out.insert(out.end(), sigma_hat.begin(), sigma_hat.end());
    return out;
}

bool ThresholdCheck::satisfied(double slack_rel) const {
    return captured >= required - slack_rel * std::max(1.0, required);
}

ThresholdCheck threshold_satisfaction(const std::vector<double>& sigma_tau,
                                      double epsilon_th, double r_full_norm_sq) {
    double captured = 0.0;
    for (double s : sigma_tau) captured += s * s;
    return {captured, epsilon_th * r_full_norm_sq};
}

ThresholdCheck check_threshold_satisfaction(const std::vector<double>& sigma_tau,
                                            double epsilon_th, double r_full_norm_sq) {
    const ThresholdCheck chk = threshold_satisfaction(sigma_tau, epsilon_th, r_full_norm_sq);
    if (!chk.satisfied())
        throw ConsistencyError("assembled singular vector captures " +
                               std::to_string(chk.captured) + " < required " +
                               std::to_string(chk.required));
    return chk;
}

void accumulate_importance(LayerBasis& mem, const std::vector<double>& lambda_tau,
                           const Matrix& new_basis_cols, double drop_tol) {
    const std::size_t k_old = mem.count();
    const std::size_t k_new = new_basis_cols.empty() ? 0 : new_basis_cols.cols();
    if (lambda_tau.size() != k_old + k_new)
        throw DimensionError("accumulate_importance: " + std::to_string(lambda_tau.size()) +
                             " importance entries for " + std::to_string(k_old) + "+" +
                             std::to_string(k_new) + " bases");

    // Old importance first, then the basis extension.
    for (std::size_t i = 0; i < k_old; ++i)
        mem.importance[i] = std::min(1.0, mem.importance[i] + lambda_tau[i]);

    if (k_new == 0) return;
    const auto kept = append_orthonormal(mem.basis, new_basis_cols, drop_tol);
    for (std::size_t idx : kept) mem.importance.push_back(lambda_tau[k_old + idx]);
    if (mem.basis.cols() != mem.importance.size())
        throw ConsistencyError("accumulate_importance: basis/importance misaligned");
}

std::vector<LayerUpdateStats> update_memory_after_task(const Network& net,
                                                       const TaskDataset& task,
                                                       BasisMemory& mem, ScaleConfig& scale,
                                                       const MemoryUpdateOptions& opts) {
    if (mem.layers.size() != net.layer_count())
        throw DimensionError("update_memory_after_task: memory has " +
                             std::to_string(mem.layers.size()) + " layers, net has " +
                             std::to_string(net.layer_count()));
    if (task.train.size() == 0)
        throw ConfigError("update_memory_after_task: task has no training samples");

    // Draw n_s samples (without replacement when possible).
    const std::size_t n_total = task.train.size();
    const std::size_t n_take = std::min(opts.n_s, n_total);
    std::vector<std::size_t> idx(n_total);
    for (std::size_t i = 0; i < n_total; ++i) idx[i] = i;
    auto eng = std::mt19937_64(opts.sample_seed);
    for (std::size_t i = n_total; i-- > 1;) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(idx[i], idx[pick(eng)]);
    }
    Matrix batch(n_take, task.train.x.cols());
    for (std::size_t n = 0; n < n_take; ++n)
        for (std::size_t d = 0; d < batch.cols(); ++d) batch(n, d) = task.train.x(idx[n], d);

    LayerActivations acts;
    net.forward_features(batch, &acts);

    std::vector<LayerUpdateStats> stats;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        LayerUpdateStats st;
        st.layer = l;
        const double eps = scale.epsilon_for_layer(l);
        Matrix r = build_representation_matrix(acts, l, opts.rep_max_cols);
        const double r_sq = frobenius_norm_sq(r);
        if (r_sq <= kDeadLayerNormSq) {
            st.skipped = true;
            st.total = mem.layers[l].count();
            stats.push_back(st);
            continue;
        }

        LayerBasis& entry = mem.layers[l];
        if (entry.empty()) {
            // First task for this layer: plain rank selection on the full
            // representation.
            SvdResult f = svd(r);
            const std::size_t k1 = select_rank(f.sigma, eps);
            std::vector<double> sigma1(f.sigma.begin(),
                                       f.sigma.begin() + static_cast<std::ptrdiff_t>(k1));
            std::vector<double> lambda = scale.mode == ProjectionMode::gpm
                                             ? ones(k1)
                                             : compute_importance(sigma1, scale.alpha);
            accumulate_importance(entry, lambda, f.u.left_columns(k1));
            const ThresholdCheck chk = threshold_satisfaction(sigma1, eps, r_sq);
            st.added = entry.count();
            st.captured = chk.captured;
            st.required = chk.required;
        } else {
            ResidualSplit split = compute_residual(r, entry);
            NewBases nb = select_new_bases(split.residual, split.projected, r, eps);

            // Surrogate singular mass of the in-span part for the old bases.
            const std::size_t k_old = entry.count();
            std::vector<double> sigma_prime(k_old, 0.0);
            const double proj_sq = frobenius_norm_sq(split.projected);
            if (proj_sq > kDeadLayerNormSq) {
                SvdResult pf = svd(split.projected);
                const double zero_cut = kSigmaZeroRel * pf.sigma.front();
                std::size_t n_use = 0;
                while (n_use < pf.sigma.size() && n_use < k_old &&
                       pf.sigma[n_use] > zero_cut && pf.sigma[n_use] > 0.0)
                    ++n_use;
                std::vector<double> sigma_span(
                    pf.sigma.begin(), pf.sigma.begin() + static_cast<std::ptrdiff_t>(n_use));
                Matrix c = projection_coefficients(entry, pf.u.left_columns(n_use), sigma_span);
                sigma_prime = surrogate_singular_values(c, sigma_span);
            }

            std::vector<double> sigma_tau = assemble_singular_vector(sigma_prime, nb.sigma_hat);
            const ThresholdCheck chk = check_threshold_satisfaction(sigma_tau, eps, r_sq);
            std::vector<double> lambda_tau = scale.mode == ProjectionMode::gpm
                                                 ? ones(sigma_tau.size())
                                                 : compute_importance(sigma_tau, scale.alpha);
            accumulate_importance(entry, lambda_tau, nb.basis_cols);
            st.added = entry.count() - k_old;
            st.captured = chk.captured;
            st.required = chk.required;
        }
        st.total = entry.count();
        stats.push_back(st);
    }

    scale.advance_epsilon();
    return stats;
}

void export_importance_csv(const BasisMemory& mem, std::ostream& out) {
    out << "layer,basis_index,lambda\n";
    char buf[96];
    for (std::size_t l = 0; l < mem.layers.size(); ++l) {
        const auto& lambda = mem.layers[l].importance;
        for (std::size_t i = 0; i < lambda.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g\n", l, i, lambda[i]);
            out << buf;
        }
    }
}

void BasisMemory::save(const std::string& path) const {
    auto out = detail::open_out(path);
    detail::write_magic(out, kMemMagic);
    detail::write_le<std::uint32_t>(out, kMemVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layers.size()));
    for (const LayerBasis& l : layers) {
        detail::write_le<std::uint64_t>(out, l.basis.rows());
        detail::write_le<std::uint64_t>(out, l.basis.cols());
        detail::write_f64_vec(out, l.basis.data());
        detail::write_f64_vec(out, l.importance);
    }
}

BasisMemory BasisMemory::load(const std::string& path) {
    auto in = detail::open_in(path);
    detail::expect_magic(in, kMemMagic, "memory checkpoint");
    detail::expect_version(in, kMemVersion, "memory checkpoint");
    BasisMemory mem;
    const auto n_layers = detail::read_le<std::uint32_t>(in);
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        LayerBasis lb;
        const auto rows = detail::read_le<std::uint64_t>(in);
        const auto cols = detail::read_le<std::uint64_t>(in);
        auto data = detail::read_f64_vec(in);
        if (data.size() != rows * cols)
            throw IoError("memory checkpoint: basis size mismatch at layer " + std::to_string(l));
        if (rows * cols > 0) lb.basis = Matrix(rows, cols, std::move(data));
        lb.importance = detail::read_f64_vec(in);
        if (lb.importance.size() != cols)
            throw IoError("memory checkpoint: importance length mismatch at layer " +
                          std::to_string(l));
        mem.layers.push_back(std::move(lb));
    }
    return mem;
}

} // namespace sgp
