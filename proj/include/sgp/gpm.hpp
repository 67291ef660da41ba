#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgp/data.hpp"
#include "sgp/matrix.hpp"
#include "sgp/net.hpp"

namespace sgp {

// gpm: every stored basis fully blocks its direction (importance pinned to 1).
// sgp: importance derived from singular values scales the blocking.
enum class ProjectionMode { gpm, sgp };

struct ScaleConfig {
    double alpha = 1.0;
    std::vector<double> epsilon_th = {0.97}; // single value broadcasts to all layers
    double epsilon_increment = 0.0;          // added per task, after each memory update
    ProjectionMode mode = ProjectionMode::sgp;

    double epsilon_for_layer(std::size_t layer) const;
    void advance_epsilon();
    // epsilon must stay inside (0,1) across all tasks of a run.
    void validate(std::size_t task_count, std::size_t layer_count) const;
};

// Per-layer memory: orthonormal basis columns of the stored input subspace
// plus the accumulated importance of each column.
struct LayerBasis {
    Matrix basis;                   // input_dim x k, orthonormal columns
    std::vector<double> importance; // aligned with basis columns, each in [0,1]
    std::size_t count() const { return importance.size(); }
    bool empty() const { return importance.empty(); }
};

struct BasisMemory {
    std::vector<LayerBasis> layers;

    static BasisMemory empty_for_layers(std::size_t layer_count);

    void save(const std::string& path) const;
    static BasisMemory load(const std::string& path);
};

// importance_i = (alpha+1) s_i / (alpha s_i + max(s)); exactly 1 at the
// maximum entry, in (0,1] elsewhere. The input need not be sorted (combined
// surrogate/new vectors are not).
std::vector<double> compute_importance(const std::vector<double>& sigma, double alpha);

// grad - grad * (B diag(importance) B^T) for an out x in gradient.
// Empty memory passes the gradient through unchanged.
Matrix project_gradient(const Matrix& grad, const LayerBasis& mem);

struct ResidualSplit {
    Matrix residual;  // component orthogonal to the stored basis
    Matrix projected; // component inside the stored span
};
ResidualSplit compute_residual(const Matrix& r, const LayerBasis& mem);

struct NewBases {
    Matrix basis_cols;             // left singular vectors of the residual
    std::vector<double> sigma_hat; // their singular values
    std::size_t count() const { return sigma_hat.size(); }
};

// Smallest set of residual directions such that, together with the mass
// already captured by the stored span, the epsilon_th fraction of the full
// representation's squared norm is reached. May be empty.
NewBases select_new_bases(const Matrix& residual, const Matrix& r_projected,
                          const Matrix& r_full, double epsilon_th);

// C = B^T U for left singular vectors U of the in-span part. Columns with a
// singular value above the zero threshold must lie in span(B) (residual
// <= 1e-6), otherwise a ConsistencyError is thrown; zero-sigma columns are
// exempt since they contribute nothing downstream.
Matrix projection_coefficients(const LayerBasis& mem, const Matrix& u_span,
                               const std::vector<double>& sigma_span);

// sigma'_i = sqrt(sum_j c_ij^2 sigma_j^2): redistributes the in-span
// singular mass onto the stored bases. Output length = rows of c.
std::vector<double> surrogate_singular_values(const Matrix& c,
                                              const std::vector<double>& sigma_span);

// Concatenation [sigma_prime; sigma_hat] covering old-then-new bases.
std::vector<double> assemble_singular_vector(const std::vector<double>& sigma_prime,
                                             const std::vector<double>& sigma_hat);

struct ThresholdCheck {
    double captured; // sum of squared assembled singular values
    double required; // epsilon_th * squared norm of the full representation
    bool satisfied(double slack_rel = 1e-8) const;
};

// Two sides of the capture inequality the assembled vector must satisfy.
ThresholdCheck threshold_satisfaction(const std::vector<double>& sigma_tau,
                                      double epsilon_th, double r_full_norm_sq);
// Same, but throws ConsistencyError when violated beyond 1e-8 relative slack.
ThresholdCheck check_threshold_satisfaction(const std::vector<double>& sigma_tau,
                                            double epsilon_th, double r_full_norm_sq);

// Importance accumulation and basis extension: old entries get
// min(1, old + new) with the first count() entries of lambda_tau, the
// remaining lambda_tau entries arrive with the appended basis columns.
// New columns are re-orthonormalized against the existing basis; columns
// that collapse below the drop tolerance are discarded together with their
// importance entry.
void accumulate_importance(LayerBasis& mem, const std::vector<double>& lambda_tau,
                           const Matrix& new_basis_cols, double drop_tol = 1e-8);

struct LayerUpdateStats {
    std::size_t layer = 0;
    std::size_t added = 0;
    std::size_t total = 0;
    double captured = 0.0;
    double required = 0.0;
    bool skipped = false; // representation was numerically zero
};

struct MemoryUpdateOptions {
    std::size_t n_s = 125;          // samples drawn from the task's train split
    std::size_t rep_max_cols = 2048;
    std::uint64_t sample_seed = 0;
};

// Post-task memory update: sample inputs, capture per-layer representations,
// split against the stored span, pick new bases, transfer in-span singular
// mass onto old bases, compute and accumulate importance, extend the basis.
// Advances config epsilon by its per-task increment afterwards.
std::vector<LayerUpdateStats> update_memory_after_task(const Network& net,
                                                       const TaskDataset& task,
                                                       BasisMemory& mem, ScaleConfig& scale,
                                                       const MemoryUpdateOptions& opts);

// CSV rows "layer,basis_index,lambda" for every stored basis.
void export_importance_csv(const BasisMemory& mem, std::ostream& out);

} // namespace sgp
