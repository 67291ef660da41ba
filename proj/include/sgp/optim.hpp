#pragma once

#include <vector>

#include "sgp/gpm.hpp"
#include "sgp/matrix.hpp"
#include "sgp/net.hpp"

namespace sgp {

enum class OptimKind { sgd, adam_gp, adam_preprojected };

// Per-run optimizer state. Moment accumulators are allocated lazily to the
// gradient shapes on the first step after a reset.
struct OptimizerState {
    OptimKind kind = OptimKind::sgd;
    double eta = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    std::vector<Matrix> m_layers, v_layers;
    Matrix m_head, v_head;
    long t = 0;

    static OptimizerState sgd(double eta);
    static OptimizerState adam(OptimKind kind, double eta, double beta1 = 0.9,
                               double beta2 = 0.999, double eps = 1e-8);

    void reset();
};

// W -= eta * projected(grad) per layer; the task head is updated without
// projection.
void sgd_step(Network& net, const Gradients& grads, const BasisMemory& mem,
              OptimizerState& state);

// Adam moments accumulate the RAW gradients; the projection is applied to
// Adam's output m_hat/(sqrt(v_hat)+eps) just before the weight update, which
// keeps the update orthogonal to fully-blocked bases.
void adam_gp_step(Network& net, const Gradients& grads, const BasisMemory& mem,
                  OptimizerState& state);

// Diagnostic baseline: project the gradient FIRST, then run standard Adam on
// it. The per-coordinate rescaling inside Adam re-introduces components along
// stored bases once the moment histories differ across coordinates.
void adam_preprojected_step(Network& net, const Gradients& grads, const BasisMemory& mem,
                            OptimizerState& state);

// Dispatch on state.kind.
void apply_step(Network& net, const Gradients& grads, const BasisMemory& mem,
                OptimizerState& state);

} // namespace sgp
