#include "sgp/optim.hpp"

#include <cmath>
#include <string>

namespace sgp {

namespace {

void check_shapes(const Network& net, const Gradients& grads, const BasisMemory& mem) {
    if (grads.layers.size() != net.layer_count())
        throw DimensionError("optimizer: gradient count " + std::to_string(grads.layers.size()) +
                             " vs " + std::to_string(net.layer_count()) + " layers");
    if (mem.layers.size() != net.layer_count())
        throw DimensionError("optimizer: memory layer count mismatch");
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const Matrix& w = net.layer_weight(l);
        const Matrix& g = grads.layers[l];
        if (g.rows() != w.rows() || g.cols() != w.cols())
            throw DimensionError("optimizer: gradient shape mismatch at layer " +
                                 std::to_string(l));
    }
    const Matrix& h = net.head_weight(grads.task_id);
    if (grads.head.rows() != h.rows() || grads.head.cols() != h.cols())
        throw DimensionError("optimizer: head gradient shape mismatch");
}

void ensure_moments(OptimizerState& st, const Gradients& grads) {
    if (st.m_layers.size() != grads.layers.size()) {
        st.m_layers.clear();
        st.v_layers.clear();
        for (const Matrix& g : grads.layers) {
            st.m_layers.emplace_back(g.rows(), g.cols());
            st.v_layers.emplace_back(g.rows(), g.cols());
        }
    }
    if (st.m_head.rows() != grads.head.rows() || st.m_head.cols() != grads.head.cols()) {
        st.m_head = Matrix(grads.head.rows(), grads.head.cols());
        st.v_head = Matrix(grads.head.rows(), grads.head.cols());
    }
}

// In-place biased moment update; returns Adam's output direction
// m_hat / (sqrt(v_hat) + eps).
Matrix adam_direction(Matrix& m, Matrix& v, const Matrix& g, const OptimizerState& st) {
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    Matrix dir(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.data().size(); ++i) {
        const double gi = g.data()[i];
        m.data()[i] = st.beta1 * m.data()[i] + (1.0 - st.beta1) * gi;
        v.data()[i] = st.beta2 * v.data()[i] + (1.0 - st.beta2) * gi * gi;
        const double m_hat = m.data()[i] / bc1;
        const double v_hat = v.data()[i] / bc2;
        dir.data()[i] = m_hat / (std::sqrt(v_hat) + st.eps);
    }
    return dir;
}

void axpy(Matrix& w, const Matrix& g, double a) {
    for (std::size_t i = 0; i < w.data().size(); ++i) w.data()[i] += a * g.data()[i];
}

} // namespace

OptimizerState OptimizerState::sgd(double eta) {
    OptimizerState st;
    st.kind = OptimKind::sgd;
    st.eta = eta;
    return st;
}

OptimizerState OptimizerState::adam(OptimKind kind, double eta, double beta1, double beta2,
                                    double eps) {
    if (kind == OptimKind::sgd) throw ConfigError("OptimizerState::adam: kind is sgd");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("OptimizerState::adam: decay rates must lie in [0,1)");
    OptimizerState st;
    st.kind = kind;
    st.eta = eta;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.eps = eps;
    return st;
}

void OptimizerState::reset() {
    m_layers.clear();
    v_layers.clear();
    m_head = Matrix();
    v_head = Matrix();
    t = 0;
}

void sgd_step(Network& net, const Gradients& grads, const BasisMemory& mem,
              OptimizerState& state) {
    check_shapes(net, grads, mem);
    ++state.t;
    for (std::size_t l = 0; l < net.layer_count(); ++l)
        axpy(net.layer_weight(l), project_gradient(grads.layers[l], mem.layers[l]), -state.eta);
    axpy(net.head_weight(grads.task_id), grads.head, -state.eta);
}

void adam_gp_step(Network& net, const Gradients& grads, const BasisMemory& mem,
                  OptimizerState& state) {
    check_shapes(net, grads, mem);
    ensure_moments(state, grads);
    ++state.t;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        Matrix dir = adam_direction(state.m_layers[l], state.v_layers[l], grads.layers[l], state);
        axpy(net.layer_weight(l), project_gradient(dir, mem.layers[l]), -state.eta);
    }
    Matrix head_dir = adam_direction(state.m_head, state.v_head, grads.head, state);
    axpy(net.head_weight(grads.task_id), head_dir, -state.eta);
}

void adam_preprojected_step(Network& net, const Gradients& grads, const BasisMemory& mem,
                            OptimizerState& state) {
    check_shapes(net, grads, mem);
    ensure_moments(state, grads);
    ++state.t;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const Matrix projected = project_gradient(grads.layers[l], mem.layers[l]);
        Matrix dir = adam_direction(state.m_layers[l], state.v_layers[l], projected, state);
        axpy(net.layer_weight(l), dir, -state.eta);
    }
    Matrix head_dir = adam_direction(state.m_head, state.v_head, grads.head, state);
    axpy(net.head_weight(grads.task_id), head_dir, -state.eta);
}

void apply_step(Network& net, const Gradients& grads, const BasisMemory& mem,
                OptimizerState& state) {
    switch (state.kind) {
        case OptimKind::sgd: sgd_step(net, grads, mem, state); break;
        case OptimKind::adam_gp: adam_gp_step(net, grads, mem, state); break;
        case OptimKind::adam_preprojected: adam_preprojected_step(net, grads, mem, state); break;
    }
}

} // namespace sgp
