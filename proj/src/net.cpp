#include "sgp/net.hpp"

#include <cmath>
#include <random>
#include <string>

#include "sgp/binary_io.hpp"
#include "sgp/rng.hpp"

namespace sgp {

namespace {

constexpr char kNetMagic[4] = {'S', 'G', 'P', 'N'};
constexpr std::uint32_t kNetVersion = 1;

Matrix init_weight(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix w(rows, cols);
    for (double& v : w.data()) v = dist(eng);
    return w;
}

// Unfold one sample (flattened c,h,w) into an im2col patch matrix of shape
// (in_c*kh*kw) x (out_h*out_w). Patch entries ordered channel-major, then
// kernel row, then kernel column.
void im2col(const double* sample, const LayerGeom& g, const LayerSpec& s, Matrix& patches) {
    const std::size_t plane = g.in_h * g.in_w;
    std::size_t pos = 0;
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow, ++pos) {
            std::size_t row = 0;
            for (std::size_t ic = 0; ic < g.in_c; ++ic) {
                for (std::size_t kh = 0; kh < s.kernel_h; ++kh) {
                    const std::size_t ih = oh * s.stride + kh;
                    const double* base = sample + ic * plane + ih * g.in_w + ow * s.stride;
                    for (std::size_t kw = 0; kw < s.kernel_w; ++kw)
                        patches(row++, pos) = base[kw];
                }
            }
        }
    }
}

// Scatter patch-space gradients back to the input tensor (adjoint of im2col).
void col2im_accumulate(const Matrix& dpatches, const LayerGeom& g, const LayerSpec& s,
                       double* dsample) {
    const std::size_t plane = g.in_h * g.in_w;
    std::size_t pos = 0;
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow, ++pos) {
            std::size_t row = 0;
            for (std::size_t ic = 0; ic < g.in_c; ++ic) {
                for (std::size_t kh = 0; kh < s.kernel_h; ++kh) {
                    const std::size_t ih = oh * s.stride + kh;
                    double* base = dsample + ic * plane + ih * g.in_w + ow * s.stride;
                    for (std::size_t kw = 0; kw < s.kernel_w; ++kw)
                        base[kw] += dpatches(row++, pos);
                }
            }
        }
    }
}

void apply_activation(Matrix& m, Activation act) {
    if (act == Activation::relu)
        for (double& v : m.data())
            if (v < 0.0) v = 0.0;
}

// Row-wise softmax probabilities, numerically stabilized.
Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double mx = p(r, 0);
        for (std::size_t c = 1; c < p.cols(); ++c) mx = std::max(mx, p(r, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            p(r, c) = std::exp(p(r, c) - mx);
            sum += p(r, c);
        }
        for (std::size_t c = 0; c < p.cols(); ++c) p(r, c) /= sum;
    }
    return p;
}

} // namespace

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.activation = act;
    s.input_dim = in;
    s.output_dim = out;
    return s;
}

LayerSpec LayerSpec::conv(std::size_t in_c, std::size_t out_c, std::size_t kh,
                          std::size_t kw, std::size_t stride, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.activation = act;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.stride = stride;
    return s;
}

Network::Network(InputShape input, std::vector<LayerSpec> layers, std::uint64_t init_seed)
    : input_(input), specs_(std::move(layers)) {
    if (input_.flat() == 0) throw ConfigError("Network: input shape has zero size");
    InputShape cur = input_;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
        const LayerSpec& s = specs_[l];
        LayerGeom g;
        g.in_c = cur.channels;
        g.in_h = cur.height;
        g.in_w = cur.width;
        if (s.kind == LayerKind::dense) {
            if (s.input_dim == 0 || s.output_dim == 0)
                throw ConfigError("Network: dense layer " + std::to_string(l) +
                                  " has zero dimension");
            if (s.input_dim != cur.flat())
                throw DimensionError("Network: dense layer " + std::to_string(l) +
                                     " expects input " + std::to_string(s.input_dim) +
                                     ", chain provides " + std::to_string(cur.flat()));
            g.out_c = s.output_dim;
            g.out_h = g.out_w = 1;
            g.weight_rows = s.output_dim;
            g.weight_cols = s.input_dim;
            g.positions = 1;
        } else {
            if (s.in_channels == 0 || s.out_channels == 0 || s.kernel_h == 0 ||
                s.kernel_w == 0 || s.stride == 0)
                throw ConfigError("Network: conv layer " + std::to_string(l) +
                                  " has zero dimension");
            if (s.in_channels != cur.channels)
                throw DimensionError("Network: conv layer " + std::to_string(l) +
                                     " expects " + std::to_string(s.in_channels) +
                                     " channels, chain provides " +
                                     std::to_string(cur.channels));
            if (cur.height < s.kernel_h || cur.width < s.kernel_w)
                throw DimensionError("Network: conv layer " + std::to_string(l) +
                                     " kernel exceeds input size");
            g.out_c = s.out_channels;
            g.out_h = (cur.height - s.kernel_h) / s.stride + 1;
            g.out_w = (cur.width - s.kernel_w) / s.stride + 1;
            g.weight_rows = s.out_channels;
            g.weight_cols = s.in_channels * s.kernel_h * s.kernel_w;
            g.positions = g.out_h * g.out_w;
        }
        geoms_.push_back(g);
        weights_.push_back(init_weight(g.weight_rows, g.weight_cols,
                                       derive_seed(init_seed, "layer", l)));
        cur = InputShape{g.out_c, g.out_h, g.out_w};
    }
}

std::size_t Network::feature_dim() const {
    if (geoms_.empty()) return input_.flat();
    return geoms_.back().out_flat();
}

std::size_t Network::add_head(std::size_t classes, std::uint64_t seed) {
    if (classes == 0) throw ConfigError("add_head: zero classes");
    heads_.push_back(init_weight(classes, feature_dim(), seed));
    return heads_.size() - 1;
}

void Network::check_task(std::size_t task_id) const {
    if (task_id >= heads_.size())
        throw DimensionError("no classifier head for task " + std::to_string(task_id) +
                             " (have " + std::to_string(heads_.size()) + ")");
}

const Matrix& Network::head_weight(std::size_t task_id) const {
    check_task(task_id);
    return heads_[task_id];
}

Matrix& Network::head_weight(std::size_t task_id) {
    check_task(task_id);
    return heads_[task_id];
}

std::size_t Network::head_classes(std::size_t task_id) const {
    check_task(task_id);
    return heads_[task_id].rows();
}

Matrix Network::forward_features(const Matrix& batch, LayerActivations* capture) const {
    if (batch.cols() != input_.flat())
        throw DimensionError("forward: batch has " + std::to_string(batch.cols()) +
                             " features, network expects " + std::to_string(input_.flat()));
    if (capture) capture->columns.assign(specs_.size(), {});

    Matrix act = batch;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
        const LayerSpec& s = specs_[l];
        const LayerGeom& g = geoms_[l];
        if (s.kind == LayerKind::dense) {
            if (capture)
                for (std::size_t n = 0; n < act.rows(); ++n)
                    capture->columns[l].push_back(
                        std::vector<double>(act.data().begin() + n * act.cols(),
                                            act.data().begin() + (n + 1) * act.cols()));
            Matrix z = matmul(act, transpose(weights_[l]));
            apply_activation(z, s.activation);
            act = std::move(z);
        } else {
            Matrix out(act.rows(), g.out_flat());
            Matrix patches(g.weight_cols, g.positions);
            for (std::size_t n = 0; n < act.rows(); ++n) {
                im2col(&act.data()[n * act.cols()], g, s, patches);
                if (capture)
                    for (std::size_t p = 0; p < g.positions; ++p)
                        capture->columns[l].push_back(patches.column(p));
                Matrix z = matmul(weights_[l], patches); // out_c x positions
                for (std::size_t oc = 0; oc < g.out_c; ++oc)
                    for (std::size_t p = 0; p < g.positions; ++p)
                        out(n, oc * g.positions + p) = z(oc, p);
            }
            apply_activation(out, s.activation);
            act = std::move(out);
        }
    }
    return act;
}

Matrix Network::forward(const Matrix& batch, std::size_t task_id,
                        LayerActivations* capture) const {
    check_task(task_id);
    return matmul(forward_features(batch, capture), transpose(heads_[task_id]));
}

Gradients Network::backward(const Matrix& batch, const std::vector<int>& labels,
                            std::size_t task_id) const {
    check_task(task_id);
    if (batch.rows() == 0) throw DimensionError("backward: empty batch");
    if (labels.size() != batch.rows())
        throw DimensionError("backward: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(batch.rows()) + " samples");
    const std::size_t classes = heads_[task_id].rows();
    for (std::size_t n = 0; n < labels.size(); ++n)
        if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= classes)
            throw ConfigError("backward: label " + std::to_string(labels[n]) +
                              " out of range for " + std::to_string(classes) + " classes");

    // Forward pass keeping each layer's input and post-activation output.
    std::vector<Matrix> inputs;   // per layer: batch x in_flat
    std::vector<Matrix> outputs;  // per layer: batch x out_flat, post-activation
    Matrix act = batch;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
        const LayerSpec& s = specs_[l];
        const LayerGeom& g = geoms_[l];
        inputs.push_back(act);
        if (s.kind == LayerKind::dense) {
            Matrix z = matmul(act, transpose(weights_[l]));
            apply_activation(z, s.activation);
            act = std::move(z);
        } else {
            Matrix out(act.rows(), g.out_flat());
            Matrix patches(g.weight_cols, g.positions);
            for (std::size_t n = 0; n < act.rows(); ++n) {
                im2col(&act.data()[n * act.cols()], g, s, patches);
                Matrix z = matmul(weights_[l], patches);
                for (std::size_t oc = 0; oc < g.out_c; ++oc)
                    for (std::size_t p = 0; p < g.positions; ++p)
                        out(n, oc * g.positions + p) = z(oc, p);
            }
            apply_activation(out, s.activation);
            act = std::move(out);
        }
        outputs.push_back(act);
    }

    const Matrix& features = specs_.empty() ? batch : outputs.back();
    Matrix logits = matmul(features, transpose(heads_[task_id]));
    Matrix probs = softmax_rows(logits);

    const double inv_batch = 1.0 / static_cast<double>(batch.rows());
    double loss = 0.0;
    Matrix dlogits = probs;
    for (std::size_t n = 0; n < batch.rows(); ++n) {
        const auto y = static_cast<std::size_t>(labels[n]);
        loss -= std::log(std::max(probs(n, y), 1e-300));
        dlogits(n, y) -= 1.0;
    }
    loss *= inv_batch;
    for (double& v : dlogits.data()) v *= inv_batch;

    Gradients grads;
    grads.task_id = task_id;
    grads.loss = loss;
    grads.head = matmul_tn(dlogits, features); // classes x feat
    grads.layers.resize(specs_.size());

    Matrix dact = matmul(dlogits, heads_[task_id]); // batch x feat
    for (std::size_t li = specs_.size(); li-- > 0;) {
        const LayerSpec& s = specs_[li];
        const LayerGeom& g = geoms_[li];
        // Through the activation: post-activation output > 0 identifies the
        // pass-through entries of ReLU (output 0 blocks the gradient).
        if (s.activation == Activation::relu) {
            const Matrix& out = outputs[li];
            for (std::size_t i = 0; i < dact.data().size(); ++i)
                if (out.data()[i] <= 0.0) dact.data()[i] = 0.0;
        }
        if (s.kind == LayerKind::dense) {
            grads.layers[li] = matmul_tn(dact, inputs[li]); // out x in
            dact = matmul(dact, weights_[li]);              // batch x in
        } else {
            Matrix dw(g.weight_rows, g.weight_cols);
            Matrix dinput(inputs[li].rows(), g.in_flat());
            Matrix patches(g.weight_cols, g.positions);
            Matrix dz(g.out_c, g.positions);
            for (std::size_t n = 0; n < inputs[li].rows(); ++n) {
                im2col(&inputs[li].data()[n * g.in_flat()], g, s, patches);
                for (std::size_t oc = 0; oc < g.out_c; ++oc)
                    for (std::size_t p = 0; p < g.positions; ++p)
                        dz(oc, p) = dact(n, oc * g.positions + p);
                // dW += dz * patches^T
                for (std::size_t oc = 0; oc < g.out_c; ++oc)
                    for (std::size_t p = 0; p < g.positions; ++p) {
                        const double d = dz(oc, p);
                        if (d == 0.0) continue;
                        for (std::size_t r = 0; r < g.weight_cols; ++r)
                            dw(oc, r) += d * patches(r, p);
                    }
                Matrix dpatches = matmul_tn(weights_[li], dz); // patch_len x positions
                col2im_accumulate(dpatches, g, s, &dinput.data()[n * g.in_flat()]);
            }
            grads.layers[li] = std::move(dw);
            dact = std::move(dinput);
        }
    }
    return grads;
}

double Network::accuracy(const Matrix& batch, const std::vector<int>& labels,
                         std::size_t task_id) const {
    if (batch.rows() == 0) return 0.0;
    Matrix logits = forward(batch, task_id);
    std::size_t correct = 0;
    for (std::size_t n = 0; n < logits.rows(); ++n) {
        std::size_t arg = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits(n, c) > logits(n, arg)) arg = c;
        if (static_cast<int>(arg) == labels[n]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(batch.rows());
}

Matrix build_representation_matrix(const LayerActivations& acts, std::size_t layer,
                                   std::size_t max_cols) {
    if (layer >= acts.columns.size())
        throw DimensionError("build_representation_matrix: layer " + std::to_string(layer) +
                             " out of range");
    const auto& cols = acts.columns[layer];
    if (cols.empty())
        throw ConsistencyError("build_representation_matrix: no captured activations for layer " +
                               std::to_string(layer));
    if (max_cols == 0)
        throw ConfigError("build_representation_matrix: max_cols must be positive");

    const std::size_t total = cols.size();
    const std::size_t take = std::min(total, max_cols);
    Matrix r(cols.front().size(), take);
    for (std::size_t j = 0; j < take; ++j) {
        // evenly strided, order-preserving subsample
        const std::size_t src = j * total / take;
        const auto& col = cols[src];
        if (col.size() != r.rows())
            throw DimensionError("build_representation_matrix: inconsistent column length");
        for (std::size_t i = 0; i < r.rows(); ++i) r(i, j) = col[i];
    }
    return r;
}

void Network::save(const std::string& path) const {
    auto out = detail::open_out(path);
    detail::write_magic(out, kNetMagic);
    detail::write_le<std::uint32_t>(out, kNetVersion);
    detail::write_le<std::uint64_t>(out, input_.channels);
    detail::write_le<std::uint64_t>(out, input_.height);
    detail::write_le<std::uint64_t>(out, input_.width);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(specs_.size()));
    for (std::size_t l = 0; l < specs_.size(); ++l) {
        const LayerSpec& s = specs_[l];
        detail::write_le<std::uint8_t>(out, s.kind == LayerKind::dense ? 0 : 1);
        detail::write_le<std::uint8_t>(out, s.activation == Activation::relu ? 1 : 0);
        detail::write_le<std::uint64_t>(out, s.input_dim);
        detail::write_le<std::uint64_t>(out, s.output_dim);
        detail::write_le<std::uint64_t>(out, s.in_channels);
        detail::write_le<std::uint64_t>(out, s.out_channels);
        detail::write_le<std::uint64_t>(out, s.kernel_h);
        detail::write_le<std::uint64_t>(out, s.kernel_w);
        detail::write_le<std::uint64_t>(out, s.stride);
        detail::write_f64_vec(out, weights_[l].data());
    }
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(heads_.size()));
    for (const Matrix& h : heads_) {
        detail::write_le<std::uint64_t>(out, h.rows());
        detail::write_le<std::uint64_t>(out, h.cols());
        detail::write_f64_vec(out, h.data());
    }
}

Network Network::load(const std::string& path) {
    auto in = detail::open_in(path);
    detail::expect_magic(in, kNetMagic, "network checkpoint");
    detail::expect_version(in, kNetVersion, "network checkpoint");
    InputShape shape;
    shape.channels = detail::read_le<std::uint64_t>(in);
    shape.height = detail::read_le<std::uint64_t>(in);
    shape.width = detail::read_le<std::uint64_t>(in);
    const auto n_layers = detail::read_le<std::uint32_t>(in);
    std::vector<LayerSpec> specs;
    std::vector<std::vector<double>> weight_data;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        LayerSpec s;
        s.kind = detail::read_le<std::uint8_t>(in) == 0 ? LayerKind::dense : LayerKind::conv2d;
        s.activation = detail::read_le<std::uint8_t>(in) == 1 ? Activation::relu : Activation::none;
        s.input_dim = detail::read_le<std::uint64_t>(in);
        s.output_dim = detail::read_le<std::uint64_t>(in);
        s.in_channels = detail::read_le<std::uint64_t>(in);
        s.out_channels = detail::read_le<std::uint64_t>(in);
        s.kernel_h = detail::read_le<std::uint64_t>(in);
        s.kernel_w = detail::read_le<std::uint64_t>(in);
        s.stride = detail::read_le<std::uint64_t>(in);
        specs.push_back(s);
        weight_data.push_back(detail::read_f64_vec(in));
    }
    Network net(shape, specs, /*init_seed=*/0);
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        Matrix& w = net.weights_[l];
        if (weight_data[l].size() != w.rows() * w.cols())
            throw IoError("network checkpoint: weight size mismatch at layer " +
                          std::to_string(l));
        w = Matrix(w.rows(), w.cols(), std::move(weight_data[l]));
    }
    const auto n_heads = detail::read_le<std::uint32_t>(in);
    for (std::uint32_t h = 0; h < n_heads; ++h) {
        const auto rows = detail::read_le<std::uint64_t>(in);
        const auto cols = detail::read_le<std::uint64_t>(in);
        auto data = detail::read_f64_vec(in);
        if (data.size() != rows * cols) throw IoError("network checkpoint: head size mismatch");
        net.heads_.push_back(Matrix(rows, cols, std::move(data)));
    }
    return net;
}

} // namespace sgp
