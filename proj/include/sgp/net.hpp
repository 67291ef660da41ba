#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgp/matrix.hpp"
#include "sgp/shape.hpp"

namespace sgp {

enum class LayerKind { dense, conv2d };
enum class Activation { relu, none };

// One backbone layer. No bias terms anywhere.
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    Activation activation = Activation::relu;
    // dense
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    // conv2d (valid padding)
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;

    static LayerSpec dense(std::size_t in, std::size_t out,
                           Activation act = Activation::relu);
    static LayerSpec conv(std::size_t in_c, std::size_t out_c, std::size_t kh,
                          std::size_t kw, std::size_t stride = 1,
                          Activation act = Activation::relu);
};

// Resolved geometry of a layer inside a concrete network.
struct LayerGeom {
    std::size_t in_c = 0, in_h = 0, in_w = 0;
    std::size_t out_c = 0, out_h = 0, out_w = 0;
    std::size_t weight_rows = 0; // output dim / out_channels
    std::size_t weight_cols = 0; // input dim / unfolded patch length
    std::size_t positions = 1;   // conv: out_h * out_w
    std::size_t in_flat() const { return in_c * in_h * in_w; }
    std::size_t out_flat() const { return out_c * out_h * out_w; }
};

// Captured layer inputs from a forward pass: per layer, one column per
// sample (dense) or per unfolded patch (conv), in (sample, position) order.
struct LayerActivations {
    std::vector<std::vector<std::vector<double>>> columns;
};

struct Gradients {
    std::vector<Matrix> layers; // same shape as each layer weight
    Matrix head;                // gradient of the task head
    std::size_t task_id = 0;
    double loss = 0.0;
};

// Feedforward net with per-task classifier heads. Weights are plain
// matrices: dense out x in, conv out_channels x (in_c*kh*kw), so a single
// right-side projection convention covers both kinds.
class Network {
public:
    Network() = default;
    Network(InputShape input, std::vector<LayerSpec> layers, std::uint64_t init_seed);

    std::size_t layer_count() const { return specs_.size(); }
    const LayerSpec& layer_spec(std::size_t l) const { return specs_[l]; }
    const LayerGeom& layer_geom(std::size_t l) const { return geoms_[l]; }
    const Matrix& layer_weight(std::size_t l) const { return weights_[l]; }
    Matrix& layer_weight(std::size_t l) { return weights_[l]; }

    std::size_t head_count() const { return heads_.size(); }
    std::size_t add_head(std::size_t classes, std::uint64_t seed);
    const Matrix& head_weight(std::size_t task_id) const;
    Matrix& head_weight(std::size_t task_id);
    std::size_t head_classes(std::size_t task_id) const;

    InputShape input_shape() const { return input_; }
    std::size_t feature_dim() const; // head input dimension

    // Logits for the given task head; batch is (samples x input flat dim).
    // When capture is non-null, per-layer inputs are recorded.
    Matrix forward(const Matrix& batch, std::size_t task_id,
                   LayerActivations* capture = nullptr) const;

    // Pre-head features only (no head applied).
    Matrix forward_features(const Matrix& batch,
                            LayerActivations* capture = nullptr) const;

    // Mean softmax cross-entropy gradients for every layer plus the task head.
    Gradients backward(const Matrix& batch, const std::vector<int>& labels,
                       std::size_t task_id) const;

    double accuracy(const Matrix& batch, const std::vector<int>& labels,
                    std::size_t task_id) const;

    void save(const std::string& path) const;
    static Network load(const std::string& path);

private:
    void check_task(std::size_t task_id) const;

    InputShape input_;
    std::vector<LayerSpec> specs_;
    std::vector<LayerGeom> geoms_;
    std::vector<Matrix> weights_;
    std::vector<Matrix> heads_;
};

// Representation matrix for one layer from captured activations: columns are
// the captured input/patch vectors. When more than max_cols columns were
// captured, a deterministic stride keeps exactly max_cols of them.
Matrix build_representation_matrix(const LayerActivations& acts, std::size_t layer,
                                   std::size_t max_cols);

} // namespace sgp
