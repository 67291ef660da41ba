#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sgp/data.hpp"
#include "sgp/net.hpp"
#include "sgp/trainer.hpp"

namespace sgp {

enum class DatasetKind { synthetic, idx, permuted, file };
enum class Method { sgp, gpm, finetune };

std::string method_name(Method m);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::synthetic;
    SyntheticParams synthetic;
    // idx / permuted (permuted treats the whole pool as one base task and
    // derives `tasks` pixel-permuted variants of it)
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t classes_per_task = 0;
    double val_fraction = 0.05;
    // file (sequence dump)
    std::string path;
};

// One backbone layer as written in the config; input dims are inferred from
// the dataset shape when the network is materialized.
struct ParsedLayer {
    LayerKind kind = LayerKind::dense;
    Activation activation = Activation::relu;
    std::size_t out = 0; // dense output dim / conv out channels
    std::size_t kernel_h = 0, kernel_w = 0, stride = 1;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    std::vector<ParsedLayer> layers;
    TrainConfig train;
    std::vector<Method> methods = {Method::sgp, Method::gpm};
    std::string out_dir = "results";
    bool save_checkpoints = true;
    // echo of every effective key, in section order, for summary output
    std::vector<std::pair<std::string, std::string>> echo;
};

// Flat INI-style sections ([dataset]/[network]/[train]/[run]), '#' comments,
// key = value lines. Unknown sections or keys are rejected.
ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config_text(const std::string& text);

// Chain the parsed layers onto the input shape, filling inferred dimensions.
std::vector<LayerSpec> build_layer_specs(const InputShape& input,
                                         const std::vector<ParsedLayer>& layers);

// Materialize the task sequence; derives all generator seeds from the root
// training seed so every method sees identical data.
TaskSequence build_task_sequence(const ExperimentConfig& cfg);

} // namespace sgp
