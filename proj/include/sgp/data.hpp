#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgp/matrix.hpp"
#include "sgp/shape.hpp"

namespace sgp {

// One split of a task: sample rows plus integer labels.
struct SplitData {
    Matrix x; // samples x flat input dim
    std::vector<int> y;
    std::size_t size() const { return y.size(); }
};

struct TaskDataset {
    std::size_t task_id = 0; // 1-based, consecutive within a sequence
    std::size_t class_count = 0;
    InputShape shape;
    SplitData train;
    SplitData validation;
    SplitData test;
};

struct TaskSequence {
    std::vector<TaskDataset> tasks;
    std::string provenance; // generator name + seed, or file source + split spec
    std::size_t size() const { return tasks.size(); }
};

// Synthetic continual benchmark: per class an isotropic Gaussian cluster
// whose mean lies on the unit sphere (scaled by `separation`). Means mix a
// per-class-index direction shared across tasks with a task-private
// direction, so consecutive tasks overlap in input (hence gradient) space;
// `shared_weight` in [0,1] controls how strongly.
struct SyntheticParams {
    std::uint64_t seed = 1;
    std::size_t tasks = 5;
    std::size_t classes_per_task = 3;
    std::size_t dim = 32;
    std::size_t samples_per_class = 120; // train samples per class
    double cluster_spread = 0.2;         // Gaussian noise sigma
    double separation = 1.0;            // scale applied to the unit-sphere mean
    double shared_weight = 0.5;
    double val_fraction = 0.05;         // of train size, at least 1 sample per class
    std::size_t test_per_class = 25;
};

TaskSequence gen_synthetic_split(const SyntheticParams& params);

// Fixed seeded pixel permutation per task; task 1 is the identity.
TaskSequence gen_permuted(std::uint64_t seed, const TaskDataset& base, std::size_t tasks);

// Raw labeled pool, e.g. straight from an IDX file pair.
struct LabeledPool {
    std::vector<std::vector<double>> features;
    std::vector<int> labels;
    InputShape shape;
    std::size_t size() const { return labels.size(); }
};

// IDX format: big-endian magic 0x00000803 (ubyte rank-3 images) /
// 0x00000801 (ubyte labels), big-endian u32 dimension sizes, row-major
// pixel bytes. Pixels are scaled to [0,1].
LabeledPool load_idx(const std::string& images_path, const std::string& labels_path);

// Partition a pool covering a contiguous class range into tasks of
// classes_per_task consecutive classes each, labels remapped per task.
// Validation (and, when no test pool is given, test) samples are carved
// from the train pool with a seeded per-class shuffle.
struct SplitByClassOptions {
    double val_fraction = 0.05;
    double test_fraction = 0.1; // used only when test_pool is null
    std::uint64_t seed = 1;
};

TaskSequence split_by_class(const LabeledPool& pool, std::size_t classes_per_task,
                            const SplitByClassOptions& opts,
                            const LabeledPool* test_pool = nullptr);

// Versioned binary dump of a TaskSequence, round-trip lossless.
void save_sequence(const TaskSequence& seq, const std::string& path);
TaskSequence load_sequence(const std::string& path);

} // namespace sgp
