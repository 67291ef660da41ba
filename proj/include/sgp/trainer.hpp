#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sgp/data.hpp"
#include "sgp/gpm.hpp"
#include "sgp/net.hpp"
#include "sgp/optim.hpp"

namespace sgp {

// r[i][j]: test accuracy on task j after training task i (0-based).
// Entries above the diagonal stay NaN.
struct AccuracyMatrix {
    std::size_t task_count = 0;
    std::vector<double> entries;

    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::size_t tasks);
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t i, std::size_t j);
    bool lower_triangle_filled() const;
};

struct Metrics {
    double acc = 0.0;
    std::optional<double> bwt; // undefined for a single task
};

// Mean final-row accuracy and mean backward transfer.
Metrics compute_metrics(const AccuracyMatrix& r);

// Mean diagonal difference between two runs of the same sequence.
double compute_relative_fwt(const AccuracyMatrix& r_a, const AccuracyMatrix& r_b);

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 16;
    std::size_t patience = 6;       // epochs without significant val improvement
    double min_improvement = 1e-3;  // significance threshold on val accuracy
    bool restore_best = true;       // reload best-validation weights per task
    double lr = 0.05;
    double lr_task_decay = 1.0;     // lr multiplied by this per task
    OptimKind optimizer = OptimKind::sgd;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    ScaleConfig scale;
    bool projection = true;     // false: plain sequential finetuning
    bool update_memory = true;  // false: plain sequential finetuning
    std::size_t n_s = 125;
    std::size_t rep_max_cols = 2048;
};

struct StepInfo {
    std::size_t task = 0;
    std::size_t epoch = 0;
    std::size_t step = 0; // global step index within the task
    double loss = 0.0;
};

struct TrainHooks {
    std::function<void(const StepInfo&, const Network&)> after_step;
    std::function<void(std::size_t task, const Network&, const BasisMemory&)> after_task;
};

// Per-task copy of every layer's importance vector.
using LambdaSnapshot = std::vector<std::vector<double>>;

struct TrainResult {
    Network net;
    BasisMemory memory;
    AccuracyMatrix accuracy;
    std::vector<LambdaSnapshot> lambda_history; // one snapshot per task
};

// Sequential task training: projected steps, per-task early stopping on
// validation accuracy, evaluation of all seen tasks after each task, then
// the basis-memory update. Throws NumericalError on non-finite loss.
TrainResult train_continual(Network net, const TaskSequence& tasks, const TrainConfig& cfg,
                            const TrainHooks& hooks = {});

// metrics.csv: header "after_task,task1..taskT", rows of the filled lower
// triangle; cells above the diagonal are empty.
void write_metrics_csv(const AccuracyMatrix& r, const std::string& path);

// importance_layer<L>.csv per layer: "task,basis_index,lambda" rows from the
// per-task snapshots. Returns the written file names.
std::vector<std::string> write_importance_history_csv(
    const std::vector<LambdaSnapshot>& history, const std::string& dir_prefix);

} // namespace sgp
