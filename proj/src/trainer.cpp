#include "sgp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "sgp/rng.hpp"

namespace sgp {

AccuracyMatrix::AccuracyMatrix(std::size_t tasks)
    : task_count(tasks),
      entries(tasks * tasks, std::numeric_limits<double>::quiet_NaN()) {}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
    if (i >= task_count || j >= task_count)
        throw DimensionError("AccuracyMatrix: index out of range");
    return entries[i * task_count + j];
}

double& AccuracyMatrix::at(std::size_t i, std::size_t j) {
    if (i >= task_count || j >= task_count)
        throw DimensionError("AccuracyMatrix: index out of range");
    return entries[i * task_count + j];
}

bool AccuracyMatrix::lower_triangle_filled() const {
    for (std::size_t i = 0; i < task_count; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            if (std::isnan(at(i, j))) return false;
    return true;
}

Metrics compute_metrics(const AccuracyMatrix& r) {
    if (r.task_count == 0) throw DimensionError("compute_metrics: empty matrix");
    if (!r.lower_triangle_filled())
        throw ConsistencyError("compute_metrics: lower triangle not fully filled");
    const std::size_t t_last = r.task_count - 1;
    Metrics m;
    double acc = 0.0;
    for (std::size_t i = 0; i < r.task_count; ++i) acc += r.at(t_last, i);
    m.acc = acc / static_cast<double>(r.task_count);
    if (r.task_count >= 2) {
        double bwt = 0.0;
        for (std::size_t i = 0; i < t_last; ++i) bwt += r.at(t_last, i) - r.at(i, i);
        m.bwt = bwt / static_cast<double>(t_last);
    }
    return m;
}

double compute_relative_fwt(const AccuracyMatrix& r_a, const AccuracyMatrix& r_b) {
    if (r_a.task_count != r_b.task_count || r_a.task_count == 0)
        throw DimensionError("compute_relative_fwt: matrices have different task counts");
    double d = 0.0;
    for (std::size_t i = 0; i < r_a.task_count; ++i) d += r_a.at(i, i) - r_b.at(i, i);
    return d / static_cast<double>(r_a.task_count);
}

namespace {

struct WeightSnapshot {
    std::vector<Matrix> layers;
    Matrix head;
};

WeightSnapshot snapshot(const Network& net, std::size_t task) {
    WeightSnapshot s;
    for (std::size_t l = 0; l < net.layer_count(); ++l) s.layers.push_back(net.layer_weight(l));
    s.head = net.head_weight(task);
    return s;
}

void restore(Network& net, std::size_t task, const WeightSnapshot& s) {
    for (std::size_t l = 0; l < net.layer_count(); ++l) net.layer_weight(l) = s.layers[l];
    net.head_weight(task) = s.head;
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx, std::size_t begin,
                   std::size_t end) {
    Matrix out(end - begin, x.cols());
    for (std::size_t n = begin; n < end; ++n)
        for (std::size_t d = 0; d < x.cols(); ++d) out(n - begin, d) = x(idx[n], d);
    return out;
}

} // namespace

TrainResult train_continual(Network net, const TaskSequence& tasks, const TrainConfig& cfg,
                            const TrainHooks& hooks) {
    if (tasks.size() == 0) throw ConfigError("train_continual: empty task sequence");
    if (cfg.epochs == 0 || cfg.batch_size == 0)
        throw ConfigError("train_continual: epochs and batch_size must be positive");
    cfg.scale.validate(tasks.size(), net.layer_count());

    TrainResult result;
    result.memory = BasisMemory::empty_for_layers(net.layer_count());
    result.accuracy = AccuracyMatrix(tasks.size());
    const BasisMemory no_memory = BasisMemory::empty_for_layers(net.layer_count());

    ScaleConfig scale = cfg.scale; // epsilon advances across tasks
    double lr = cfg.lr;

    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const TaskDataset& task = tasks.tasks[t];
        if (task.train.size() == 0)
            throw ConfigError("train_continual: task " + std::to_string(task.task_id) +
                              " has no training data");
        net.add_head(task.class_count, derive_seed(cfg.seed, "head", t));

        OptimizerState opt =
            cfg.optimizer == OptimKind::sgd
                ? OptimizerState::sgd(lr)
                : OptimizerState::adam(cfg.optimizer, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

        const BasisMemory& step_mem = cfg.projection ? result.memory : no_memory;
        const SplitData& val = task.validation.size() > 0 ? task.validation : task.train;

        double best_val = -1.0;
        WeightSnapshot best;
        std::size_t stall = 0;
        std::size_t step = 0;

        std::vector<std::size_t> order(task.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            auto eng = make_engine(cfg.seed, "shuffle", t * 100003 + epoch);
            for (std::size_t i = order.size(); i-- > 1;) {
                std::uniform_int_distribution<std::size_t> pick(0, i);
                std::swap(order[i], order[pick(eng)]);
            }
            for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
                const std::size_t end = std::min(begin + cfg.batch_size, order.size());
                Matrix xb = gather_rows(task.train.x, order, begin, end);
                std::vector<int> yb(end - begin);
                for (std::size_t n = begin; n < end; ++n) yb[n - begin] = task.train.y[order[n]];

                Gradients grads = net.backward(xb, yb, t);
                if (!std::isfinite(grads.loss))
                    throw NumericalError("train_continual: non-finite loss at task " +
                                         std::to_string(task.task_id) + ", epoch " +
                                         std::to_string(epoch) + ", step " +
                                         std::to_string(step));
                apply_step(net, grads, step_mem, opt);
                ++step;
                if (hooks.after_step) hooks.after_step({t, epoch, step, grads.loss}, net);
            }

            const double val_acc = net.accuracy(val.x, val.y, t);
            if (val_acc > best_val + cfg.min_improvement) {
                best_val = val_acc;
                best = snapshot(net, t);
                stall = 0;
            } else if (++stall >= cfg.patience) {
                break;
            }
        }
        if (cfg.restore_best && !best.layers.empty()) restore(net, t, best);

        for (std::size_t j = 0; j <= t; ++j) {
            const TaskDataset& prev = tasks.tasks[j];
            result.accuracy.at(t, j) = net.accuracy(prev.test.x, prev.test.y, j);
        }

        if (cfg.update_memory) {
            MemoryUpdateOptions opts;
            opts.n_s = cfg.n_s;
            opts.rep_max_cols = cfg.rep_max_cols;
            opts.sample_seed = derive_seed(cfg.seed, "repsample", t);
            update_memory_after_task(net, task, result.memory, scale, opts);
        }

        LambdaSnapshot snap;
        for (const LayerBasis& l : result.memory.layers) snap.push_back(l.importance);
        result.lambda_history.push_back(std::move(snap));

        if (hooks.after_task) hooks.after_task(t, net, result.memory);
        lr *= cfg.lr_task_decay;
    }

    result.net = std::move(net);
    return result;
}

void write_metrics_csv(const AccuracyMatrix& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "after_task";
    for (std::size_t j = 0; j < r.task_count; ++j) out << ",task" << (j + 1);
    out << "\n";
    char buf[96];
    for (std::size_t i = 0; i < r.task_count; ++i) {
        out << (i + 1);
        for (std::size_t j = 0; j < r.task_count; ++j) {
            if (j <= i && !std::isnan(r.at(i, j))) {
                std::snprintf(buf, sizeof(buf), ",%.17g", r.at(i, j));
                out << buf;
            } else {
                out << ",";
            }
        }
        out << "\n";
    }
}

std::vector<std::string> write_importance_history_csv(
    const std::vector<LambdaSnapshot>& history, const std::string& dir_prefix) {
    std::vector<std::string> written;
    if (history.empty()) return written;
    const std::size_t layer_count = history.front().size();
    char buf[96];
    for (std::size_t l = 0; l < layer_count; ++l) {
        const std::string path = dir_prefix + "importance_layer" + std::to_string(l) + ".csv";
        std::ofstream out(path);
        if (!out) throw IoError("cannot open for writing: " + path);
        out << "task,basis_index,lambda\n";
        for (std::size_t t = 0; t < history.size(); ++t) {
            if (l >= history[t].size()) continue;
            const auto& lambda = history[t][l];
            for (std::size_t i = 0; i < lambda.size(); ++i) {
                std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g\n", t + 1, i, lambda[i]);
                out << buf;
            }
        }
        written.push_back(path);
    }
    return written;
}

} // namespace sgp
