#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgp/config.hpp"
#include "sgp/rng.hpp"
#include "sgp/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct MethodOutcome {
    sgp::Method method;
    sgp::Metrics metrics;
    sgp::AccuracyMatrix accuracy;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

sgp::TrainConfig train_config_for(const sgp::ExperimentConfig& cfg, sgp::Method method) {
    sgp::TrainConfig t = cfg.train;
    switch (method) {
        case sgp::Method::sgp:
            t.scale.mode = sgp::ProjectionMode::sgp;
            break;
        case sgp::Method::gpm:
            t.scale.mode = sgp::ProjectionMode::gpm;
            break;
        case sgp::Method::finetune:
            t.projection = false;
            t.update_memory = false;
            break;
    }
    return t;
}

void write_summary_json(const std::string& path, const sgp::ExperimentConfig& cfg,
                        sgp::Method method, const sgp::TrainResult& result,
                        const sgp::Metrics& metrics) {
    json j;
    j["method"] = sgp::method_name(method);
    j["seed"] = cfg.train.seed;
    j["tasks"] = result.accuracy.task_count;
    j["acc"] = metrics.acc;
    if (metrics.bwt)
        j["bwt"] = *metrics.bwt;
    else
        j["bwt"] = nullptr;
    json diag = json::array(), final_row = json::array();
    const std::size_t last = result.accuracy.task_count - 1;
    for (std::size_t i = 0; i < result.accuracy.task_count; ++i) {
        diag.push_back(result.accuracy.at(i, i));
        final_row.push_back(result.accuracy.at(last, i));
    }
    j["diag"] = diag;
    j["final_row"] = final_row;
    json echo = json::object();
    for (const auto& [key, value] : cfg.echo) echo[key] = value;
    j["config"] = echo;

    std::ofstream out(path);
    if (!out) throw sgp::IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

void write_comparison_csv(const std::string& path, const std::vector<MethodOutcome>& outcomes) {
    std::ofstream out(path);
    if (!out) throw sgp::IoError("cannot open for writing: " + path);
    out << "method_a,method_b,acc_a,acc_b,bwt_a,bwt_b,delta_fwt\n";
    for (std::size_t a = 0; a < outcomes.size(); ++a) {
        for (std::size_t b = a + 1; b < outcomes.size(); ++b) {
            const auto& oa = outcomes[a];
            const auto& ob = outcomes[b];
            out << sgp::method_name(oa.method) << "," << sgp::method_name(ob.method) << ","
                << fmt_double(oa.metrics.acc) << "," << fmt_double(ob.metrics.acc) << ","
                << (oa.metrics.bwt ? fmt_double(*oa.metrics.bwt) : "") << ","
                << (ob.metrics.bwt ? fmt_double(*ob.metrics.bwt) : "") << ","
                << fmt_double(sgp::compute_relative_fwt(oa.accuracy, ob.accuracy)) << "\n";
        }
    }
}

int run_experiment(const std::string& config_path, std::optional<std::uint64_t> seed,
                   std::optional<double> alpha, std::optional<double> epsilon_th,
                   const std::string& methods_override, const std::string& optimizer_override,
                   std::string out_override) {
    sgp::ExperimentConfig cfg = sgp::parse_experiment_config(config_path);
    if (seed) {
        cfg.train.seed = *seed;
        cfg.echo.push_back({"train.seed", std::to_string(*seed)});
    }
    if (alpha) {
        cfg.train.scale.alpha = *alpha;
        cfg.echo.push_back({"train.alpha", fmt_double(*alpha)});
    }
    if (epsilon_th) {
        cfg.train.scale.epsilon_th = {*epsilon_th};
        cfg.echo.push_back({"train.epsilon_th", fmt_double(*epsilon_th)});
    }
    if (!methods_override.empty()) {
        cfg.methods.clear();
        std::stringstream ss(methods_override);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item == "sgp") cfg.methods.push_back(sgp::Method::sgp);
            else if (item == "gpm") cfg.methods.push_back(sgp::Method::gpm);
            else if (item == "finetune") cfg.methods.push_back(sgp::Method::finetune);
            else throw sgp::ConfigError("unknown method '" + item + "'");
        }
        cfg.echo.push_back({"run.methods", methods_override});
    }
    if (!optimizer_override.empty()) {
        if (optimizer_override == "sgd") cfg.train.optimizer = sgp::OptimKind::sgd;
        else if (optimizer_override == "adam_gp") cfg.train.optimizer = sgp::OptimKind::adam_gp;
        else if (optimizer_override == "adam_pre")
            cfg.train.optimizer = sgp::OptimKind::adam_preprojected;
        else throw sgp::ConfigError("unknown optimizer '" + optimizer_override + "'");
        cfg.echo.push_back({"train.optimizer", optimizer_override});
    }
    if (out_override.empty()) {
        if (const char* env = std::getenv("SGP_OUT_DIR")) out_override = env;
    }
    if (!out_override.empty()) {
        cfg.out_dir = out_override;
        cfg.echo.push_back({"run.out", out_override});
    }

    // Everything that can fail on bad input happens before outputs exist.
    sgp::TaskSequence tasks = sgp::build_task_sequence(cfg);
    if (tasks.size() == 0) throw sgp::ConfigError("dataset produced no tasks");
    const sgp::InputShape input = tasks.tasks.front().shape;
    const std::vector<sgp::LayerSpec> specs = sgp::build_layer_specs(input, cfg.layers);
    {
        sgp::Network probe(input, specs, 0);
        sgp::TrainConfig probe_cfg = cfg.train;
        probe_cfg.scale.validate(tasks.size(), probe.layer_count());
    }

    fs::create_directories(cfg.out_dir);
    std::vector<MethodOutcome> outcomes;
    for (sgp::Method method : cfg.methods) {
        const sgp::TrainConfig tc = train_config_for(cfg, method);
        sgp::Network net(input, specs, sgp::derive_seed(tc.seed, "init"));
        sgp::TrainResult result = sgp::train_continual(std::move(net), tasks, tc);
        const sgp::Metrics metrics = sgp::compute_metrics(result.accuracy);

        const fs::path dir = fs::path(cfg.out_dir) / sgp::method_name(method);
        fs::create_directories(dir);
        sgp::write_metrics_csv(result.accuracy, (dir / "metrics.csv").string());
        write_summary_json((dir / "summary.json").string(), cfg, method, result, metrics);
        sgp::write_importance_history_csv(result.lambda_history, (dir / "").string());
        if (cfg.save_checkpoints) {
            result.net.save((dir / "net.ckpt").string());
            result.memory.save((dir / "memory.ckpt").string());
        }
        std::printf("%-9s ACC %.4f BWT %s\n", sgp::method_name(method).c_str(), metrics.acc,
                    metrics.bwt ? fmt_double(*metrics.bwt).c_str() : "n/a");
        outcomes.push_back({method, metrics, std::move(result.accuracy)});
    }
    write_comparison_csv((fs::path(cfg.out_dir) / "comparison.csv").string(), outcomes);
    return 0;
}

int inspect_memory(const std::string& checkpoint_path, const std::string& csv_path) {
    const sgp::BasisMemory mem = sgp::BasisMemory::load(checkpoint_path);
    std::printf("layers: %zu\n", mem.layers.size());
    for (std::size_t l = 0; l < mem.layers.size(); ++l) {
        const auto& lambda = mem.layers[l].importance;
        std::size_t full = 0;
        for (double v : lambda)
            if (v >= 1.0 - 1e-12) ++full;
        const double frac = lambda.empty() ? 0.0 : double(full) / double(lambda.size());
        std::printf("layer %zu: %zu bases, %zu at lambda=1 (fraction %.4f)\n", l,
                    lambda.size(), full, frac);
    }
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw sgp::IoError("cannot open for writing: " + csv_path);
        sgp::export_importance_csv(mem, out);
        std::printf("importance histogram written to %s\n", csv_path.c_str());
    } else {
        sgp::export_importance_csv(mem, std::cout);
    }
    return 0;
}

int gen_data(const std::string& config_path, std::optional<std::uint64_t> seed,
             const std::string& out_path) {
    sgp::ExperimentConfig cfg = sgp::parse_experiment_config(config_path);
    if (seed) cfg.train.seed = *seed;
    const sgp::TaskSequence tasks = sgp::build_task_sequence(cfg);
    sgp::save_sequence(tasks, out_path);
    std::printf("wrote %zu tasks to %s\n", tasks.size(), out_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual-learning benchmark runner: scaled gradient projection"};
    app.require_subcommand(1);

    std::string config_path, out_dir, methods, optimizer, csv_path, checkpoint, out_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha, epsilon_th;

    auto* run = app.add_subcommand("run", "Run the configured methods on one task sequence");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--seed", seed, "override the root seed");
    run->add_option("--alpha", alpha, "override the importance scale coefficient");
    run->add_option("--epsilon-th", epsilon_th, "override the capture threshold");
    run->add_option("--method", methods, "override the method list (comma separated)");
    run->add_option("--optimizer", optimizer, "override the optimizer (sgd|adam_gp|adam_pre)");
    run->add_option("--out", out_dir, "output directory (overrides SGP_OUT_DIR and config)");

    auto* inspect = app.add_subcommand("inspect-memory", "Report a basis memory checkpoint");
    inspect->add_option("checkpoint", checkpoint, "memory checkpoint path")->required();
    inspect->add_option("--csv", csv_path, "write the lambda histogram CSV here");

    auto* gen = app.add_subcommand("gen-data", "Materialize the configured dataset to a file");
    gen->add_option("--config", config_path, "experiment config file")->required();
    gen->add_option("--seed", seed, "override the root seed");
    gen->add_option("--out", out_path, "output file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return run_experiment(config_path, seed, alpha, epsilon_th, methods, optimizer,
                                  out_dir);
        if (inspect->parsed()) return inspect_memory(checkpoint, csv_path);
        if (gen->parsed()) return gen_data(config_path, seed, out_path);
    } catch (const sgp::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const sgp::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const sgp::NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
