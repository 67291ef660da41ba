#include "sgp/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sgp/rng.hpp"

namespace sgp {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

ParsedLayer parse_layer(const std::string& item) {
    const auto parts = [&] {
        std::vector<std::string> p;
        std::stringstream ss(item);
        std::string tok;
        while (std::getline(ss, tok, ':')) p.push_back(trim(tok));
        return p;
    }();
    if (parts.empty()) throw ConfigError("config: empty layer item");

    ParsedLayer layer;
    auto tail_activation = [&](std::size_t first_opt) {
        if (parts.size() > first_opt) {
            if (parts[first_opt] == "linear")
                layer.activation = Activation::none;
            else if (parts[first_opt] == "relu")
                layer.activation = Activation::relu;
            else
                throw ConfigError("config: unknown activation '" + parts[first_opt] +
                                  "' in layer '" + item + "'");
            if (parts.size() > first_opt + 1)
                throw ConfigError("config: trailing fields in layer '" + item + "'");
        }
    };

    if (parts[0] == "dense") {
        if (parts.size() < 2) throw ConfigError("config: dense layer needs an output size");
        layer.kind = LayerKind::dense;
        layer.out = parse_u64("layers", parts[1]);
        tail_activation(2);
    } else if (parts[0] == "conv") {
        if (parts.size() < 5)
            throw ConfigError("config: conv layer needs out_channels:kh:kw:stride");
        layer.kind = LayerKind::conv2d;
        layer.out = parse_u64("layers", parts[1]);
        layer.kernel_h = parse_u64("layers", parts[2]);
        layer.kernel_w = parse_u64("layers", parts[3]);
        layer.stride = parse_u64("layers", parts[4]);
        tail_activation(5);
    } else {
        throw ConfigError("config: unknown layer kind '" + parts[0] + "'");
    }
    if (layer.out == 0) throw ConfigError("config: layer output size must be positive");
    return layer;
}

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"dataset",
         {"kind", "tasks", "classes_per_task", "dim", "samples_per_class", "cluster_spread",
          "separation", "shared_weight", "val_fraction", "test_per_class", "train_images",
          "train_labels", "test_images", "test_labels", "path"}},
        {"network", {"layers"}},
        {"train",
         {"epochs", "batch_size", "patience", "min_improvement", "lr", "lr_task_decay",
          "optimizer", "beta1", "beta2", "adam_eps", "alpha", "epsilon_th",
          "epsilon_increment", "n_s", "rep_max_cols", "seed"}},
        {"run", {"methods", "out", "save_checkpoints"}},
    };
    return keys;
}

} // namespace

std::string method_name(Method m) {
    switch (m) {
        case Method::sgp: return "sgp";
        case Method::gpm: return "gpm";
        case Method::finetune: return "finetune";
    }
    return "?";
}

ExperimentConfig parse_experiment_config_text(const std::string& text) {
    // section -> ordered key/value pairs
    std::vector<std::pair<std::string, std::pair<std::string, std::string>>> kvs;
    std::string section;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": malformed section");
            section = trim(line.substr(1, line.size() - 2));
            if (!known_keys().count(section))
                throw ConfigError("config: unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError("config: key '" + key + "' before any section");
        if (!known_keys().at(section).count(key))
            throw ConfigError("config: unknown key '" + key + "' in section [" + section + "]");
        kvs.push_back({section, {key, value}});
    }

    ExperimentConfig cfg;
    bool saw_epsilon = false;
    for (const auto& [sec, kv] : kvs) {
        const auto& [key, value] = kv;
        if (sec == "dataset") {
            auto& d = cfg.dataset;
            if (key == "kind") {
                if (value == "synthetic") d.kind = DatasetKind::synthetic;
                else if (value == "idx") d.kind = DatasetKind::idx;
                else if (value == "permuted") d.kind = DatasetKind::permuted;
                else if (value == "file") d.kind = DatasetKind::file;
                else throw ConfigError("config: unknown dataset kind '" + value + "'");
            } else if (key == "tasks") d.synthetic.tasks = parse_u64(key, value);
            else if (key == "classes_per_task") {
                d.synthetic.classes_per_task = parse_u64(key, value);
                d.classes_per_task = d.synthetic.classes_per_task;
            } else if (key == "dim") d.synthetic.dim = parse_u64(key, value);
            else if (key == "samples_per_class") d.synthetic.samples_per_class = parse_u64(key, value);
            else if (key == "cluster_spread") d.synthetic.cluster_spread = parse_double(key, value);
            else if (key == "separation") d.synthetic.separation = parse_double(key, value);
            else if (key == "shared_weight") d.synthetic.shared_weight = parse_double(key, value);
            else if (key == "val_fraction") {
                d.synthetic.val_fraction = parse_double(key, value);
                d.val_fraction = d.synthetic.val_fraction;
            } else if (key == "test_per_class") d.synthetic.test_per_class = parse_u64(key, value);
            else if (key == "train_images") d.train_images = value;
            else if (key == "train_labels") d.train_labels = value;
            else if (key == "test_images") d.test_images = value;
            else if (key == "test_labels") d.test_labels = value;
            else if (key == "path") d.path = value;
        } else if (sec == "network") {
            if (key == "layers") {
                cfg.layers.clear();
                for (const std::string& item : split_list(value))
                    cfg.layers.push_back(parse_layer(item));
            }
        } else if (sec == "train") {
            auto& t = cfg.train;
            if (key == "epochs") t.epochs = parse_u64(key, value);
            else if (key == "batch_size") t.batch_size = parse_u64(key, value);
            else if (key == "patience") t.patience = parse_u64(key, value);
            else if (key == "min_improvement") t.min_improvement = parse_double(key, value);
            else if (key == "lr") t.lr = parse_double(key, value);
            else if (key == "lr_task_decay") t.lr_task_decay = parse_double(key, value);
            else if (key == "optimizer") {
                if (value == "sgd") t.optimizer = OptimKind::sgd;
                else if (value == "adam_gp") t.optimizer = OptimKind::adam_gp;
                else if (value == "adam_pre") t.optimizer = OptimKind::adam_preprojected;
                else throw ConfigError("config: unknown optimizer '" + value + "'");
            } else if (key == "beta1") t.beta1 = parse_double(key, value);
            else if (key == "beta2") t.beta2 = parse_double(key, value);
            else if (key == "adam_eps") t.adam_eps = parse_double(key, value);
            else if (key == "alpha") t.scale.alpha = parse_double(key, value);
            else if (key == "epsilon_th") {
                t.scale.epsilon_th.clear();
                for (const std::string& item : split_list(value))
                    t.scale.epsilon_th.push_back(parse_double(key, item));
                if (t.scale.epsilon_th.empty())
                    throw ConfigError("config: epsilon_th needs at least one value");
                saw_epsilon = true;
            } else if (key == "epsilon_increment") t.scale.epsilon_increment = parse_double(key, value);
            else if (key == "n_s") t.n_s = parse_u64(key, value);
            else if (key == "rep_max_cols") t.rep_max_cols = parse_u64(key, value);
            else if (key == "seed") t.seed = parse_u64(key, value);
        } else if (sec == "run") {
            if (key == "methods") {
                cfg.methods.clear();
                for (const std::string& item : split_list(value)) {
                    if (item == "sgp") cfg.methods.push_back(Method::sgp);
                    else if (item == "gpm") cfg.methods.push_back(Method::gpm);
                    else if (item == "finetune") cfg.methods.push_back(Method::finetune);
                    else throw ConfigError("config: unknown method '" + item + "'");
                }
                if (cfg.methods.empty()) throw ConfigError("config: methods list is empty");
            } else if (key == "out") cfg.out_dir = value;
            else if (key == "save_checkpoints") cfg.save_checkpoints = parse_bool(key, value);
        }
        cfg.echo.push_back({sec + "." + key, value});
    }
    (void)saw_epsilon;

    if (cfg.layers.empty())
        throw ConfigError("config: [network] layers must define at least one layer");
    return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config_text(ss.str());
}

std::vector<LayerSpec> build_layer_specs(const InputShape& input,
                                         const std::vector<ParsedLayer>& layers) {
    std::vector<LayerSpec> specs;
    InputShape cur = input;
    for (const ParsedLayer& p : layers) {
        if (p.kind == LayerKind::dense) {
            specs.push_back(LayerSpec::dense(cur.flat(), p.out, p.activation));
            cur = InputShape{p.out, 1, 1};
        } else {
            if (cur.height < p.kernel_h || cur.width < p.kernel_w)
                throw ConfigError("config: conv kernel exceeds input size");
            specs.push_back(
                LayerSpec::conv(cur.channels, p.out, p.kernel_h, p.kernel_w, p.stride,
                                p.activation));
            cur = InputShape{p.out, (cur.height - p.kernel_h) / p.stride + 1,
                             (cur.width - p.kernel_w) / p.stride + 1};
        }
    }
    return specs;
}

TaskSequence build_task_sequence(const ExperimentConfig& cfg) {
    switch (cfg.dataset.kind) {
        case DatasetKind::synthetic: {
            SyntheticParams p = cfg.dataset.synthetic;
            p.seed = derive_seed(cfg.train.seed, "data");
            return gen_synthetic_split(p);
        }
        case DatasetKind::idx: {
            if (cfg.dataset.train_images.empty() || cfg.dataset.train_labels.empty())
                throw ConfigError("config: idx dataset needs train_images and train_labels");
            if (cfg.dataset.classes_per_task == 0)
                throw ConfigError("config: idx dataset needs classes_per_task");
            LabeledPool train = load_idx(cfg.dataset.train_images, cfg.dataset.train_labels);
            SplitByClassOptions opts;
            opts.val_fraction = cfg.dataset.val_fraction;
            opts.seed = derive_seed(cfg.train.seed, "data");
            if (!cfg.dataset.test_images.empty()) {
                LabeledPool test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
                return split_by_class(train, cfg.dataset.classes_per_task, opts, &test);
            }
            return split_by_class(train, cfg.dataset.classes_per_task, opts);
        }
        case DatasetKind::permuted: {
            if (cfg.dataset.train_images.empty() || cfg.dataset.train_labels.empty())
                throw ConfigError("config: permuted dataset needs train_images and train_labels");
            LabeledPool train = load_idx(cfg.dataset.train_images, cfg.dataset.train_labels);
            if (train.size() == 0) throw ConfigError("config: permuted dataset pool is empty");
            int max_label = 0;
            for (int y : train.labels) max_label = std::max(max_label, y);
            SplitByClassOptions opts;
            opts.val_fraction = cfg.dataset.val_fraction;
            opts.seed = derive_seed(cfg.train.seed, "data");
            // one base task over the full class range, then seeded pixel
            // permutations of it
            TaskSequence base;
            if (!cfg.dataset.test_images.empty()) {
                LabeledPool test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
                base = split_by_class(train, static_cast<std::size_t>(max_label) + 1, opts,
                                      &test);
            } else {
                base = split_by_class(train, static_cast<std::size_t>(max_label) + 1, opts);
            }
            return gen_permuted(derive_seed(cfg.train.seed, "permute-data"),
                                base.tasks.front(), cfg.dataset.synthetic.tasks);
        }
        case DatasetKind::file: {
            if (cfg.dataset.path.empty())
                throw ConfigError("config: file dataset needs a path");
            return load_sequence(cfg.dataset.path);
        }
    }
    throw ConfigError("config: unreachable dataset kind");
}

} // namespace sgp
