#include "sgp/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sgp/binary_io.hpp"
#include "sgp/rng.hpp"

namespace sgp {

namespace {

constexpr char kSeqMagic[4] = {'S', 'G', 'P', 'D'};
constexpr std::uint32_t kSeqVersion = 1;

SplitData make_split(const std::vector<std::vector<double>>& rows, std::vector<int> labels) {
    SplitData s;
    s.y = std::move(labels);
    if (rows.empty()) return s;
    s.x = Matrix(rows.size(), rows.front().size());
    for (std::size_t n = 0; n < rows.size(); ++n)
        for (std::size_t d = 0; d < rows[n].size(); ++d) s.x(n, d) = rows[n][d];
    return s;
}

std::vector<double> gaussian_vec(std::mt19937_64& eng, std::size_t dim) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(dim);
    for (double& x : v) x = dist(eng);
    return v;
}

void normalize(std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0)
        for (double& x : v) x /= n;
}

std::uint32_t read_be_u32(std::istream& in, const std::string& what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw IoError(what + ": truncated file");
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

} // namespace

TaskSequence gen_synthetic_split(const SyntheticParams& p) {
    if (p.tasks == 0 || p.classes_per_task == 0 || p.dim == 0 || p.samples_per_class == 0)
        throw ConfigError("gen_synthetic_split: all counts must be positive");
    if (!(p.cluster_spread >= 0.0))
        throw ConfigError("gen_synthetic_split: cluster_spread must be non-negative");
    if (!(p.shared_weight >= 0.0 && p.shared_weight <= 1.0))
        throw ConfigError("gen_synthetic_split: shared_weight must lie in [0,1]");
    const std::size_t needed = (p.tasks + 1) * p.classes_per_task;
    if (p.dim < needed)
        throw ConfigError("gen_synthetic_split: dim " + std::to_string(p.dim) +
                          " too small for " + std::to_string(p.tasks) + " tasks x " +
                          std::to_string(p.classes_per_task) +
                          " classes (separability needs dim >= " + std::to_string(needed) + ")");

    // One shared direction per class index plus one private direction per
    // (task, class), all mutually orthonormal.
    auto dir_eng = make_engine(p.seed, "syn-dirs");
    std::vector<std::vector<double>> raw;
    raw.reserve(needed);
    for (std::size_t i = 0; i < needed; ++i) raw.push_back(gaussian_vec(dir_eng, p.dim));
    Matrix dirs;
    const auto kept = append_orthonormal(dirs, Matrix::from_columns(raw), 1e-10);
    if (kept.size() != needed)
        throw NumericalError("gen_synthetic_split: direction set degenerate");

    auto shared_dir = [&](std::size_t c) { return dirs.column(c); };
    auto private_dir = [&](std::size_t t, std::size_t c) {
        return dirs.column(p.classes_per_task + t * p.classes_per_task + c);
    };

    const std::size_t n_val =
        std::max<std::size_t>(1, static_cast<std::size_t>(
                                     std::lround(p.val_fraction * double(p.samples_per_class))));

    TaskSequence seq;
    seq.provenance = "synthetic(seed=" + std::to_string(p.seed) + ")";
    for (std::size_t t = 0; t < p.tasks; ++t) {
        TaskDataset task;
        task.task_id = t + 1;
        task.class_count = p.classes_per_task;
        task.shape = InputShape{p.dim, 1, 1};

        std::vector<std::vector<double>> train_rows, val_rows, test_rows;
        std::vector<int> train_y, val_y, test_y;
        for (std::size_t c = 0; c < p.classes_per_task; ++c) {
            std::vector<double> mean = shared_dir(c);
            const std::vector<double> priv = private_dir(t, c);
            for (std::size_t d = 0; d < p.dim; ++d)
                mean[d] = p.shared_weight * mean[d] + (1.0 - p.shared_weight) * priv[d];
            normalize(mean);
            for (double& x : mean) x *= p.separation;

            auto noise_eng = make_engine(p.seed, "syn-noise", t * 1000 + c);
            auto draw = [&](std::vector<std::vector<double>>& rows, std::vector<int>& ys,
                            std::size_t count) {
                std::normal_distribution<double> dist(0.0, 1.0);
                for (std::size_t n = 0; n < count; ++n) {
                    std::vector<double> x(p.dim);
                    for (std::size_t d = 0; d < p.dim; ++d)
                        x[d] = mean[d] + p.cluster_spread * dist(noise_eng);
                    rows.push_back(std::move(x));
                    ys.push_back(static_cast<int>(c));
                }
            };
            draw(train_rows, train_y, p.samples_per_class);
            draw(val_rows, val_y, n_val);
            draw(test_rows, test_y, p.test_per_class);
        }
        task.train = make_split(train_rows, std::move(train_y));
        task.validation = make_split(val_rows, std::move(val_y));
        task.test = make_split(test_rows, std::move(test_y));
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

TaskSequence gen_permuted(std::uint64_t seed, const TaskDataset& base, std::size_t tasks) {
    if (tasks == 0) throw ConfigError("gen_permuted: task count must be positive");
    const std::size_t dim = base.shape.flat();

    TaskSequence seq;
    seq.provenance = "permuted(seed=" + std::to_string(seed) + ")";
    for (std::size_t t = 0; t < tasks; ++t) {
        std::vector<std::size_t> perm(dim);
        std::iota(perm.begin(), perm.end(), 0);
        if (t > 0) {
            auto eng = make_engine(seed, "permute", t);
            // Fisher-Yates
            for (std::size_t i = dim; i-- > 1;) {
                std::uniform_int_distribution<std::size_t> pick(0, i);
                std::swap(perm[i], perm[pick(eng)]);
            }
        }
        auto apply = [&](const SplitData& in) {
            SplitData out;
            out.y = in.y;
            out.x = Matrix(in.x.rows(), in.x.cols());
            for (std::size_t n = 0; n < in.x.rows(); ++n)
                for (std::size_t d = 0; d < dim; ++d) out.x(n, d) = in.x(n, perm[d]);
            return out;
        };
        TaskDataset task;
        task.task_id = t + 1;
        task.class_count = base.class_count;
        task.shape = base.shape;
        task.train = apply(base.train);
        task.validation = apply(base.validation);
        task.test = apply(base.test);
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

LabeledPool load_idx(const std::string& images_path, const std::string& labels_path) {
    auto img = detail::open_in(images_path);
    auto lbl = detail::open_in(labels_path);

    const std::uint32_t img_magic = read_be_u32(img, "idx images");
    if (img_magic != 0x00000803u)
        throw IoError("idx images: bad magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%08x", img_magic);
            return std::string(buf);
        }() + " (expected 0x00000803)");
    const std::uint32_t n_images = read_be_u32(img, "idx images");
    const std::uint32_t rows = read_be_u32(img, "idx images");
    const std::uint32_t cols = read_be_u32(img, "idx images");

    const std::uint32_t lbl_magic = read_be_u32(lbl, "idx labels");
    if (lbl_magic != 0x00000801u)
        throw IoError("idx labels: bad magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%08x", lbl_magic);
            return std::string(buf);
        }() + " (expected 0x00000801)");
    const std::uint32_t n_labels = read_be_u32(lbl, "idx labels");
    if (n_images != n_labels)
        throw IoError("idx: image count " + std::to_string(n_images) +
                      " does not match label count " + std::to_string(n_labels));

    LabeledPool pool;
    pool.shape = InputShape{1, rows, cols};
    const std::size_t pixels = std::size_t(rows) * cols;
    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t n = 0; n < n_images; ++n) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
        if (!img) throw IoError("idx images: truncated at image " + std::to_string(n));
        std::vector<double> x(pixels);
        for (std::size_t i = 0; i < pixels; ++i) x[i] = buf[i] / 255.0;
        pool.features.push_back(std::move(x));
        char label;
        lbl.read(&label, 1);
        if (!lbl) throw IoError("idx labels: truncated at label " + std::to_string(n));
        pool.labels.push_back(static_cast<unsigned char>(label));
    }
    return pool;
}

TaskSequence split_by_class(const LabeledPool& pool, std::size_t classes_per_task,
                            const SplitByClassOptions& opts, const LabeledPool* test_pool) {
    if (pool.size() == 0) throw ConfigError("split_by_class: empty pool");
    if (classes_per_task == 0) throw ConfigError("split_by_class: classes_per_task must be positive");

    int max_label = 0;
    for (int y : pool.labels) {
        if (y < 0) throw ConfigError("split_by_class: negative label");
        max_label = std::max(max_label, y);
    }
    const std::size_t n_classes = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::size_t> per_class(n_classes, 0);
    for (int y : pool.labels) ++per_class[static_cast<std::size_t>(y)];
    for (std::size_t c = 0; c < n_classes; ++c)
        if (per_class[c] == 0)
            throw ConfigError("split_by_class: class range not contiguous, class " +
                              std::to_string(c) + " has no samples");
    if (n_classes % classes_per_task != 0)
        throw ConfigError("split_by_class: " + std::to_string(n_classes) +
                          " classes not divisible by " + std::to_string(classes_per_task) +
                          " per task");

    // per-class sample indices, seeded shuffle for the validation/test carve
    std::vector<std::vector<std::size_t>> by_class(n_classes);
    for (std::size_t n = 0; n < pool.size(); ++n)
        by_class[static_cast<std::size_t>(pool.labels[n])].push_back(n);
    for (std::size_t c = 0; c < n_classes; ++c) {
        auto eng = make_engine(opts.seed, "class-split", c);
        auto& idx = by_class[c];
        for (std::size_t i = idx.size(); i-- > 1;) {
            std::uniform_int_distribution<std::size_t> pick(0, i);
            std::swap(idx[i], idx[pick(eng)]);
        }
    }

    const std::size_t n_tasks = n_classes / classes_per_task;
    TaskSequence seq;
    seq.provenance = "split_by_class(classes_per_task=" + std::to_string(classes_per_task) + ")";
    for (std::size_t t = 0; t < n_tasks; ++t) {
        TaskDataset task;
        task.task_id = t + 1;
        task.class_count = classes_per_task;
        task.shape = pool.shape;

        std::vector<std::vector<double>> tr, va, te;
        std::vector<int> tr_y, va_y, te_y;
        for (std::size_t ci = 0; ci < classes_per_task; ++ci) {
            const std::size_t cls = t * classes_per_task + ci;
            const auto& idx = by_class[cls];
            std::size_t n_val = static_cast<std::size_t>(
                std::lround(opts.val_fraction * double(idx.size())));
            std::size_t n_test = test_pool ? 0
                                           : static_cast<std::size_t>(std::lround(
                                                 opts.test_fraction * double(idx.size())));
            if (n_val + n_test >= idx.size())
                throw ConfigError("split_by_class: class " + std::to_string(cls) +
                                  " too small for requested validation/test fractions");
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const auto& x = pool.features[idx[i]];
                const int y = static_cast<int>(ci);
                if (i < n_val) {
                    va.push_back(x);
                    va_y.push_back(y);
                } else if (i < n_val + n_test) {
                    te.push_back(x);
                    te_y.push_back(y);
                } else {
                    tr.push_back(x);
                    tr_y.push_back(y);
                }
            }
        }
        if (test_pool) {
            if (test_pool->shape.flat() != pool.shape.flat())
                throw ConfigError("split_by_class: test pool shape mismatch");
            for (std::size_t n = 0; n < test_pool->size(); ++n) {
                const int y = test_pool->labels[n];
                const auto cls = static_cast<std::size_t>(y);
                if (cls >= t * classes_per_task && cls < (t + 1) * classes_per_task) {
                    te.push_back(test_pool->features[n]);
                    te_y.push_back(static_cast<int>(cls - t * classes_per_task));
                }
            }
        }
        task.train = make_split(tr, std::move(tr_y));
        task.validation = make_split(va, std::move(va_y));
        task.test = make_split(te, std::move(te_y));
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

namespace {

void write_split(std::ostream& out, const SplitData& s) {
    detail::write_le<std::uint64_t>(out, s.x.rows());
    detail::write_le<std::uint64_t>(out, s.x.cols());
    for (double v : s.x.data()) detail::write_le<double>(out, v);
    detail::write_le<std::uint64_t>(out, s.y.size());
    for (int v : s.y) detail::write_le<std::int32_t>(out, v);
}

SplitData read_split(std::istream& in) {
    SplitData s;
    const auto rows = detail::read_le<std::uint64_t>(in);
    const auto cols = detail::read_le<std::uint64_t>(in);
    std::vector<double> data(rows * cols);
    for (double& v : data) v = detail::read_le<double>(in);
    if (rows > 0 && cols > 0) s.x = Matrix(rows, cols, std::move(data));
    const auto n = detail::read_le<std::uint64_t>(in);
    s.y.resize(n);
    for (auto& v : s.y) v = detail::read_le<std::int32_t>(in);
    if (n != rows) throw IoError("sequence dump: label/sample count mismatch");
    return s;
}

} // namespace

void save_sequence(const TaskSequence& seq, const std::string& path) {
    auto out = detail::open_out(path);
    detail::write_magic(out, kSeqMagic);
    detail::write_le<std::uint32_t>(out, kSeqVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.provenance.size()));
    out.write(seq.provenance.data(), static_cast<std::streamsize>(seq.provenance.size()));
    detail::write_le<std::uint64_t>(out, seq.tasks.size());
    for (const TaskDataset& t : seq.tasks) {
        detail::write_le<std::uint64_t>(out, t.task_id);
        detail::write_le<std::uint64_t>(out, t.class_count);
        detail::write_le<std::uint64_t>(out, t.shape.channels);
        detail::write_le<std::uint64_t>(out, t.shape.height);
        detail::write_le<std::uint64_t>(out, t.shape.width);
        write_split(out, t.train);
        write_split(out, t.validation);
        write_split(out, t.test);
    }
}

TaskSequence load_sequence(const std::string& path) {
    auto in = detail::open_in(path);
    detail::expect_magic(in, kSeqMagic, "sequence dump");
    detail::expect_version(in, kSeqVersion, "sequence dump");
    TaskSequence seq;
    const auto prov_len = detail::read_le<std::uint32_t>(in);
    seq.provenance.resize(prov_len);
    in.read(seq.provenance.data(), prov_len);
    if (!in) throw IoError("sequence dump: truncated provenance");
    const auto n_tasks = detail::read_le<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_tasks; ++i) {
        TaskDataset t;
        t.task_id = detail::read_le<std::uint64_t>(in);
        t.class_count = detail::read_le<std::uint64_t>(in);
        t.shape.channels = detail::read_le<std::uint64_t>(in);
        t.shape.height = detail::read_le<std::uint64_t>(in);
        t.shape.width = detail::read_le<std::uint64_t>(in);
        t.train = read_split(in);
        t.validation = read_split(in);
        t.test = read_split(in);
        seq.tasks.push_back(std::move(t));
    }
    return seq;
}

} // namespace sgp
