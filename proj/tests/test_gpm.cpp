#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "sgp/data.hpp"
#include "sgp/gpm.hpp"
#include "sgp/net.hpp"
#include "test_util.hpp"

using namespace sgp;
using namespace sgp::test;

namespace {

LayerBasis basis_from(const Matrix& cols, std::vector<double> importance) {
    LayerBasis b;
    b.basis = cols;
    b.importance = std::move(importance);
    return b;
}

Matrix unit_col(std::size_t dim, std::size_t axis) {
    Matrix m(dim, 1);
    m(axis, 0) = 1.0;
    return m;
}

} // namespace

TEST_CASE("importance formula on a direct example") {
    const auto lambda = compute_importance({4.0, 2.0}, 1.0);
    CHECK(lambda[0] == 1.0);
    CHECK(lambda[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("the maximal singular value always gets importance one") {
    for (double alpha : {0.0, 0.5, 3.0, 100.0}) {
        const auto lambda = compute_importance({2.5, 2.5, 0.1}, alpha);
        CHECK(lambda[0] == 1.0);
        CHECK(lambda[1] == 1.0);
        CHECK(lambda[2] < 1.0);
        CHECK(lambda[2] > 0.0);
    }
    // the input need not be sorted
    const auto lambda = compute_importance({1.0, 5.0, 2.0}, 2.0);
    CHECK(lambda[1] == 1.0);
    CHECK(lambda[0] < lambda[2]);
}

TEST_CASE("large alpha pushes every importance toward one") {
    const auto lambda = compute_importance({4.0, 2.0}, 1e9);
    CHECK(lambda[0] == 1.0);
    CHECK(std::abs(lambda[1] - 1.0) <= 1e-8);
}

TEST_CASE("importance rejects degenerate input") {
    CHECK_THROWS_AS(compute_importance({0.0, 0.0}, 1.0), NumericalError);
    CHECK_THROWS_AS(compute_importance({}, 1.0), NumericalError);
    CHECK_THROWS_AS(compute_importance({1.0}, -0.5), ConfigError);
}

TEST_CASE("gradient projection examples") {
    Matrix grad(1, 2, {2.0, 3.0});

    LayerBasis empty;
    CHECK(max_abs_diff(project_gradient(grad, empty), grad) == 0.0);

    const LayerBasis full = basis_from(unit_col(2, 0), {1.0});
    const Matrix blocked = project_gradient(grad, full);
    CHECK(blocked(0, 0) == doctest::Approx(0.0));
    CHECK(blocked(0, 1) == doctest::Approx(3.0));

    const LayerBasis half = basis_from(unit_col(2, 0), {0.5});
    const Matrix scaled = project_gradient(grad, half);
    CHECK(scaled(0, 0) == doctest::Approx(1.0));
    CHECK(scaled(0, 1) == doctest::Approx(3.0));

    CHECK_THROWS_AS(project_gradient(Matrix(1, 3), full), DimensionError);
}

TEST_CASE("projection algebra: idempotence, contraction, complement") {
    const std::size_t dim = 8, k = 3;
    const Matrix m = random_orthonormal(dim, k, 101);
    const Matrix grad = random_matrix(5, dim, 102);

    // all importance one: projector, applied twice equals once
    const LayerBasis full = basis_from(m, {1.0, 1.0, 1.0});
    const Matrix once = project_gradient(grad, full);
    const Matrix twice = project_gradient(once, full);
    CHECK(max_abs_diff(once, twice) <= 1e-8);

    // general importance: per-basis contraction by (1 - lambda_i)
    const std::vector<double> lam = {0.9, 0.4, 0.0};
    const LayerBasis mixed = basis_from(m, lam);
    const Matrix out = project_gradient(grad, mixed);
    for (std::size_t i = 0; i < k; ++i) {
        const Matrix mi = m.left_columns(i + 1); // columns 0..i
        for (std::size_t row = 0; row < grad.rows(); ++row) {
            double before = 0.0, after = 0.0;
            for (std::size_t r = 0; r < dim; ++r) {
                before += grad(row, r) * mi(r, i);
                after += out(row, r) * mi(r, i);
            }
            CHECK(std::abs(after - (1.0 - lam[i]) * before) <= 1e-8);
        }
    }

    // components orthogonal to the span are untouched
    Matrix with_extra = m;
    append_orthonormal(with_extra, random_matrix(dim, 1, 103), 1e-12);
    REQUIRE(with_extra.cols() == k + 1);
    for (std::size_t row = 0; row < grad.rows(); ++row) {
        double before = 0.0, after = 0.0;
        for (std::size_t r = 0; r < dim; ++r) {
            before += grad(row, r) * with_extra(r, k);
            after += out(row, r) * with_extra(r, k);
        }
        CHECK(std::abs(after - before) <= 1e-10);
    }
}

TEST_CASE("residual split examples") {
    const Matrix r = random_matrix(3, 5, 111);

    LayerBasis empty;
    const auto s0 = compute_residual(r, empty);
    CHECK(max_abs_diff(s0.residual, r) == 0.0);
    CHECK(frobenius_norm_sq(s0.projected) == 0.0);

    const LayerBasis e1 = basis_from(unit_col(3, 0), {1.0});
    const auto s1 = compute_residual(r, e1);
    for (std::size_t c = 0; c < 5; ++c) {
        CHECK(s1.residual(0, c) == doctest::Approx(0.0));
        CHECK(s1.residual(1, c) == doctest::Approx(r(1, c)));
        CHECK(s1.residual(2, c) == doctest::Approx(r(2, c)));
    }

    // columns inside the span leave no residual
    const Matrix m = random_orthonormal(6, 2, 112);
    const Matrix inside = matmul(m, random_matrix(2, 4, 113));
    const auto s2 = compute_residual(inside, basis_from(m, {1.0, 1.0}));
    CHECK(std::sqrt(frobenius_norm_sq(s2.residual)) <=
          1e-8 * std::sqrt(frobenius_norm_sq(inside)));

    // residual columns are orthogonal to every basis column
    const auto s3 = compute_residual(random_matrix(6, 7, 114), basis_from(m, {1.0, 1.0}));
    const Matrix dots = matmul_tn(m, s3.residual);
    for (double v : dots.data()) CHECK(std::abs(v) <= 1e-8);
}

TEST_CASE("new-basis selection on the constructed three-direction example") {
    // columns: sqrt(.5) e1 | sqrt(.3) e2 | sqrt(.2) e3, memory holds e1
    Matrix r(3, 3);
    r(0, 0) = std::sqrt(0.5);
    r(1, 1) = std::sqrt(0.3);
    r(2, 2) = std::sqrt(0.2);
    const LayerBasis mem = basis_from(unit_col(3, 0), {1.0});
    const auto split = compute_residual(r, mem);

    const auto nb = select_new_bases(split.residual, split.projected, r, 0.79);
    REQUIRE(nb.count() == 1); // 0.5 + 0.3 >= 0.79
    CHECK(nb.sigma_hat[0] == doctest::Approx(std::sqrt(0.3)).epsilon(1e-10));
    CHECK(std::abs(nb.basis_cols(1, 0)) == doctest::Approx(1.0).epsilon(1e-10));

    const auto nb2 = select_new_bases(split.residual, split.projected, r, 0.81);
    CHECK(nb2.count() == 2); // needs 0.5 + 0.3 + 0.2
}

TEST_CASE("saturated memory selects no new bases") {
    const Matrix m = random_orthonormal(5, 3, 121);
    const Matrix inside = matmul(m, random_matrix(3, 6, 122));
    const LayerBasis mem = basis_from(m, {1.0, 1.0, 1.0});
    const auto split = compute_residual(inside, mem);
    const auto nb = select_new_bases(split.residual, split.projected, inside, 0.97);
    CHECK(nb.count() == 0);
}

TEST_CASE("with an empty span the selection reduces to plain rank selection") {
    for (std::uint64_t seed : {131u, 132u, 133u}) {
        const Matrix r = random_matrix(6, 9, seed);
        const Matrix zero(6, 9);
        for (double eps : {0.5, 0.9, 0.99}) {
            const auto nb = select_new_bases(r, zero, r, eps);
            CHECK(nb.count() == select_rank(svd(r).sigma, eps));
        }
    }
}

TEST_CASE("projection coefficients examples") {
    const Matrix m = random_orthonormal(5, 2, 141);
    const LayerBasis mem = basis_from(m, {1.0, 1.0});

    // u equal to the basis itself gives the identity
    const Matrix c_id = projection_coefficients(mem, m, {3.0, 2.0});
    CHECK(max_abs_diff(c_id, Matrix::identity(2)) <= 1e-12);

    // an equal mix of e1 and e2 against the canonical basis
    Matrix canon(4, 2);
    canon(0, 0) = 1.0;
    canon(1, 1) = 1.0;
    Matrix mix(4, 1);
    mix(0, 0) = mix(1, 0) = 1.0 / std::sqrt(2.0);
    const Matrix c = projection_coefficients(basis_from(canon, {1.0, 1.0}), mix, {2.0});
    CHECK(c(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(c(1, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));

    // a column outside the span with nonzero sigma is rejected
    Matrix outside(4, 1);
    outside(2, 0) = 1.0;
    CHECK_THROWS_AS(projection_coefficients(basis_from(canon, {1.0, 1.0}), outside, {1.0}),
                    ConsistencyError);
    // but tolerated when its singular value is zero (nulled downstream)
    CHECK_NOTHROW(projection_coefficients(basis_from(canon, {1.0, 1.0}), outside, {0.0}));
}

TEST_CASE("surrogate singular values transfer the in-span mass") {
    // identity coefficients keep sigma
    const auto direct = surrogate_singular_values(Matrix::identity(3), {3.0, 2.0, 1.0});
    CHECK(direct == std::vector<double>{3.0, 2.0, 1.0});

    // single equal-mix column, sigma 2: both bases get sqrt(2), mass preserved
    Matrix c(2, 1);
    c(0, 0) = c(1, 0) = 1.0 / std::sqrt(2.0);
    const auto mixed = surrogate_singular_values(c, {2.0});
    CHECK(mixed[0] == doctest::Approx(std::sqrt(2.0)));
    CHECK(mixed[1] == doctest::Approx(std::sqrt(2.0)));
    CHECK(mixed[0] * mixed[0] + mixed[1] * mixed[1] == doctest::Approx(4.0));

    // zero sigma in, zero surrogates out
    const auto zero = surrogate_singular_values(Matrix::identity(2), {0.0, 0.0});
    CHECK(zero == std::vector<double>{0.0, 0.0});
}

TEST_CASE("norm transfer: surrogate mass equals the projected mass") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t dim = 6 + seed % 3;
        const std::size_t k = 2 + seed % 2;
        const Matrix m = random_orthonormal(dim, k, 1000 + seed);
        const LayerBasis mem = basis_from(m, std::vector<double>(k, 0.5));
        const Matrix r = random_matrix(dim, 10, 2000 + seed);
        const auto split = compute_residual(r, mem);

        const auto f = svd(split.projected);
        std::size_t n_use = 0;
        while (n_use < f.sigma.size() && n_use < k &&
               f.sigma[n_use] > kSigmaZeroRel * f.sigma.front())
            ++n_use;
        std::vector<double> sig(f.sigma.begin(), f.sigma.begin() + n_use);
        const Matrix c = projection_coefficients(mem, f.u.left_columns(n_use), sig);
        const auto prime = surrogate_singular_values(c, sig);

        double mass = 0.0;
        for (double s : prime) mass += s * s;
        const double proj = frobenius_norm_sq(split.projected);
        CHECK(std::abs(mass - proj) <= 1e-8 * std::max(1.0, proj));
    }
}

TEST_CASE("assembly order and the capture inequality") {
    const auto tau = assemble_singular_vector({2.0, 1.5}, {1.0});
    CHECK(tau == std::vector<double>{2.0, 1.5, 1.0});
    CHECK(assemble_singular_vector({}, {0.5, 0.25}) == std::vector<double>{0.5, 0.25});

    const auto chk = threshold_satisfaction({2.0, 1.0}, 0.9, 5.0);
    CHECK(chk.captured == doctest::Approx(5.0));
    CHECK(chk.required == doctest::Approx(4.5));
    CHECK(chk.satisfied());
    CHECK_THROWS_AS(check_threshold_satisfaction({0.1}, 0.9, 5.0), ConsistencyError);
}

TEST_CASE("full split pipeline satisfies the capture inequality") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix m = random_orthonormal(6, 2, 3000 + seed);
        LayerBasis mem = basis_from(m, {0.8, 0.6});
        const Matrix r = random_matrix(6, 20, 4000 + seed);
        const double eps = 0.9;

        const auto split = compute_residual(r, mem);
        const auto nb = select_new_bases(split.residual, split.projected, r, eps);
        const auto f = svd(split.projected);
        std::size_t n_use = 0;
        while (n_use < f.sigma.size() && n_use < mem.count() &&
               f.sigma[n_use] > kSigmaZeroRel * f.sigma.front())
            ++n_use;
        std::vector<double> sig(f.sigma.begin(), f.sigma.begin() + n_use);
        const Matrix c = projection_coefficients(mem, f.u.left_columns(n_use), sig);
        const auto tau = assemble_singular_vector(surrogate_singular_values(c, sig),
                                                  nb.sigma_hat);
        const auto chk = check_threshold_satisfaction(tau, eps, frobenius_norm_sq(r));
        CHECK(chk.captured >= chk.required - 1e-8 * std::max(1.0, chk.required));
    }
}

TEST_CASE("importance accumulation clamps, sums, and absorbs") {
    LayerBasis mem = basis_from(random_orthonormal(5, 3, 151), {0.7, 0.3, 1.0});
    accumulate_importance(mem, {0.5, 0.4, 0.2}, Matrix());
    CHECK(mem.importance[0] == 1.0);                    // 0.7 + 0.5 clamps
    CHECK(mem.importance[1] == doctest::Approx(0.7));   // 0.3 + 0.4
    CHECK(mem.importance[2] == 1.0);                    // absorbing state
    CHECK(mem.count() == 3);

    CHECK_THROWS_AS(accumulate_importance(mem, {0.1, 0.1}, Matrix()), DimensionError);
}

TEST_CASE("importance accumulation appends new bases after the lambda update") {
    LayerBasis mem = basis_from(random_orthonormal(6, 2, 161), {0.5, 0.5});
    Matrix fresh = random_orthonormal(6, 4, 162).left_columns(2);
    // orthogonalize the candidates against the existing basis first, so both survive
    Matrix combined = mem.basis;
    append_orthonormal(combined, fresh, 1e-10);
    REQUIRE(combined.cols() == 4);
    Matrix new_cols(6, 2);
    for (std::size_t r = 0; r < 6; ++r) {
        new_cols(r, 0) = combined(r, 2);
        new_cols(r, 1) = combined(r, 3);
    }

    accumulate_importance(mem, {0.2, 0.9, 0.8, 0.4}, new_cols);
    REQUIRE(mem.count() == 4);
    CHECK(mem.importance[0] == doctest::Approx(0.7));
    CHECK(mem.importance[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mem.importance[2] == doctest::Approx(0.8));
    CHECK(mem.importance[3] == doctest::Approx(0.4));
    CHECK(orthonormality_error(mem.basis) <= 1e-10);

    // a dependent candidate is dropped together with its importance entry
    Matrix dependent(6, 1);
    for (std::size_t r = 0; r < 6; ++r) dependent(r, 0) = mem.basis(r, 0);
    accumulate_importance(mem, {0.0, 0.0, 0.0, 0.0, 0.77}, dependent);
    CHECK(mem.count() == 4);
}

TEST_CASE("memory checkpoint round-trips losslessly") {
    BasisMemory mem = BasisMemory::empty_for_layers(3);
    mem.layers[0] = basis_from(random_orthonormal(5, 2, 171), {1.0, 0.25});
    mem.layers[2] = basis_from(random_orthonormal(4, 4, 172), {1.0, 1.0, 0.5, 0.125});
    const std::string path = "mem_roundtrip.ckpt";
    mem.save(path);
    const BasisMemory loaded = BasisMemory::load(path);
    REQUIRE(loaded.layers.size() == 3);
    CHECK(loaded.layers[0].basis.data() == mem.layers[0].basis.data());
    CHECK(loaded.layers[0].importance == mem.layers[0].importance);
    CHECK(loaded.layers[1].empty());
    CHECK(loaded.layers[2].importance == mem.layers[2].importance);
    std::remove(path.c_str());
}

namespace {

// Minimal two-task fixture for the orchestrated update.
TaskDataset make_task(std::uint64_t seed, std::size_t dim = 8, std::size_t classes = 2,
                      std::size_t per_class = 30) {
    SyntheticParams p;
    p.seed = seed;
    p.tasks = 1;
    p.classes_per_task = classes;
    p.dim = dim;
    p.samples_per_class = per_class;
    p.cluster_spread = 0.3;
    p.test_per_class = 5;
    return gen_synthetic_split(p).tasks.front();
}

} // namespace

TEST_CASE("first memory update reduces to plain rank selection with importance") {
    const TaskDataset task = make_task(42);
    Network net(InputShape{8, 1, 1}, {LayerSpec::dense(8, 6), LayerSpec::dense(6, 5)}, 1);
    net.add_head(2, 2);

    BasisMemory mem = BasisMemory::empty_for_layers(2);
    ScaleConfig scale;
    scale.alpha = 2.0;
    scale.epsilon_th = {0.95};
    scale.epsilon_increment = 0.003;
    MemoryUpdateOptions opts;
    opts.n_s = 50;
    opts.sample_seed = 7;

    const auto stats = update_memory_after_task(net, task, mem, scale, opts);
    REQUIRE(stats.size() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(stats[l].added >= 1);
        CHECK(stats[l].captured >= stats[l].required * (1.0 - 1e-8));
        CHECK(orthonormality_error(mem.layers[l].basis) <= 1e-8);
        // exactly one basis at importance one after the first task
        std::size_t full = 0;
        for (double v : mem.layers[l].importance) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            if (v >= 1.0 - 1e-12) ++full;
        }
        CHECK(full == 1);
        CHECK(mem.layers[l].count() <= net.layer_weight(l).cols());
    }
    // epsilon advanced after the update
    CHECK(scale.epsilon_th.front() == doctest::Approx(0.953));
}

TEST_CASE("updating with the same task twice adds nothing and raises importance") {
    const TaskDataset task = make_task(43);
    Network net(InputShape{8, 1, 1}, {LayerSpec::dense(8, 6)}, 3);
    net.add_head(2, 4);

    BasisMemory mem = BasisMemory::empty_for_layers(1);
    ScaleConfig scale;
    scale.alpha = 1.0;
    scale.epsilon_th = {0.95};
    MemoryUpdateOptions opts;
    opts.n_s = 60;
    opts.sample_seed = 9;

    update_memory_after_task(net, task, mem, scale, opts);
    const auto before = mem.layers[0].importance;

    const auto stats = update_memory_after_task(net, task, mem, scale, opts);
    CHECK(stats[0].added == 0);
    REQUIRE(mem.layers[0].importance.size() == before.size());
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(mem.layers[0].importance[i] >= before[i]);
}

TEST_CASE("a full-rank layer memory only updates importance") {
    const TaskDataset task = make_task(44, 4, 2, 40);
    Network net(InputShape{4, 1, 1}, {LayerSpec::dense(4, 4)}, 5);
    net.add_head(2, 6);

    BasisMemory mem = BasisMemory::empty_for_layers(1);
    mem.layers[0] = basis_from(Matrix::identity(4), {0.5, 0.5, 0.5, 0.5});
    ScaleConfig scale;
    scale.epsilon_th = {0.99};
    MemoryUpdateOptions opts;
    opts.n_s = 40;
    opts.sample_seed = 11;

    const auto stats = update_memory_after_task(net, task, mem, scale, opts);
    CHECK(stats[0].added == 0);
    CHECK(mem.layers[0].count() == 4);
    for (double v : mem.layers[0].importance) CHECK(v >= 0.5);
}

TEST_CASE("gpm mode pins every stored importance to one") {
    const TaskDataset task = make_task(45);
    Network net(InputShape{8, 1, 1}, {LayerSpec::dense(8, 5)}, 7);
    net.add_head(2, 8);

    BasisMemory mem = BasisMemory::empty_for_layers(1);
    ScaleConfig scale;
    scale.mode = ProjectionMode::gpm;
    scale.epsilon_th = {0.9};
    MemoryUpdateOptions opts;
    opts.n_s = 40;
    opts.sample_seed = 13;

    update_memory_after_task(net, task, mem, scale, opts);
    update_memory_after_task(net, make_task(46), mem, scale, opts);
    for (double v : mem.layers[0].importance) CHECK(v == 1.0);
}

TEST_CASE("scale config validation") {
    ScaleConfig s;
    s.epsilon_th = {0.97};
    s.epsilon_increment = 0.003;
    CHECK_NOTHROW(s.validate(9, 3));
    CHECK_THROWS_AS(s.validate(10, 3), ConfigError); // 0.97 + 10*0.003 = 1.0
    s.epsilon_th = {1.2};
    CHECK_THROWS_AS(s.validate(1, 1), ConfigError);
    s.epsilon_th = {};
    CHECK_THROWS_AS(s.validate(1, 1), ConfigError);
    s.epsilon_th = {0.5, 0.6};
    s.epsilon_increment = 0.0;
    CHECK_THROWS_AS(s.validate(1, 3), ConfigError); // needs 1 or >= layer_count entries
    CHECK_NOTHROW(s.validate(1, 2));
    CHECK(s.epsilon_for_layer(1) == 0.6);
}
