#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "sgp/net.hpp"
#include "test_util.hpp"

using namespace sgp;
using namespace sgp::test;

namespace {

// Central finite difference of the loss wrt one weight entry.
double fd_gradient(Network& net, Matrix& w, std::size_t idx, const Matrix& x,
                   const std::vector<int>& y, std::size_t task, double h = 1e-5) {
    const double orig = w.data()[idx];
    w.data()[idx] = orig + h;
    const double up = net.backward(x, y, task).loss;
    w.data()[idx] = orig - h;
    const double down = net.backward(x, y, task).loss;
    w.data()[idx] = orig;
    return (up - down) / (2.0 * h);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

} // namespace

TEST_CASE("zero weights produce zero logits") {
    Network net(InputShape{4, 1, 1}, {LayerSpec::dense(4, 3)}, 1);
    net.add_head(2, 2);
    for (double& v : net.layer_weight(0).data()) v = 0.0;
    const Matrix x = random_matrix(5, 4, 3);
    const Matrix logits = net.forward(x, 0);
    CHECK(frobenius_norm_sq(logits) == 0.0);
}

TEST_CASE("identity dense layer with identity head is the identity map") {
    Network net(InputShape{3, 1, 1}, {LayerSpec::dense(3, 3, Activation::none)}, 1);
    net.add_head(3, 2);
    net.layer_weight(0) = Matrix::identity(3);
    net.head_weight(0) = Matrix::identity(3);
    const Matrix x = random_matrix(4, 3, 5);
    CHECK(max_abs_diff(net.forward(x, 0), x) == 0.0);
}

TEST_CASE("two-layer relu forward matches a hand-computed example") {
    Network net(InputShape{2, 1, 1},
                {LayerSpec::dense(2, 2), LayerSpec::dense(2, 2)}, 1);
    net.add_head(2, 2);
    net.layer_weight(0) = Matrix(2, 2, {1.0, -1.0, 2.0, 0.0});
    net.layer_weight(1) = Matrix(2, 2, {1.0, 1.0, -1.0, 3.0});
    net.head_weight(0) = Matrix::identity(2);
    Matrix x(1, 2, {1.0, 2.0});
    // z1 = (1-2, 2+0) = (-1, 2) -> relu (0, 2)
    // z2 = (0+2, 0+6) = (2, 6)  -> relu (2, 6)
    const Matrix logits = net.forward(x, 0);
    CHECK(logits(0, 0) == doctest::Approx(2.0));
    CHECK(logits(0, 1) == doctest::Approx(6.0));
}

TEST_CASE("forward is bit-identical across repeated calls") {
    Network net(InputShape{1, 5, 5},
                {LayerSpec::conv(1, 3, 2, 2), LayerSpec::dense(48, 6)}, 7);
    net.add_head(3, 8);
    const Matrix x = random_matrix(4, 25, 9);
    const Matrix a = net.forward(x, 0);
    const Matrix b = net.forward(x, 0);
    CHECK(a.data() == b.data());
}

TEST_CASE("saturated correct classification has near-zero gradients") {
    Network net(InputShape{2, 1, 1}, {LayerSpec::dense(2, 2, Activation::none)}, 1);
    net.add_head(2, 2);
    net.layer_weight(0) = Matrix::identity(2);
    net.head_weight(0) = Matrix(2, 2, {100.0, 0.0, 0.0, 100.0});
    Matrix x(2, 2, {1.0, 0.0, 0.0, 1.0});
    const Gradients g = net.backward(x, {0, 1}, 0);
    CHECK(g.loss <= 1e-6);
    double norm = frobenius_norm_sq(g.head);
    for (const Matrix& m : g.layers) norm += frobenius_norm_sq(m);
    CHECK(std::sqrt(norm) <= 1e-6);
}

TEST_CASE("analytic gradients match central finite differences on a dense net") {
    Network net(InputShape{6, 1, 1},
                {LayerSpec::dense(6, 5), LayerSpec::dense(5, 4),
                 LayerSpec::dense(4, 4, Activation::none)},
                11);
    net.add_head(3, 12);
    const Matrix x = random_matrix(6, 6, 13);
    const std::vector<int> y = {0, 1, 2, 0, 1, 2};
    const Gradients g = net.backward(x, y, 0);

    std::mt19937_64 eng(14);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        std::uniform_int_distribution<std::size_t> pick(0, net.layer_weight(l).data().size() - 1);
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t idx = pick(eng);
            const double fd = fd_gradient(net, net.layer_weight(l), idx, x, y, 0);
            CHECK(rel_err(g.layers[l].data()[idx], fd) <= 1e-4);
        }
    }
    std::uniform_int_distribution<std::size_t> pick(0, net.head_weight(0).data().size() - 1);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t idx = pick(eng);
        const double fd = fd_gradient(net, net.head_weight(0), idx, x, y, 0);
        CHECK(rel_err(g.head.data()[idx], fd) <= 1e-4);
    }
}

TEST_CASE("analytic gradients match central finite differences on a conv net") {
    Network net(InputShape{2, 5, 5},
                {LayerSpec::conv(2, 3, 2, 2, 1), LayerSpec::conv(3, 2, 2, 2, 2),
                 LayerSpec::dense(8, 5)},
                21);
    net.add_head(2, 22);
    const Matrix x = random_matrix(4, 50, 23);
    const std::vector<int> y = {0, 1, 1, 0};
    const Gradients g = net.backward(x, y, 0);

    std::mt19937_64 eng(24);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        std::uniform_int_distribution<std::size_t> pick(0, net.layer_weight(l).data().size() - 1);
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t idx = pick(eng);
            const double fd = fd_gradient(net, net.layer_weight(l), idx, x, y, 0);
            CHECK(rel_err(g.layers[l].data()[idx], fd) <= 1e-4);
        }
    }
}

TEST_CASE("duplicating the batch leaves the mean gradient unchanged") {
    Network net(InputShape{4, 1, 1}, {LayerSpec::dense(4, 3)}, 31);
    net.add_head(2, 32);
    const Matrix x = random_matrix(3, 4, 33);
    const std::vector<int> y = {0, 1, 0};
    Matrix xx(6, 4);
    for (std::size_t n = 0; n < 6; ++n)
        for (std::size_t d = 0; d < 4; ++d) xx(n, d) = x(n % 3, d);
    const Gradients g1 = net.backward(x, y, 0);
    const Gradients g2 = net.backward(xx, {0, 1, 0, 0, 1, 0}, 0);
    CHECK(max_abs_diff(g1.layers[0], g2.layers[0]) <= 1e-12);
    CHECK(max_abs_diff(g1.head, g2.head) <= 1e-12);
}

TEST_CASE("backward validates labels and heads") {
    Network net(InputShape{4, 1, 1}, {LayerSpec::dense(4, 3)}, 41);
    net.add_head(2, 42);
    const Matrix x = random_matrix(2, 4, 43);
    CHECK_THROWS_AS(net.backward(x, {0, 2}, 0), ConfigError);   // label out of range
    CHECK_THROWS_AS(net.backward(x, {0, 1}, 1), DimensionError); // missing head
    CHECK_THROWS_AS(net.forward(x, 3), DimensionError);
}

TEST_CASE("dense representation matrix columns are the layer inputs") {
    Network net(InputShape{3, 1, 1}, {LayerSpec::dense(3, 2)}, 51);
    net.add_head(2, 52);
    Matrix x(2, 3, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    LayerActivations acts;
    net.forward(x, 0, &acts);
    const Matrix r = build_representation_matrix(acts, 0, 100);
    CHECK(r.rows() == 3);
    CHECK(r.cols() == 2);
    for (std::size_t d = 0; d < 3; ++d) {
        CHECK(r(d, 0) == x(0, d));
        CHECK(r(d, 1) == x(1, d));
    }
    CHECK(r.rows() == net.layer_weight(0).cols());
}

TEST_CASE("conv representation matrix columns are the im2col patches") {
    Network net(InputShape{1, 3, 3}, {LayerSpec::conv(1, 2, 2, 2, 1)}, 61);
    net.add_head(2, 62);
    Matrix x(1, 9, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    LayerActivations acts;
    net.forward(x, 0, &acts);
    const Matrix r = build_representation_matrix(acts, 0, 100);
    CHECK(r.rows() == 4);
    CHECK(r.cols() == 4);
    const double expected[4][4] = {
        {1, 2, 4, 5}, {2, 3, 5, 6}, {4, 5, 7, 8}, {5, 6, 8, 9}};
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < 4; ++i) CHECK(r(i, c) == expected[c][i]);
    CHECK(r.rows() == net.layer_weight(0).cols());

    const Matrix capped = build_representation_matrix(acts, 0, 1);
    CHECK(capped.cols() == 1);
    CHECK(capped(0, 0) == 1.0);
}

TEST_CASE("representation matrix rejects empty captures") {
    LayerActivations acts;
    acts.columns.resize(1);
    CHECK_THROWS_AS(build_representation_matrix(acts, 0, 10), ConsistencyError);
    CHECK_THROWS_AS(build_representation_matrix(acts, 3, 10), DimensionError);
}

TEST_CASE("network checkpoint round-trips losslessly") {
    Network net(InputShape{1, 4, 4},
                {LayerSpec::conv(1, 2, 2, 2, 1), LayerSpec::dense(18, 5, Activation::none)},
                71);
    net.add_head(3, 72);
    net.add_head(4, 73);
    const std::string path = "net_roundtrip.ckpt";
    net.save(path);
    const Network loaded = Network::load(path);
    REQUIRE(loaded.layer_count() == net.layer_count());
    for (std::size_t l = 0; l < net.layer_count(); ++l)
        CHECK(loaded.layer_weight(l).data() == net.layer_weight(l).data());
    REQUIRE(loaded.head_count() == 2);
    CHECK(loaded.head_weight(0).data() == net.head_weight(0).data());
    CHECK(loaded.head_weight(1).data() == net.head_weight(1).data());
    CHECK(loaded.head_classes(1) == 4);
    std::remove(path.c_str());
}

TEST_CASE("layer chain validation") {
    CHECK_THROWS_AS(Network(InputShape{4, 1, 1}, {LayerSpec::dense(5, 3)}, 1),
                    DimensionError);
    CHECK_THROWS_AS(Network(InputShape{1, 2, 2}, {LayerSpec::conv(1, 2, 3, 3, 1)}, 1),
                    DimensionError);
    CHECK_THROWS_AS(Network(InputShape{2, 2, 2}, {LayerSpec::conv(1, 2, 2, 2, 1)}, 1),
                    DimensionError);
}
