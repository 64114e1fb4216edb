// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "degfuse/autograd.hpp"
#include "degfuse/imgproc.hpp"
#include "helpers.hpp"

using namespace degfuse;
using namespace testing;

namespace {

// Scalar probe: a fixed random weighting of the output, so every output
// element contributes a distinct gradient.
ag::Var probe(const ag::Var& out, std::uint64_t seed = 99) {
    return ag::sum(ag::mul(out, ag::constant(random_tensor(out.shape(), seed))));
}

Parameter leaf_param(const std::string& name, const Shape& shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    return {name, ag::leaf(random_tensor(shape, seed, lo, hi))};
}

void expect_gradients(const ParamList& params, const std::function<ag::Var()>& f, std::size_t n = 40) {
    auto r = gradient_check(params, f, n, 1234, 1e-6, 1e-6);
    INFO("worst relative error " << r.worst);
    CHECK(r.failures == 0);
}

}  // namespace

TEST_CASE("elementwise ops") {
    auto a = leaf_param("a", {2, 3, 3}, 1), b = leaf_param("b", {2, 3, 3}, 2);
    expect_gradients({a, b}, [&] { return probe(ag::add(a.var, b.var)); });
    expect_gradients({a, b}, [&] { return probe(ag::sub(a.var, b.var)); });
    expect_gradients({a, b}, [&] { return probe(ag::mul(a.var, b.var)); });
    expect_gradients({a}, [&] { return probe(ag::scale(a.var, -1.5)); });
    expect_gradients({a}, [&] { return probe(ag::leaky_relu(a.var)); });
    expect_gradients({a}, [&] { return probe(ag::sigmoid(a.var)); });
    expect_gradients({a}, [&] { return probe(ag::abs(a.var)); });
    expect_gradients({a, b}, [&] { return probe(ag::maximum(a.var, b.var)); });
    expect_gradients({a}, [&] { return ag::mean(ag::mul(a.var, a.var)); });
    auto s = leaf_param("s", {1}, 3);
    expect_gradients({a, s}, [&] { return probe(ag::scale_by(a.var, s.var)); });
}

TEST_CASE("kink conventions") {
    auto z = ag::leaf(Tensor(Shape{3}, {0.0, 0.5, -0.5}));
    ag::backward(ag::sum(ag::abs(z)));
    CHECK(z.grad()[0] == 0.0);
    CHECK(z.grad()[1] == 1.0);
    CHECK(z.grad()[2] == -1.0);

    auto a = ag::leaf(Tensor(Shape{2}, {1.0, 2.0}));
    auto b = ag::leaf(Tensor(Shape{2}, {1.0, 3.0}));
    ag::backward(ag::sum(ag::maximum(a, b)));
    CHECK(a.grad()[0] == 1.0);  // tie goes to the first argument
    CHECK(b.grad()[0] == 0.0);
    CHECK(a.grad()[1] == 0.0);
    CHECK(b.grad()[1] == 1.0);
}

TEST_CASE("shape ops") {
    auto a = leaf_param("a", {2, 3, 2}, 4), b = leaf_param("b", {3, 3, 2}, 5);
    expect_gradients({a, b}, [&] { return probe(ag::concat({a.var, b.var})); });
    expect_gradients({b}, [&] { return probe(ag::slice(b.var, 1, 2)); });
    expect_gradients({a}, [&] { return probe(ag::reshape(a.var, Shape{6, 2})); });
    CHECK_THROWS_AS(ag::reshape(a.var, Shape{5}), std::invalid_argument);
}

TEST_CASE("matrix ops") {
    auto a = leaf_param("a", {3, 4}, 6), b = leaf_param("b", {4, 2}, 7);
    expect_gradients({a, b}, [&] { return probe(ag::matmul(a.var, b.var)); });
    expect_gradients({a}, [&] { return probe(ag::transpose(a.var)); });
    expect_gradients({a}, [&] { return probe(ag::softmax_rows(a.var)); });
    expect_gradients({a}, [&] { return probe(ag::l2_normalize_rows(a.var)); });

    auto x = leaf_param("x", {5}, 8), w = leaf_param("w", {3, 5}, 9), bias = leaf_param("bias", {3}, 10);
    expect_gradients({x, w, bias}, [&] { return probe(ag::linear(x.var, w.var, bias.var)); });

    auto sm = ag::softmax_rows(ag::constant(Tensor(Shape{1, 3}, {1000.0, 1000.0, 1000.0})));
    for (double v : sm.value().values()) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("convolution") {
    auto x = leaf_param("x", {4, 5, 6}, 11);
    SUBCASE("dense 3x3") {
        auto w = leaf_param("w", {3, 4, 3, 3}, 12), b = leaf_param("b", {3}, 13);
        expect_gradients({x, w, b}, [&] { return probe(ag::conv2d(x.var, w.var, b.var)); });
    }
    SUBCASE("stride 2") {
        auto w = leaf_param("w", {2, 4, 3, 3}, 14);
        expect_gradients({x, w}, [&] { return probe(ag::conv2d(x.var, w.var, std::nullopt, 2)); });
    }
    SUBCASE("grouped 5x5") {
        auto w = leaf_param("w", {4, 2, 5, 5}, 15);
        expect_gradients({x, w}, [&] { return probe(ag::conv2d(x.var, w.var, std::nullopt, 1, 2)); });
    }
    SUBCASE("depthwise") {
        auto w = leaf_param("w", {4, 1, 3, 3}, 16);
        expect_gradients({x, w}, [&] { return probe(ag::conv2d(x.var, w.var, std::nullopt, 1, 4)); });
    }
}

TEST_CASE("feature-map ops") {
    auto x = leaf_param("x", {4, 3, 4}, 17);
    auto g = leaf_param("g", {4}, 18), b = leaf_param("b", {4}, 19);
    auto m = leaf_param("m", {1, 3, 4}, 20);
    expect_gradients({x, g}, [&] { return probe(ag::channel_scale(x.var, g.var)); });
    expect_gradients({x, b}, [&] { return probe(ag::channel_shift(x.var, b.var)); });
    expect_gradients({x, m}, [&] { return probe(ag::spatial_scale(x.var, m.var)); });
    expect_gradients({x}, [&] { return probe(ag::global_avg_pool(x.var)); });
    expect_gradients({x}, [&] { return probe(ag::channel_mean_max(x.var)); });
    expect_gradients({x}, [&] { return probe(ag::upsample_nearest2(x.var)); });
    expect_gradients({x, g, b}, [&] { return probe(ag::group_norm(x.var, 2, g.var, b.var)); });
    expect_gradients({x, g, b}, [&] { return probe(ag::channel_layer_norm(x.var, g.var, b.var)); });

    auto img = leaf_param("img", {1, 5, 5}, 21, 0.0, 1.0);
    expect_gradients({img}, [&] { return probe(ag::sobel_l1(img.var)); });
}

TEST_CASE("group norm of zeros is zero") {
    auto z = ag::group_norm(ag::constant(Tensor(Shape{4, 2, 2})), 2, ag::constant(Tensor(Shape{4}, 1.0)),
                            ag::constant(Tensor(Shape{4})));
    for (double v : z.value().values()) CHECK(v == 0.0);
}

TEST_CASE("channel max prefers the first index on ties") {
    auto x = ag::leaf(Tensor(Shape{3, 1, 1}, {0.5, 0.5, 0.1}));
    auto mm = ag::channel_mean_max(x);
    ag::backward(ag::slice(mm, 1, 1));
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("gradients accumulate across backward calls and reset on zero_grad") {
    auto a = ag::leaf(Tensor(Shape{2}, {1.0, 2.0}));
    ag::backward(ag::sum(a));
    ag::backward(ag::sum(a), 0.5);
    CHECK(a.grad()[0] == 1.5);
    a.zero_grad();
    CHECK(a.grad()[0] == 0.0);
    auto c = ag::constant(Tensor(Shape{2}, 1.0));
    ag::backward(ag::sum(ag::mul(c, c)));
    CHECK_FALSE(c.has_grad());
}
