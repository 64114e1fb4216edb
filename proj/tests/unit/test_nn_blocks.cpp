// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "degfuse/nn_blocks.hpp"
#include "degfuse/spdce.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace degfuse;
using namespace testing;

namespace {

template <class Block>
ParamList params_of(const Block& b) {
    ParamList out;
    b.collect(out);
    return out;
}

ag::Var feature(const Shape& s, std::uint64_t seed) { return ag::constant(random_tensor(s, seed)); }

double max_abs(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("group count rule") {
    CHECK(group_norm_groups(32) == 8);
    CHECK(group_norm_groups(4) == 4);
    CHECK(group_norm_groups(1) == 1);
    CHECK(group_norm_groups(12) == 6);
}

TEST_CASE("guidance with a fresh MLP is the exact identity") {
    Initializer init(3);
    GuidanceMlp mlp(init, "g", 16, 4);
    auto f = feature({4, 5, 5}, 1);
    auto out = prompt_guidance(f, prompt_var(random_prompt(16, 2)), mlp);
    CHECK(out.value().values() == f.value().values());
    auto gp = mlp.params(random_prompt(16, 2));
    for (double v : gp.scale) CHECK(v == 0.0);
    for (double v : gp.shift) CHECK(v == 0.0);
}

TEST_CASE("guidance with unit scale doubles the input") {
    Initializer init(3);
    GuidanceMlp mlp(init, "g", 8, 3);
    set_param(mlp.output().bias(), {1, 1, 1, 0, 0, 0});
    auto f = feature({3, 4, 4}, 5);
    auto out = prompt_guidance(f, prompt_var(random_prompt(8, 1)), mlp);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(out.value()[i] == 2.0 * f.value()[i]);
}

TEST_CASE("guidance matches the triple-loop oracle") {
    Initializer init(4);
    GuidanceMlp mlp(init, "g", 8, 2);
    randomize(params_of(mlp), 0.4, 17);
    const auto p = random_prompt(8, 3);
    auto f = feature({2, 3, 3}, 6);
    auto out = prompt_guidance(f, prompt_var(p), mlp);
    auto [s, b] = oracle::guidance_mlp(p.vector, mlp);
    auto ref = oracle::guidance(oracle::from_tensor(f.value()), s, b);
    CHECK(oracle::max_abs_diff(ref, out.value()) <= 1e-12);

    CHECK_THROWS_AS(prompt_guidance(feature({3, 3, 3}, 1), prompt_var(p), mlp), std::invalid_argument);
}

TEST_CASE("multi-scale conv block") {
    Initializer init(5);
    MsConvBlock big(init, "ms", 32);
    CHECK(big(feature({32, 16, 16}, 1)).shape() == Shape{32, 16, 16});

    MsConvBlock one(init, "one", 1);
    auto ps = params_of(one);
    for (const auto& p : ps) fill_param(p, 0.0);
    auto z = one(ag::constant(Tensor(Shape{1, 4, 4})));
    for (double v : z.value().values()) CHECK(v == 0.0);

    randomize(ps, 0.5, 3);
    fill_param(one.gn_gamma(), 1.3);
    auto x = feature({1, 4, 4}, 9);
    CHECK(oracle::max_abs_diff(oracle::msconv(oracle::from_tensor(x.value()), one), one(x).value()) <= 1e-9);
}

TEST_CASE("transformer block") {
    Initializer init(6);
    TransformerBlock big(init, "t", 32, 4);
    CHECK(big(feature({32, 8, 8}, 1)).shape() == Shape{32, 8, 8});

    TransformerBlock t(init, "t2", 4, 2);
    randomize(params_of(t), 0.5, 4);
    fill_param(t.attn_out().weight(), 0.0);
    fill_param(t.attn_out().bias(), 0.0);
    fill_param(t.ffn_out().weight(), 0.0);
    fill_param(t.ffn_out().bias(), 0.0);
    auto x = feature({4, 3, 3}, 2);
    CHECK(t(x).value().values() == x.value().values());

    TransformerBlock single(init, "t3", 2, 1);
    randomize(params_of(single), 0.6, 5);
    auto y = feature({2, 2, 2}, 3);
    CHECK(oracle::max_abs_diff(oracle::transformer(oracle::from_tensor(y.value()), single), single(y).value()) <=
          1e-9);

    TransformerBlock heads(init, "t4", 4, 2);
    randomize(params_of(heads), 0.6, 6);
    auto z = feature({4, 3, 2}, 4);
    CHECK(oracle::max_abs_diff(oracle::transformer(oracle::from_tensor(z.value()), heads), heads(z).value()) <=
          1e-9);

    CHECK_THROWS_AS(TransformerBlock(init, "bad", 6, 4), std::invalid_argument);
}

TEST_CASE("channel attention") {
    Initializer init(7);
    ChannelAttention ca(init, "ca", 8);
    auto f = feature({8, 3, 3}, 1);

    fill_param(ca.excite().weight(), 0.0);
    fill_param(ca.excite().bias(), 60.0);
    CHECK(max_abs(ca(f).value(), f.value()) < 1e-12);

    fill_param(ca.excite().bias(), -60.0);
    auto closed = ca(f);
    for (double v : closed.value().values()) CHECK(std::abs(v) < 1e-20);

    randomize(params_of(ca), 0.7, 2);
    CHECK(oracle::max_abs_diff(oracle::channel_attention(oracle::from_tensor(f.value()), ca), ca(f).value()) <=
          1e-12);
    CHECK_THROWS_AS(ChannelAttention(init, "small", 4), std::invalid_argument);
}

TEST_CASE("spatial attention") {
    Initializer init(8);
    SpatialAttention sa(init, "sa");
    auto f = feature({3, 5, 5}, 1);

    fill_param(sa.conv().weight(), 0.0);
    fill_param(sa.conv().bias(), 60.0);
    CHECK(max_abs(sa(f).value(), f.value()) < 1e-12);

    // Constant input: away from the zero-padded border every pixel sees
    // the whole 7x7 window, so mask = sigmoid(c * sum(k_mean) + c * sum(k_max) + b).
    randomize(params_of(sa), 0.2, 3);
    const double c = 0.6;
    auto flat = ag::constant(Tensor(Shape{2, 9, 9}, c));
    auto out = sa(flat);
    const auto k = oracle::values(sa.conv().weight());
    double ksum = 0;
    for (double v : k) ksum += v;
    const double expect = c * oracle::sigmoid(c * ksum + oracle::values(sa.conv().bias())[0]);
    for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t y = 3; y < 6; ++y)
            for (std::size_t x = 3; x < 6; ++x) CHECK(out.value().at(ch, y, x) == doctest::Approx(expect).epsilon(1e-12));

    CHECK(oracle::max_abs_diff(oracle::spatial_attention(oracle::from_tensor(f.value()), sa), sa(f).value()) <=
          1e-12);
}

TEST_CASE("blocks preserve shape") {
    Initializer init(9);
    auto f = feature({8, 6, 4}, 2);
    CHECK(MsConvBlock(init, "m", 8)(f).shape() == f.shape());
    CHECK(TransformerStack(init, "t", 8, 4, 2)(f).shape() == f.shape());
    CHECK(ChannelAttention(init, "c", 8)(f).shape() == f.shape());
    CHECK(SpatialAttention(init, "s")(f).shape() == f.shape());
}

TEST_CASE("block gradients match finite differences") {
    Initializer init(10);
    auto f = ag::leaf(random_tensor({4, 6, 6}, 3));
    auto check = [&](const ParamList& ps, const std::function<ag::Var()>& fn) {
        ParamList with_input = ps;
        with_input.push_back({"input", f});
        auto r = gradient_check(with_input, fn, 30, 77);
        INFO("worst " << r.worst << " at " << r.worst_param);
        CHECK(r.failures == 0);
    };

    GuidanceMlp mlp(init, "g", 8, 4);
    randomize(params_of(mlp), 0.4, 1);
    auto p = prompt_var(random_prompt(8, 5));
    check(params_of(mlp), [&] { return ag::sum(prompt_guidance(f, p, mlp)); });

    MsConvBlock ms(init, "m", 4);
    check(params_of(ms), [&] { return ag::sum(ag::mul(ms(f), ms(f))); });

    TransformerBlock t(init, "t", 4, 2);
    randomize(params_of(t), 0.5, 2);
    check(params_of(t), [&] { return ag::sum(ag::mul(t(f), t(f))); });

    ChannelAttention ca(init, "c", 4, 2);
    check(params_of(ca), [&] { return ag::sum(ca(f)); });

    SpatialAttention sa(init, "s");
    check(params_of(sa), [&] { return ag::sum(sa(f)); });
}

TEST_CASE("initialization depends only on seed and name") {
    MsConvBlock a(Initializer(42), "x", 4), b(Initializer(42), "x", 4), c(Initializer(43), "x", 4);
    auto pa = params_of(a), pb = params_of(b), pc = params_of(c);
    bool differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].var.value().values() == pb[i].var.value().values());
        differs = differs || pa[i].var.value().values() != pc[i].var.value().values();
    }
    CHECK(differs);
    for (const auto& p : pa)
        for (double v : p.var.value().values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}
