// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "degfuse/fusion_net.hpp"
#include "degfuse/losses.hpp"
#include "helpers.hpp"

using namespace degfuse;
using namespace testing;

namespace {

std::size_t conv_count(std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; }
std::size_t linear_count(std::size_t in, std::size_t out) { return out * in + out; }

std::size_t msconv_count(std::size_t c) {
    return 3 * (conv_count(c, c, 1) + conv_count(c, c, 3) + conv_count(c, c, 5)) + conv_count(3 * c, c, 1) + 2 * c;
}

std::size_t transformer_count(std::size_t c, std::size_t heads) {
    return 2 * c + conv_count(c, 3 * c, 1) + heads + conv_count(c, c, 1) + 2 * c + conv_count(c, 4 * c, 1) +
           (4 * c * 9 + 4 * c) + conv_count(2 * c, c, 1);
}

std::size_t ca_count(std::size_t c) { return linear_count(c, c / 8) + linear_count(c / 8, c); }

/// Parameter count derived from the architecture description alone.
std::size_t expected_count(const NetworkConfig& cfg) {
    const std::size_t D = static_cast<std::size_t>(cfg.prompt_dim);
    const std::size_t heads = static_cast<std::size_t>(cfg.attention_heads);
    const std::size_t N = static_cast<std::size_t>(cfg.transformer_depth);
    const std::size_t c0 = static_cast<std::size_t>(cfg.base_channels);
    std::size_t total = conv_count(1, c0, 3) + conv_count(3, c0, 3);
    for (std::size_t n = 0; n < 4; ++n) {
        const std::size_t c = c0 << n;
        const std::size_t guide = linear_count(D, D) + linear_count(D, 2 * c);
        const std::size_t trm = N * transformer_count(c, heads);
        if (cfg.architecture == Architecture::no_spdce) {
            total += 2 * conv_count(c, c, 3);
        } else {
            total += 2 * (guide + trm + msconv_count(c) + ca_count(2 * c) + conv_count(2 * c, c, 1));
        }
        if (n < 3) total += 2 * conv_count(c, 2 * c, 3) + conv_count(2 * c, c, 3);
        if (cfg.architecture == Architecture::no_jpdcf) {
            total += conv_count((n < 3 ? 3 : 2) * c, c, 1);
        } else {
            total += linear_count(2 * D, D) + guide + 2 * conv_count(2, 1, 7) + 3 * conv_count(2 * c, c, 1) +
                     ca_count(2 * c) + msconv_count(c) + trm;
        }
    }
    return total + 2 * conv_count(c0, c0, 3) + conv_count(c0, 3, 3);
}

struct Inputs {
    ImageTensor ir, vi;
    PromptEmbedding pi, pv;
};

Inputs inputs(std::size_t h, std::size_t w, int dim, std::uint64_t seed) {
    return {random_image(1, h, w, seed), random_image(3, h, w, seed + 1), random_prompt(dim, seed + 2),
            random_prompt(dim, seed + 3)};
}

}  // namespace

TEST_CASE("forward shape and range") {
    NetworkConfig cfg = toy_network();
    cfg.base_channels = 8;
    FusionNetwork net(cfg);
    auto in = inputs(96, 96, cfg.prompt_dim, 1);
    auto out = net.forward(in.ir, in.vi, in.pi, in.pv);
    CHECK(out.shape() == Shape{3, 96, 96});
    for (double v : out.value().values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("forward is deterministic per seed") {
    auto in = inputs(16, 16, 16, 5);
    FusionNetwork a(toy_network(3)), b(toy_network(3)), c(toy_network(4));
    auto ya = a.forward(in.ir, in.vi, in.pi, in.pv).value().values();
    CHECK(ya == b.forward(in.ir, in.vi, in.pi, in.pv).value().values());
    CHECK(ya == a.forward(in.ir, in.vi, in.pi, in.pv).value().values());
    CHECK(ya != c.forward(in.ir, in.vi, in.pi, in.pv).value().values());
}

TEST_CASE("toy network gives finite loss and gradients") {
    NetworkConfig cfg = toy_network();
    cfg.base_channels = 8;
    FusionNetwork net(cfg);
    auto in = inputs(16, 16, cfg.prompt_dim, 9);
    FusionSample s{in.ir, in.vi, in.ir, in.vi, "a", "b"};
    auto y = net.forward(in.ir, in.vi, in.pi, in.pv);
    auto terms = loss_terms(y, loss_targets(s), LossWeights{});
    CHECK(std::isfinite(terms.total.value()[0]));
    ag::backward(terms.total);
    for (const auto& p : net.parameters()) CHECK(all_finite(p.var.grad()));
}

TEST_CASE("input validation") {
    FusionNetwork net(toy_network());
    auto in = inputs(16, 16, 16, 1);
    CHECK_THROWS_AS(net.forward(random_image(1, 12, 16, 1), random_image(3, 12, 16, 2), in.pi, in.pv),
                    std::invalid_argument);
    CHECK_THROWS_AS(net.forward(in.ir, random_image(3, 16, 24, 2), in.pi, in.pv), std::invalid_argument);
    CHECK_THROWS_AS(net.forward(in.vi, in.vi, in.pi, in.pv), std::invalid_argument);
    CHECK_THROWS_AS(net.forward(in.ir, in.vi, random_prompt(8, 1), in.pv), std::invalid_argument);
    HashingPromptEncoder wrong(32);
    CHECK_THROWS_AS(net.fuse(in.ir, in.vi, "x", "y", wrong), std::invalid_argument);
    NetworkConfig bad = toy_network();
    bad.num_scales = 3;
    CHECK_THROWS_AS(FusionNetwork{bad}, std::invalid_argument);
}

TEST_CASE("parameter counting") {
    CHECK(count_parameters(ParamList{}) == 0);
    ParamList one;
    Conv2d(Initializer(1), "c", 1, 8, 3).collect(one);
    CHECK(count_parameters(one) == 80);

    for (auto arch : {Architecture::full, Architecture::no_spdce, Architecture::no_jpdcf}) {
        NetworkConfig cfg;
        cfg.architecture = arch;
        CAPTURE(to_string(arch));
        CHECK(count_parameters(FusionNetwork(cfg)) == expected_count(cfg));
    }
    CHECK(count_parameters(FusionNetwork(toy_network())) == expected_count(toy_network()));
}

TEST_CASE("parameter names are unique") {
    FusionNetwork net(toy_network());
    std::set<std::string> names;
    for (const auto& p : net.parameters()) CHECK(names.insert(p.name).second);
}

TEST_CASE("ablation variants") {
    FusionNetwork net(toy_network());
    auto same = ablation_variant(net, Architecture::full);
    REQUIRE(same.parameters().size() == net.parameters().size());
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        CHECK(same.parameters()[i].name == net.parameters()[i].name);
        CHECK(same.parameters()[i].var.value().values() == net.parameters()[i].var.value().values());
    }
    auto no_spdce = ablation_variant(net, Architecture::no_spdce);
    CHECK(count_parameters(no_spdce) < count_parameters(net));
    CHECK(no_spdce.spdce_ir().empty());

    auto no_jpdcf = ablation_variant(net, Architecture::no_jpdcf);
    CHECK(no_jpdcf.jpdcf().empty());
    auto in = inputs(16, 16, 16, 2);
    CHECK(no_jpdcf.forward(in.ir, in.vi, in.pi, in.pv).shape() == Shape{3, 16, 16});
    CHECK(no_spdce.forward(in.ir, in.vi, in.pi, in.pv).shape() == Shape{3, 16, 16});
    // Shared modules start from the same values.
    CHECK(no_jpdcf.shallow_ir().weight().var.value().values() == net.shallow_ir().weight().var.value().values());
}

TEST_CASE("output reacts to the prompts once guidance is live") {
    FusionNetwork net(toy_network());
    for (const auto& p : net.parameters())
        if (p.name.find("guide.fc2.weight") != std::string::npos) jitter(p, 0.05, hash_string(p.name));
    HashingPromptEncoder enc(16);
    auto in = inputs(16, 16, 16, 3);
    auto a = net.fuse(in.ir, in.vi, "IVIF. The infrared image suffers from noise.",
                      "IVIF. The visible image suffers from low light.", enc);
    auto b = net.fuse(in.ir, in.vi, "IVIF. The infrared image suffers from low contrast.",
                      "IVIF. The visible image suffers from low light.", enc);
    double diff = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i) diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
    CHECK(diff > 0.0);
}

// The loss is piecewise smooth (|.|, max, LeakyReLU); a small step keeps
// the central difference from straddling a kink, at the price of more
// roundoff, hence the larger floor for near-zero gradients.
TEST_CASE("end-to-end gradients on a toy net") {
    FusionNetwork net(toy_network(11));
    for (const auto& p : net.parameters())
        if (p.name.find("guide.fc2.weight") != std::string::npos) jitter(p, 0.05, hash_string(p.name));
    auto in = inputs(16, 16, 16, 4);
    auto s = FusionSample{in.ir, in.vi, random_image(1, 16, 16, 40), random_image(3, 16, 16, 41), "a", "b"};
    const auto targets = loss_targets(s);
    const auto vi_ycc = ag::constant(stack_ycbcr(rgb_to_ycbcr(in.vi)).tensor());
    auto r = gradient_check(
        net.parameters(),
        [&] {
            auto y = net.forward(ag::constant(in.ir.tensor()), vi_ycc, prompt_var(in.pi), prompt_var(in.pv));
            return loss_terms(y, targets, LossWeights{}).total;
        },
        12, 5, 1e-6, 1e-3, 1e-4);
    INFO("worst " << r.worst << " at " << r.worst_param);
    CHECK(r.failures == 0);
}

TEST_CASE("export converts YCbCr to RGB") {
    auto ycc = ImageTensor(Tensor(Shape{3, 1, 2}, {0.5, 0.2, 0.5, 0.5, 0.5, 0.5}));
    auto rgb = fused_to_rgb(ycc);
    CHECK(rgb.channels() == 3);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(rgb.at(c, 0, 0) == doctest::Approx(0.5));
        CHECK(rgb.at(c, 0, 1) == doctest::Approx(0.2));
    }
}

TEST_CASE("checkpoint round trip") {
    FusionNetwork net(toy_network(21));
    randomize(net.parameters(), 0.5, 1);
    for (const auto& p : net.parameters()) {
        ag::Var v = p.var;
        round_to_float(v.mutable_value());
    }
    auto dir = scratch_dir("fusion_ckpt");
    const auto path = (dir / "net.ckpt").string();
    write_checkpoint(path, network_checkpoint(net));
    CHECK_FALSE(std::filesystem::exists(path + ".partial"));

    auto loaded = load_network(read_checkpoint(path));
    CHECK(loaded.config() == net.config());
    for (std::size_t i = 0; i < net.parameters().size(); ++i)
        CHECK(loaded.parameters()[i].var.value().values() == net.parameters()[i].var.value().values());

    auto in = inputs(16, 16, 16, 6);
    CHECK(loaded.forward(in.ir, in.vi, in.pi, in.pv).value().values() ==
          net.forward(in.ir, in.vi, in.pi, in.pv).value().values());

    const auto path2 = (dir / "again.ckpt").string();
    write_checkpoint(path2, network_checkpoint(loaded));
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
}

TEST_CASE("corrupted checkpoints are rejected") {
    FusionNetwork net(toy_network());
    const std::string bytes = encode_checkpoint(network_checkpoint(net));
    CHECK_NOTHROW(decode_checkpoint(bytes));

    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(decode_checkpoint(flipped), std::runtime_error);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), std::runtime_error);
    CHECK_THROWS_AS(decode_checkpoint("not a checkpoint"), std::runtime_error);
    CHECK_THROWS_AS(read_checkpoint((scratch_dir("missing_ckpt") / "none.ckpt").string()), std::runtime_error);
}

TEST_CASE("shape mismatches are rejected on load") {
    FusionNetwork small(toy_network());
    NetworkConfig wider = toy_network();
    wider.base_channels = 8;
    FusionNetwork big(wider);
    auto ckpt = network_checkpoint(small);
    CHECK_THROWS_AS(assign_parameters(big, ckpt), std::runtime_error);

    // A header claiming the wider config cannot load the narrow arrays.
    auto lying = ckpt;
    lying.header["base_channels"] = "8";
    CHECK_THROWS_AS(load_network(lying), std::runtime_error);

    auto missing = ckpt;
    missing.arrays.pop_back();
    CHECK_THROWS_AS(load_network(missing), std::runtime_error);

    // Nothing was modified by the failed assignment.
    FusionNetwork fresh(wider);
    for (std::size_t i = 0; i < big.parameters().size(); ++i)
        CHECK(big.parameters()[i].var.value().values() == fresh.parameters()[i].var.value().values());
}
