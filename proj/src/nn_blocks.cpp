// SPDX-License-Identifier: Apache-2.0
#include "degfuse/nn_blocks.hpp"

#include <stdexcept>

namespace degfuse {

std::size_t group_norm_groups(std::size_t channels) {
    for (std::size_t g = 8; g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

// ---------------------------------------------------------------------------

GuidanceMlp::GuidanceMlp(const Initializer& init, const std::string& name, int prompt_dim,
                         int channels)
    : fc1_(init, name + ".fc1", prompt_dim, prompt_dim),
      fc2_(init, name + ".fc2", prompt_dim, 2 * channels, Linear::Init::zero),
      channels_(channels) {}

std::pair<ag::Var, ag::Var> GuidanceMlp::operator()(const ag::Var& prompt) const {
    ag::Var out = fc2_(ag::leaky_relu(fc1_(prompt)));
    const auto c = static_cast<std::size_t>(channels_);
    return {ag::slice(out, 0, c), ag::slice(out, c, c)};
}

GuidanceParams GuidanceMlp::params(const PromptEmbedding& prompt) const {
    auto [s, b] = (*this)(ag::constant(Tensor(Shape{prompt.vector.size()}, prompt.vector)));
    return {s.value().values(), b.value().values()};
}

void GuidanceMlp::collect(ParamList& out) const {
    fc1_.collect(out);
    fc2_.collect(out);
}

ag::Var prompt_guidance(const ag::Var& f, const ag::Var& scale, const ag::Var& shift) {
    return ag::add(ag::channel_shift(ag::channel_scale(f, scale), shift), f);
}

ag::Var prompt_guidance(const ag::Var& f, const ag::Var& prompt, const GuidanceMlp& mlp) {
    if (f.shape().empty() || static_cast<std::size_t>(2 * mlp.channels()) != 2 * f.shape()[0]) {
        throw std::invalid_argument("prompt_guidance: MLP emits " + std::to_string(2 * mlp.channels()) +
                                    " values for a " + shape_string(f.shape()) + " feature map");
    }
    auto [scale, shift] = mlp(prompt);
    return prompt_guidance(f, scale, shift);
}

// ---------------------------------------------------------------------------

MsConvBlock::MsConvBlock(const Initializer& init, const std::string& name, int channels, int depth,
                         std::vector<int> kernels) {
    for (int k : kernels) {
        std::vector<Conv2d> branch;
        for (int l = 0; l < depth; ++l) {
            branch.emplace_back(init, name + ".k" + std::to_string(k) + "." + std::to_string(l),
                                channels, channels, k);
        }
        branches_.push_back(std::move(branch));
    }
    const int merged = channels * static_cast<int>(kernels.size());
    merge_ = Conv2d(init, name + ".merge", merged, channels, 1);
    const auto c = static_cast<std::size_t>(channels);
    gn_gamma_ = init.constant(name + ".gn.gamma", Shape{c}, 1.0);
    gn_beta_ = init.zeros(name + ".gn.beta", Shape{c});
    groups_ = group_norm_groups(c);
}

ag::Var MsConvBlock::operator()(const ag::Var& f) const {
    std::vector<ag::Var> outs;
    outs.reserve(branches_.size());
    for (const auto& branch : branches_) {
        ag::Var h = f;
        for (const auto& conv : branch) h = ag::leaky_relu(conv(h));
        outs.push_back(h);
    }
    ag::Var merged = ag::add(merge_(ag::concat(outs)), f);
    return ag::leaky_relu(ag::group_norm(merged, groups_, gn_gamma_.var, gn_beta_.var));
}

void MsConvBlock::collect(ParamList& out) const {
    for (const auto& branch : branches_)
        for (const auto& conv : branch) conv.collect(out);
    merge_.collect(out);
    out.push_back(gn_gamma_);
    out.push_back(gn_beta_);
}

// ---------------------------------------------------------------------------

TransformerBlock::TransformerBlock(const Initializer& init, const std::string& name, int channels,
                                   int heads)
    : channels_(channels), heads_(heads) {
    if (heads < 1 || channels % heads != 0) {
        throw std::invalid_argument("transformer '" + name + "': " + std::to_string(channels) +
                                    " channels not divisible by " + std::to_string(heads) + " heads");
    }
    const auto c = static_cast<std::size_t>(channels);
    ln1_gamma_ = init.constant(name + ".norm1.gamma", Shape{c}, 1.0);
    ln1_beta_ = init.zeros(name + ".norm1.beta", Shape{c});
    qkv_ = Conv2d(init, name + ".qkv", channels, 3 * channels, 1);
    temperature_ = init.constant(name + ".temperature", Shape{static_cast<std::size_t>(heads)}, 1.0);
    proj_ = Conv2d(init, name + ".attn_out", channels, channels, 1);
    ln2_gamma_ = init.constant(name + ".norm2.gamma", Shape{c}, 1.0);
    ln2_beta_ = init.zeros(name + ".norm2.beta", Shape{c});
    const int hidden = 2 * channels;
    ffn_in_ = Conv2d(init, name + ".ffn_in", channels, 2 * hidden, 1);
    ffn_dw_ = Conv2d(init, name + ".ffn_dw", 2 * hidden, 2 * hidden, 3, 1, 2 * hidden);
    ffn_out_ = Conv2d(init, name + ".ffn_out", hidden, channels, 1);
}

ag::Var TransformerBlock::operator()(const ag::Var& x) const {
    if (x.shape().size() != 3 || x.shape()[0] != static_cast<std::size_t>(channels_)) {
        throw std::invalid_argument("transformer: expected " + std::to_string(channels_) +
                                    " channels, got " + shape_string(x.shape()));
    }
    const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const std::size_t per_head = C / static_cast<std::size_t>(heads_);

    ag::Var n1 = ag::channel_layer_norm(x, ln1_gamma_.var, ln1_beta_.var);
    ag::Var qkv = ag::reshape(qkv_(n1), Shape{3 * C, H * W});
    std::vector<ag::Var> head_out;
    for (std::size_t h = 0; h < static_cast<std::size_t>(heads_); ++h) {
        ag::Var q = ag::l2_normalize_rows(ag::slice(qkv, h * per_head, per_head));
        ag::Var k = ag::l2_normalize_rows(ag::slice(qkv, C + h * per_head, per_head));
        ag::Var v = ag::slice(qkv, 2 * C + h * per_head, per_head);
        ag::Var logits = ag::scale_by(ag::matmul(q, ag::transpose(k)), ag::slice(temperature_.var, h, 1));
        head_out.push_back(ag::matmul(ag::softmax_rows(logits), v));
    }
    ag::Var attn = ag::reshape(ag::concat(head_out), Shape{C, H, W});
    ag::Var x1 = ag::add(x, proj_(attn));

    ag::Var n2 = ag::channel_layer_norm(x1, ln2_gamma_.var, ln2_beta_.var);
    ag::Var u = ffn_dw_(ffn_in_(n2));
    const std::size_t hidden = 2 * C;
    ag::Var gated = ag::mul(ag::leaky_relu(ag::slice(u, 0, hidden)), ag::slice(u, hidden, hidden));
    return ag::add(x1, ffn_out_(gated));
}

void TransformerBlock::collect(ParamList& out) const {
    out.push_back(ln1_gamma_);
    out.push_back(ln1_beta_);
    qkv_.collect(out);
    out.push_back(temperature_);
    proj_.collect(out);
    out.push_back(ln2_gamma_);
    out.push_back(ln2_beta_);
    ffn_in_.collect(out);
    ffn_dw_.collect(out);
    ffn_out_.collect(out);
}

TransformerStack::TransformerStack(const Initializer& init, const std::string& name, int channels,
                                   int heads, int depth) {
    for (int i = 0; i < depth; ++i)
        blocks_.emplace_back(init, name + "." + std::to_string(i), channels, heads);
}

ag::Var TransformerStack::operator()(const ag::Var& x) const {
    ag::Var h = x;
    for (const auto& b : blocks_) h = b(h);
    return h;
}

void TransformerStack::collect(ParamList& out) const {
    for (const auto& b : blocks_) b.collect(out);
}

// ---------------------------------------------------------------------------

ChannelAttention::ChannelAttention(const Initializer& init, const std::string& name, int channels,
                                   int reduction) {
    if (channels < reduction) {
        throw std::invalid_argument("channel attention '" + name + "': " + std::to_string(channels) +
                                    " channels is below the reduction " + std::to_string(reduction));
    }
    const int hidden = channels / reduction;
    fc1_ = Linear(init, name + ".squeeze", channels, hidden);
    fc2_ = Linear(init, name + ".excite", hidden, channels, Linear::Init::kaiming, 1.0);
}

ag::Var ChannelAttention::operator()(const ag::Var& f) const {
    ag::Var gate = ag::sigmoid(fc2_(ag::leaky_relu(fc1_(ag::global_avg_pool(f)))));
    return ag::channel_scale(f, gate);
}

void ChannelAttention::collect(ParamList& out) const {
    fc1_.collect(out);
    fc2_.collect(out);
}

SpatialAttention::SpatialAttention(const Initializer& init, const std::string& name)
    : conv_(init, name + ".conv", 2, 1, 7) {}

ag::Var SpatialAttention::operator()(const ag::Var& f) const {
    ag::Var mask = ag::sigmoid(conv_(ag::channel_mean_max(f)));
    return ag::spatial_scale(f, mask);
}

}  // namespace degfuse
