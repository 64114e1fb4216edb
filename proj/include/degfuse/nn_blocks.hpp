// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "degfuse/autograd.hpp"
#include "degfuse/core_types.hpp"
#include "degfuse/layers.hpp"

namespace degfuse {

/// Largest divisor of `channels` not exceeding 8.
std::size_t group_norm_groups(std::size_t channels);

/// Prompt embedding -> per-channel (scale, shift). Two layers with a
/// hidden width equal to the prompt dimension; the output layer starts at
/// zero so a fresh guidance site is the identity.
class GuidanceMlp {
public:
    GuidanceMlp() = default;
    GuidanceMlp(const Initializer& init, const std::string& name, int prompt_dim, int channels);

    /// Returns (scale, shift), each of length `channels`.
    std::pair<ag::Var, ag::Var> operator()(const ag::Var& prompt) const;
    GuidanceParams params(const PromptEmbedding& prompt) const;

    int channels() const { return channels_; }
    const Linear& hidden() const { return fc1_; }
    const Linear& output() const { return fc2_; }
    void collect(ParamList& out) const;

private:
    Linear fc1_;
    Linear fc2_;
    int channels_ = 0;
};

/// f * BC(scale) + BC(shift) + f.
ag::Var prompt_guidance(const ag::Var& f, const ag::Var& scale, const ag::Var& shift);
/// Guidance driven by an MLP; throws when the MLP does not emit 2C values.
ag::Var prompt_guidance(const ag::Var& f, const ag::Var& prompt, const GuidanceMlp& mlp);

/// Parallel k=1/3/5 branches of three conv+LeakyReLU layers, a 1x1 merge,
/// residual add, group norm and LeakyReLU. Shape preserving.
class MsConvBlock {
public:
    MsConvBlock() = default;
    MsConvBlock(const Initializer& init, const std::string& name, int channels,
                int depth = 3, std::vector<int> kernels = {1, 3, 5});

    ag::Var operator()(const ag::Var& f) const;

    const std::vector<std::vector<Conv2d>>& branches() const { return branches_; }
    const Conv2d& merge() const { return merge_; }
    const Parameter& gn_gamma() const { return gn_gamma_; }
    const Parameter& gn_beta() const { return gn_beta_; }
    std::size_t groups() const { return groups_; }
    void collect(ParamList& out) const;

private:
    std::vector<std::vector<Conv2d>> branches_;
    Conv2d merge_;
    Parameter gn_gamma_;
    Parameter gn_beta_;
    std::size_t groups_ = 1;
};

/// Transposed (channel-token) self-attention plus a gated depthwise-conv
/// feed-forward, both pre-normalized and residual.
///
/// Attention per head h with channel rows Q_h, K_h, V_h (c x HW):
///   A_h = softmax(t_h * norm(Q_h) norm(K_h)^T),  out_h = A_h V_h
/// where norm() scales every row to unit length and t_h is learned.
/// The feed-forward expands to 2 x 2C channels, runs a 3x3 depthwise conv,
/// and gates one half with LeakyReLU of the other.
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(const Initializer& init, const std::string& name, int channels, int heads);

    ag::Var operator()(const ag::Var& x) const;

    int heads() const { return heads_; }
    const Parameter& norm1_gamma() const { return ln1_gamma_; }
    const Parameter& norm1_beta() const { return ln1_beta_; }
    const Conv2d& qkv() const { return qkv_; }
    const Parameter& temperature() const { return temperature_; }
    const Conv2d& attn_out() const { return proj_; }
    const Parameter& norm2_gamma() const { return ln2_gamma_; }
    const Parameter& norm2_beta() const { return ln2_beta_; }
    const Conv2d& ffn_in() const { return ffn_in_; }
    const Conv2d& ffn_dw() const { return ffn_dw_; }
    const Conv2d& ffn_out() const { return ffn_out_; }
    void collect(ParamList& out) const;

private:
    Parameter ln1_gamma_, ln1_beta_;
    Conv2d qkv_;
    Parameter temperature_;
    Conv2d proj_;
    Parameter ln2_gamma_, ln2_beta_;
    Conv2d ffn_in_, ffn_dw_, ffn_out_;
    int channels_ = 0;
    int heads_ = 1;
};

/// N transformer blocks applied in sequence.
class TransformerStack {
public:
    TransformerStack() = default;
    TransformerStack(const Initializer& init, const std::string& name, int channels, int heads,
                     int depth);

    ag::Var operator()(const ag::Var& x) const;
    const std::vector<TransformerBlock>& blocks() const { return blocks_; }
    void collect(ParamList& out) const;

private:
    std::vector<TransformerBlock> blocks_;
};

/// Squeeze-excitation gate: pool -> C/r -> LeakyReLU -> C -> sigmoid -> scale.
class ChannelAttention {
public:
    static constexpr int kReduction = 8;

    ChannelAttention() = default;
    ChannelAttention(const Initializer& init, const std::string& name, int channels,
                     int reduction = kReduction);

    ag::Var operator()(const ag::Var& f) const;

    const Linear& squeeze() const { return fc1_; }
    const Linear& excite() const { return fc2_; }
    void collect(ParamList& out) const;

private:
    Linear fc1_;
    Linear fc2_;
};

/// Mask from channel mean/max maps through a 7x7 conv and sigmoid.
class SpatialAttention {
public:
    SpatialAttention() = default;
    SpatialAttention(const Initializer& init, const std::string& name);

    ag::Var operator()(const ag::Var& f) const;

    const Conv2d& conv() const { return conv_; }
    void collect(ParamList& out) const { conv_.collect(out); }

private:
    Conv2d conv_;
};

}  // namespace degfuse
