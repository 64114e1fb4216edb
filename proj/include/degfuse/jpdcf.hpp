// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>

#include "degfuse/autograd.hpp"
#include "degfuse/core_types.hpp"
#include "degfuse/layers.hpp"
#include "degfuse/nn_blocks.hpp"

namespace degfuse {

/// Cross-modal fusion layer guided by the joint prompt.
///
///   F'   = reduce_in(concat(SA_ir(f_ir), SA_vi(f_vi)))
///   F''  = guide(F'),  F''' = guide(f_fu_in)       (f_fu_in := F' when absent)
///   F_fu = reduce_fu(CA(concat(F'', F''')))
///   out  = reduce_out(concat(MSConv(F_fu), Trm(F_fu)))
///
/// guide() applies the scale/shift produced by MLP(Proj(concat(p_ir, p_vi))).
class JpdcfLayer {
public:
    struct Trace {
        ag::Var scale, shift;
        ag::Var merged;         // F'
        ag::Var guided;         // F''
        ag::Var guided_prior;   // F'''
        ag::Var fused;          // F_fu
        ag::Var output;
    };

    JpdcfLayer() = default;
    JpdcfLayer(const Initializer& init, const std::string& name, int channels,
               const NetworkConfig& cfg);

    /// (scale, shift) of length C from the two modality prompts.
    std::pair<ag::Var, ag::Var> fuse_prompts(const ag::Var& p_ir, const ag::Var& p_vi) const;
    GuidanceParams fuse_prompts(const PromptEmbedding& p_ir, const PromptEmbedding& p_vi) const;

    ag::Var operator()(const std::optional<ag::Var>& f_fu_in, const ag::Var& f_ir,
                       const ag::Var& f_vi, const ag::Var& p_ir, const ag::Var& p_vi) const;
    Trace trace(const std::optional<ag::Var>& f_fu_in, const ag::Var& f_ir, const ag::Var& f_vi,
                const ag::Var& p_ir, const ag::Var& p_vi) const;

    int channels() const { return channels_; }
    const Linear& projection() const { return proj_; }
    const GuidanceMlp& guidance() const { return mlp_; }
    const SpatialAttention& sa_ir() const { return sa_ir_; }
    const SpatialAttention& sa_vi() const { return sa_vi_; }
    const Conv2d& reduce_in() const { return reduce_in_; }
    const ChannelAttention& attention() const { return ca_; }
    const Conv2d& reduce_fused() const { return reduce_fu_; }
    const MsConvBlock& msconv() const { return msconv_; }
    const TransformerStack& transformer() const { return trm_; }
    const Conv2d& reduce_out() const { return reduce_out_; }
    void collect(ParamList& out) const;

private:
    Linear proj_;
    GuidanceMlp mlp_;
    SpatialAttention sa_ir_, sa_vi_;
    Conv2d reduce_in_;
    ChannelAttention ca_;
    Conv2d reduce_fu_;
    MsConvBlock msconv_;
    TransformerStack trm_;
    Conv2d reduce_out_;
    int channels_ = 0;
    int prompt_dim_ = 0;
};

/// Stand-in fusion for the JPDCF ablation: concat of the available inputs
/// followed by a 1x1 conv.
class PlainFusion {
public:
    PlainFusion() = default;
    PlainFusion(const Initializer& init, const std::string& name, int channels, bool has_prior);

    ag::Var operator()(const std::optional<ag::Var>& f_fu_in, const ag::Var& f_ir,
                       const ag::Var& f_vi) const;
    const Conv2d& conv() const { return conv_; }
    void collect(ParamList& out) const { conv_.collect(out); }

private:
    Conv2d conv_;
    bool has_prior_ = false;
};

}  // namespace degfuse
