// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "degfuse/autograd.hpp"
#include "degfuse/core_types.hpp"
#include "degfuse/layers.hpp"
#include "degfuse/nn_blocks.hpp"

namespace degfuse {

/// Embedding as a constant (non-trainable) vector Var.
ag::Var prompt_var(const PromptEmbedding& p);

/// Prompt-guided single-modality extractor. The guided features feed a
/// transformer stack and a multi-scale conv block in parallel; their
/// concatenation passes through channel attention and a 1x1 reduction.
class SpdceLayer {
public:
    /// Intermediate values of one forward pass.
    struct Trace {
        ag::Var guided;   // F^G
        ag::Var joined;   // concat(Trm(F^G), MSConv(F^G)), 2C channels
        ag::Var output;
    };

    SpdceLayer() = default;
    SpdceLayer(const Initializer& init, const std::string& name, int channels,
               const NetworkConfig& cfg);

    ag::Var operator()(const ag::Var& f, const ag::Var& prompt) const;
    Trace trace(const ag::Var& f, const ag::Var& prompt) const;

    int channels() const { return channels_; }
    const GuidanceMlp& guidance() const { return mlp_; }
    const TransformerStack& transformer() const { return trm_; }
    const MsConvBlock& msconv() const { return msconv_; }
    const ChannelAttention& attention() const { return ca_; }
    const Conv2d& reduce() const { return reduce_; }
    void collect(ParamList& out) const;

private:
    GuidanceMlp mlp_;
    TransformerStack trm_;
    MsConvBlock msconv_;
    ChannelAttention ca_;
    Conv2d reduce_;
    int channels_ = 0;
};

/// Stand-in extractor for the SPDCE ablation: 3x3 conv + LeakyReLU,
/// ignores the prompt.
class PlainExtractor {
public:
    PlainExtractor() = default;
    PlainExtractor(const Initializer& init, const std::string& name, int channels);

    ag::Var operator()(const ag::Var& f) const;
    const Conv2d& conv() const { return conv_; }
    void collect(ParamList& out) const { conv_.collect(out); }

private:
    Conv2d conv_;
};

}  // namespace degfuse
