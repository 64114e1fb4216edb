// SPDX-License-Identifier: Apache-2.0
#include "degfuse/spdce.hpp"

#include <stdexcept>

namespace degfuse {

ag::Var prompt_var(const PromptEmbedding& p) {
    return ag::constant(Tensor(Shape{p.vector.size()}, p.vector));
}

SpdceLayer::SpdceLayer(const Initializer& init, const std::string& name, int channels,
                       const NetworkConfig& cfg)
    : mlp_(init, name + ".guide", cfg.prompt_dim, channels),
      trm_(init, name + ".trm", channels, cfg.attention_heads, cfg.transformer_depth),
      msconv_(init, name + ".msconv", channels, cfg.msconv_depth, cfg.msconv_kernels),
      ca_(init, name + ".ca", 2 * channels),
      reduce_(init, name + ".reduce", 2 * channels, channels, 1),
      channels_(channels) {}

SpdceLayer::Trace SpdceLayer::trace(const ag::Var& f, const ag::Var& prompt) const {
    if (f.shape().size() != 3 || f.shape()[0] != static_cast<std::size_t>(channels_)) {
        throw std::invalid_argument("spdce: expected " + std::to_string(channels_) +
                                    " channels, got " + shape_string(f.shape()));
    }
    Trace t;
    t.guided = prompt_guidance(f, prompt, mlp_);
    t.joined = ag::concat({trm_(t.guided), msconv_(t.guided)});
    t.output = reduce_(ca_(t.joined));
    return t;
}

ag::Var SpdceLayer::operator()(const ag::Var& f, const ag::Var& prompt) const {
    return trace(f, prompt).output;
}

void SpdceLayer::collect(ParamList& out) const {
    mlp_.collect(out);
    trm_.collect(out);
    msconv_.collect(out);
    ca_.collect(out);
    reduce_.collect(out);
}

PlainExtractor::PlainExtractor(const Initializer& init, const std::string& name, int channels)
    : conv_(init, name + ".conv", channels, channels, 3) {}

ag::Var PlainExtractor::operator()(const ag::Var& f) const { return ag::leaky_relu(conv_(f)); }

}  // namespace degfuse
