// SPDX-License-Identifier: Apache-2.0
#include "degfuse/jpdcf.hpp"

#include <stdexcept>

namespace degfuse {

namespace {

void require_feature(const ag::Var& v, int channels, const Shape& like, const char* what) {
    if (v.shape().size() != 3 || v.shape()[0] != static_cast<std::size_t>(channels) ||
        (!like.empty() && v.shape() != like)) {
        throw std::invalid_argument(std::string("jpdcf: ") + what + " has shape " +
                                    shape_string(v.shape()) + ", expected " +
                                    std::to_string(channels) + " channels" +
                                    (like.empty() ? "" : " and shape " + shape_string(like)));
    }
}

}  // namespace

JpdcfLayer::JpdcfLayer(const Initializer& init, const std::string& name, int channels,
                       const NetworkConfig& cfg)
    : proj_(init, name + ".proj", 2 * cfg.prompt_dim, cfg.prompt_dim),
      mlp_(init, name + ".guide", cfg.prompt_dim, channels),
      sa_ir_(init, name + ".sa_ir"),
      sa_vi_(init, name + ".sa_vi"),
      reduce_in_(init, name + ".reduce_in", 2 * channels, channels, 1),
      ca_(init, name + ".ca", 2 * channels),
      reduce_fu_(init, name + ".reduce_fu", 2 * channels, channels, 1),
      msconv_(init, name + ".msconv", channels, cfg.msconv_depth, cfg.msconv_kernels),
      trm_(init, name + ".trm", channels, cfg.attention_heads, cfg.transformer_depth),
      reduce_out_(init, name + ".reduce_out", 2 * channels, channels, 1),
      channels_(channels),
      prompt_dim_(cfg.prompt_dim) {}

std::pair<ag::Var, ag::Var> JpdcfLayer::fuse_prompts(const ag::Var& p_ir, const ag::Var& p_vi) const {
    if (p_ir.shape() != p_vi.shape() || p_ir.shape() != Shape{static_cast<std::size_t>(prompt_dim_)}) {
        throw std::invalid_argument("jpdcf: prompt embeddings " + shape_string(p_ir.shape()) + " and " +
                                    shape_string(p_vi.shape()) + " do not match dimension " +
                                    std::to_string(prompt_dim_));
    }
    return mlp_(proj_(ag::concat({p_ir, p_vi})));
}

GuidanceParams JpdcfLayer::fuse_prompts(const PromptEmbedding& p_ir, const PromptEmbedding& p_vi) const {
    auto as_var = [](const PromptEmbedding& p) {
        return ag::constant(Tensor(Shape{p.vector.size()}, p.vector));
    };
    auto [s, b] = fuse_prompts(as_var(p_ir), as_var(p_vi));
    return {s.value().values(), b.value().values()};
}

JpdcfLayer::Trace JpdcfLayer::trace(const std::optional<ag::Var>& f_fu_in, const ag::Var& f_ir,
                                    const ag::Var& f_vi, const ag::Var& p_ir,
                                    const ag::Var& p_vi) const {
    require_feature(f_ir, channels_, {}, "infrared features");
    require_feature(f_vi, channels_, f_ir.shape(), "visible features");
    if (f_fu_in) require_feature(*f_fu_in, channels_, f_ir.shape(), "prior fused features");

    Trace t;
    std::tie(t.scale, t.shift) = fuse_prompts(p_ir, p_vi);
    t.merged = reduce_in_(ag::concat({sa_ir_(f_ir), sa_vi_(f_vi)}));
    t.guided = prompt_guidance(t.merged, t.scale, t.shift);
    t.guided_prior = f_fu_in ? prompt_guidance(*f_fu_in, t.scale, t.shift) : t.guided;
    t.fused = reduce_fu_(ca_(ag::concat({t.guided, t.guided_prior})));
    t.output = reduce_out_(ag::concat({msconv_(t.fused), trm_(t.fused)}));
    return t;
}

ag::Var JpdcfLayer::operator()(const std::optional<ag::Var>& f_fu_in, const ag::Var& f_ir,
                               const ag::Var& f_vi, const ag::Var& p_ir, const ag::Var& p_vi) const {
    return trace(f_fu_in, f_ir, f_vi, p_ir, p_vi).output;
}

void JpdcfLayer::collect(ParamList& out) const {
    proj_.collect(out);
    mlp_.collect(out);
    sa_ir_.collect(out);
    sa_vi_.collect(out);
    reduce_in_.collect(out);
    ca_.collect(out);
    reduce_fu_.collect(out);
    msconv_.collect(out);
    trm_.collect(out);
    reduce_out_.collect(out);
}

PlainFusion::PlainFusion(const Initializer& init, const std::string& name, int channels,
                         bool has_prior)
    : conv_(init, name + ".conv", (has_prior ? 3 : 2) * channels, channels, 1),
      has_prior_(has_prior) {}

ag::Var PlainFusion::operator()(const std::optional<ag::Var>& f_fu_in, const ag::Var& f_ir,
                                const ag::Var& f_vi) const {
    if (f_fu_in.has_value() != has_prior_) {
        throw std::invalid_argument("plain fusion: prior features " +
                                    std::string(has_prior_ ? "required" : "not expected"));
    }
    if (f_fu_in) return conv_(ag::concat({*f_fu_in, f_ir, f_vi}));
    return conv_(ag::concat({f_ir, f_vi}));
}

}  // namespace degfuse
