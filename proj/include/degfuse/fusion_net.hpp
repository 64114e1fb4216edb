// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "degfuse/autograd.hpp"
#include "degfuse/core_types.hpp"
#include "degfuse/imgproc.hpp"
#include "degfuse/jpdcf.hpp"
#include "degfuse/layers.hpp"
#include "degfuse/nn_blocks.hpp"
#include "degfuse/prompt_encoder.hpp"
#include "degfuse/spdce.hpp"

namespace degfuse {

/// Two-branch encoder / fusion decoder network. Inputs are a 1-channel
/// infrared image and an RGB visible image; the output is a 3-channel
/// YCbCr image in [0,1].
///
/// Level n (0-based) runs at base_channels * 2^n channels and 1/2^n
/// resolution. Parameters are owned through shared nodes, so the network
/// is move-only.
class FusionNetwork {
public:
    explicit FusionNetwork(const NetworkConfig& cfg);

    FusionNetwork(const FusionNetwork&) = delete;
    FusionNetwork& operator=(const FusionNetwork&) = delete;
    FusionNetwork(FusionNetwork&&) = default;
    FusionNetwork& operator=(FusionNetwork&&) = default;

    const NetworkConfig& config() const { return cfg_; }

    /// Differentiable forward. `vi_ycc` is the visible image already in
    /// YCbCr; prompts are embedding vectors of length prompt_dim.
    ag::Var forward(const ag::Var& ir, const ag::Var& vi_ycc, const ag::Var& p_ir,
                    const ag::Var& p_vi) const;
    ag::Var forward(const ImageTensor& ir, const ImageTensor& vi_rgb, const PromptEmbedding& p_ir,
                    const PromptEmbedding& p_vi) const;

    /// Inference convenience: encodes the prompts and returns the YCbCr output.
    ImageTensor fuse(const ImageTensor& ir, const ImageTensor& vi_rgb, const std::string& prompt_ir,
                     const std::string& prompt_vi, const PromptEncoder& encoder) const;

    /// Every trainable parameter in a fixed order.
    const ParamList& parameters() const { return params_; }

    const Conv2d& shallow_ir() const { return shallow_ir_; }
    const Conv2d& shallow_vi() const { return shallow_vi_; }
    /// Empty in the no_spdce variant.
    const std::vector<SpdceLayer>& spdce_ir() const { return spdce_ir_; }
    const std::vector<SpdceLayer>& spdce_vi() const { return spdce_vi_; }
    /// Empty in the no_jpdcf variant.
    const std::vector<JpdcfLayer>& jpdcf() const { return jpdcf_; }

private:
    ag::Var extract(int level, bool infrared, const ag::Var& f, const ag::Var& prompt) const;
    ag::Var fuse_level(int level, const std::optional<ag::Var>& prior, const ag::Var& f_ir,
                       const ag::Var& f_vi, const ag::Var& p_ir, const ag::Var& p_vi) const;

    NetworkConfig cfg_;
    Conv2d shallow_ir_, shallow_vi_;
    std::vector<SpdceLayer> spdce_ir_, spdce_vi_;
    std::vector<PlainExtractor> plain_ir_, plain_vi_;
    std::vector<Downsample2> ds_ir_, ds_vi_;
    std::vector<JpdcfLayer> jpdcf_;
    std::vector<PlainFusion> plain_fu_;
    std::vector<Upsample2> us_;
    std::vector<Conv2d> recon_;
    ParamList params_;
};

std::size_t count_parameters(const FusionNetwork& net);
std::size_t count_parameters(const ParamList& params);

/// Same config and seed with the given architecture.
FusionNetwork ablation_variant(const FusionNetwork& net, Architecture mode);

/// Fused network output (YCbCr) converted to RGB for export.
ImageTensor fused_to_rgb(const ImageTensor& ycc);

// ---------------------------------------------------------------------------
// Checkpoint files
//
//   "DEGFUSE-CHECKPOINT 1\n"
//   "header-bytes <n>\n" followed by n bytes of "key = value" lines
//   u32 array count, then per array: u32 name length, name, u32 rank,
//   u64 dims[rank], float32 values
//   u32 CRC-32 of everything before it
//
// All integers and floats are little-endian.

struct Checkpoint {
    KeyValues header;
    std::vector<std::pair<std::string, Tensor>> arrays;

    const Tensor* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Network config keys plus every parameter array.
Checkpoint network_checkpoint(const FusionNetwork& net);
/// Builds the network described by the header and loads its parameters,
/// validating every shape.
FusionNetwork load_network(const Checkpoint& ckpt);
/// Copies parameter values from `ckpt` into `net`; throws on any missing
/// array or shape mismatch.
void assign_parameters(const FusionNetwork& net, const Checkpoint& ckpt);

}  // namespace degfuse
