// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "degfuse/core_types.hpp"

namespace degfuse {

struct DegradeSpec {
    IrDegradation ir_mode = IrDegradation::none;
    ViDegradation vi_mode = ViDegradation::none;
    double severity = 0.0;
    std::uint64_t seed = 0;

    bool operator==(const DegradeSpec&) const = default;
};

/// Throws unless severity lies in [0,1].
void validate(const DegradeSpec& spec);

// Every operator returns its input unchanged (bit-exact) at severity 0.

/// x^(1 + 1.5 s) * (1 - 0.6 s) + N(0, 0.02 s), clamped.
ImageTensor apply_low_light(const ImageTensor& img, double severity, std::uint64_t seed);
/// x * (1 + 2 s), clamped. Deterministic; the seed is accepted for a uniform signature.
ImageTensor apply_overexposure(const ImageTensor& img, double severity, std::uint64_t seed);
/// mean + (1 - 0.8 s)(x - mean), per channel.
ImageTensor apply_low_contrast(const ImageTensor& img, double severity, std::uint64_t seed);
/// x + N(0, 0.1 s), clamped.
ImageTensor apply_noise(const ImageTensor& img, double severity, std::uint64_t seed);

/// The Gaussian field apply_noise adds before clamping.
Tensor noise_field(const Shape& shape, double sigma, std::uint64_t seed);

/// Degrades a clean pair according to `spec`, keeps the clean images as
/// references and attaches the matching prompts.
FusionSample make_sample(const ImageTensor& ir_clean, const ImageTensor& vi_clean,
                         const DegradeSpec& spec);

}  // namespace degfuse
