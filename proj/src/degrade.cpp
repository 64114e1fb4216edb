// SPDX-License-Identifier: Apache-2.0
#include "degfuse/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "degfuse/layers.hpp"
#include "degfuse/prompt_encoder.hpp"

namespace degfuse {

namespace {

void require_severity(double s) {
    if (!(s >= 0.0 && s <= 1.0)) {
        throw std::invalid_argument("degradation severity must lie in [0,1], got " + format_double(s));
    }
}

void clamp_unit(Tensor& t) {
    for (double& v : t.data()) v = std::clamp(v, 0.0, 1.0);
}

// Stream ids so the two modalities never share noise.
constexpr std::uint64_t kIrStream = 0x1;
constexpr std::uint64_t kViStream = 0x2;

}  // namespace

void validate(const DegradeSpec& spec) { require_severity(spec.severity); }

Tensor noise_field(const Shape& shape, double sigma, std::uint64_t seed) {
    Tensor t(shape);
    if (sigma == 0.0) return t;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sigma);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

ImageTensor apply_low_light(const ImageTensor& img, double severity, std::uint64_t seed) {
    require_severity(severity);
    if (severity == 0.0) return img;
    const double gamma = 1.0 + 1.5 * severity;
    const double gain = 1.0 - 0.6 * severity;
    Tensor out = img.tensor();
    const Tensor noise = noise_field(out.shape(), 0.02 * severity, seed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(out[i], gamma) * gain + noise[i];
    clamp_unit(out);
    return ImageTensor(std::move(out));
}

ImageTensor apply_overexposure(const ImageTensor& img, double severity, std::uint64_t /*seed*/) {
    require_severity(severity);
    if (severity == 0.0) return img;
    Tensor out = img.tensor();
    for (double& v : out.data()) v *= 1.0 + 2.0 * severity;
    clamp_unit(out);
    return ImageTensor(std::move(out));
}

ImageTensor apply_low_contrast(const ImageTensor& img, double severity, std::uint64_t /*seed*/) {
    require_severity(severity);
    if (severity == 0.0) return img;
    const double k = 1.0 - 0.8 * severity;
    Tensor out = img.tensor();
    const std::size_t n = img.pixels();
    for (std::size_t c = 0; c < img.channels(); ++c) {
        auto plane = out.data().subspan(c * n, n);
        double mean = 0.0;
        for (double v : plane) mean += v;
        mean /= static_cast<double>(n);
        for (double& v : plane) v = mean + k * (v - mean);
    }
    clamp_unit(out);  // contraction toward the mean stays in range; this only absorbs roundoff
    return ImageTensor(std::move(out));
}

ImageTensor apply_noise(const ImageTensor& img, double severity, std::uint64_t seed) {
    require_severity(severity);
    if (severity == 0.0) return img;
    Tensor out = img.tensor();
    const Tensor noise = noise_field(out.shape(), 0.1 * severity, seed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += noise[i];
    clamp_unit(out);
    return ImageTensor(std::move(out));
}

FusionSample make_sample(const ImageTensor& ir_clean, const ImageTensor& vi_clean,
                         const DegradeSpec& spec) {
    validate(spec);
    if (ir_clean.channels() != 1 || vi_clean.channels() != 3 || !ir_clean.same_size(vi_clean)) {
        throw std::invalid_argument("make_sample: expected 1-channel infrared and RGB visible images "
                                    "of equal size");
    }
    const std::uint64_t ir_seed = mix_seed(spec.seed, kIrStream);
    const std::uint64_t vi_seed = mix_seed(spec.seed, kViStream);

    FusionSample s;
    switch (spec.ir_mode) {
        case IrDegradation::none: s.ir_degraded = ir_clean; break;
        case IrDegradation::low_contrast: s.ir_degraded = apply_low_contrast(ir_clean, spec.severity, ir_seed); break;
        case IrDegradation::noise: s.ir_degraded = apply_noise(ir_clean, spec.severity, ir_seed); break;
    }
    switch (spec.vi_mode) {
        case ViDegradation::none: s.vi_degraded = vi_clean; break;
        case ViDegradation::low_light: s.vi_degraded = apply_low_light(vi_clean, spec.severity, vi_seed); break;
        case ViDegradation::overexposure: s.vi_degraded = apply_overexposure(vi_clean, spec.severity, vi_seed); break;
    }
    s.ir_reference = ir_clean;
    s.vi_reference = vi_clean;
    const PromptPair prompts = render_prompts(spec.ir_mode, spec.vi_mode);
    s.prompt_ir = prompts.ir;
    s.prompt_vi = prompts.vi;
    return s;
}

}  // namespace degfuse
