// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "degfuse/autograd.hpp"
#include "degfuse/core_types.hpp"
#include "degfuse/layers.hpp"

namespace degfuse {

/// Full-range BT.601 planes. Chroma is offset so that neutral gray is 0.5.
struct YCbCrImage {
    ImageTensor y;
    ImageTensor cb;
    ImageTensor cr;
};

YCbCrImage rgb_to_ycbcr(const ImageTensor& rgb);
/// Inverse transform, clamped to [0,1].
ImageTensor ycbcr_to_rgb(const YCbCrImage& ycc);
/// Inverse transform without clamping; values may leave [0,1].
Tensor ycbcr_to_rgb_unclamped(const YCbCrImage& ycc);

/// Stack / unstack the three planes as a 3-channel tensor in Y, Cb, Cr order.
ImageTensor stack_ycbcr(const YCbCrImage& ycc);
YCbCrImage split_ycbcr(const ImageTensor& ycc);

/// Luminance plane of an RGB image; single-channel images pass through.
ImageTensor luminance(const ImageTensor& img);

/// Horizontal and vertical 3x3 Sobel responses, replicate-padded borders.
struct SobelResponse {
    Tensor gx;  // (1, H, W)
    Tensor gy;  // (1, H, W)
};
SobelResponse sobel_responses(const ImageTensor& img);

/// |Gx| + |Gy| of a single-channel image.
ImageTensor sobel_gradient(const ImageTensor& img);

namespace ag {
/// Differentiable |Gx| + |Gy| on a (1, H, W) Var, with sign(0) := 0.
Var sobel_l1(const Var& x);
}  // namespace ag

/// Learned stride-2 3x3 convolution: (C, H, W) -> (2C, H/2, W/2).
class Downsample2 {
public:
    Downsample2() = default;
    Downsample2(const Initializer& init, const std::string& name, int channels);

    ag::Var operator()(const ag::Var& x) const;
    const Conv2d& conv() const { return conv_; }
    void collect(ParamList& out) const { conv_.collect(out); }

private:
    Conv2d conv_;
};

/// Nearest-neighbour x2 followed by a 3x3 convolution: (C, H, W) -> (C/2, 2H, 2W).
class Upsample2 {
public:
    Upsample2() = default;
    Upsample2(const Initializer& init, const std::string& name, int channels);

    ag::Var operator()(const ag::Var& x) const;
    const Conv2d& conv() const { return conv_; }
    void collect(ParamList& out) const { conv_.collect(out); }

private:
    Conv2d conv_;
};

class JointHistogram {
public:
    JointHistogram(std::size_t bins) : bins_(bins), counts_(bins * bins, 0) {}

    std::size_t bins() const { return bins_; }
    std::size_t count(std::size_t a_bin, std::size_t b_bin) const { return counts_[a_bin * bins_ + b_bin]; }
    std::size_t& count(std::size_t a_bin, std::size_t b_bin) { return counts_[a_bin * bins_ + b_bin]; }
    std::size_t total() const;
    std::vector<std::size_t> marginal_a() const;
    std::vector<std::size_t> marginal_b() const;

private:
    std::size_t bins_;
    std::vector<std::size_t> counts_;
};

inline constexpr std::size_t kHistogramBins = 256;

/// Uniform bins over [0,1]; value v falls in bin min(bins-1, floor(v*bins)).
std::size_t histogram_bin(double v, std::size_t bins);
std::vector<std::size_t> histogram(const ImageTensor& img, std::size_t bins = kHistogramBins);
JointHistogram joint_histogram(const ImageTensor& a, const ImageTensor& b,
                               std::size_t bins = kHistogramBins);

}  // namespace degfuse
