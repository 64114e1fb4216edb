// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "degfuse/autograd.hpp"
#include "degfuse/core_types.hpp"
#include "degfuse/imgproc.hpp"

namespace degfuse {

struct LossReport {
    double intensity = 0.0;
    double texture = 0.0;
    double color = 0.0;
    double total = 0.0;
};

/// mean |fused_y - max(ir, vi_y)|
double intensity_loss(const ImageTensor& fused_y, const ImageTensor& ir_ref,
                      const ImageTensor& vi_ref_y);
/// mean |sobel(fused_y) - max(sobel(ir), sobel(vi_y))|
double texture_loss(const ImageTensor& fused_y, const ImageTensor& ir_ref,
                    const ImageTensor& vi_ref_y);
/// mean |Cb - Cb_ref| + mean |Cr - Cr_ref|
double color_loss(const YCbCrImage& fused, const YCbCrImage& vi_ref);

double weighted_total(double intensity, double texture, double color, const LossWeights& w);

/// Losses of a YCbCr network output against the sample's clean references.
LossReport total_loss(const FusionSample& sample, const ImageTensor& fused_ycc,
                      const LossWeights& w = {});

/// Reference-side quantities the losses compare against; computed once per
/// sample and reused across steps.
struct LossTargets {
    Tensor intensity;  // max(ir, vi_y), (1,H,W)
    Tensor texture;    // max(sobel(ir), sobel(vi_y)), (1,H,W)
    Tensor cb, cr;     // visible chroma, (1,H,W)
};

LossTargets loss_targets(const FusionSample& sample);

struct LossTerms {
    ag::Var intensity, texture, color, total;

    LossReport report() const;
};

/// Differentiable losses of a (3,H,W) YCbCr output.
LossTerms loss_terms(const ag::Var& fused_ycc, const LossTargets& targets, const LossWeights& w);

/// {"intensity":..,"texture":..,"color":..,"total":..}
std::string to_json(const LossReport& r);

}  // namespace degfuse
