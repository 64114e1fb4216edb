// SPDX-License-Identifier: Apache-2.0
#include "degfuse/losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace degfuse {

namespace {

void require_planes(const ImageTensor& a, const ImageTensor& b, const ImageTensor& c,
                    const char* what) {
    for (const ImageTensor* p : {&a, &b, &c}) {
        if (p->channels() != 1 || !p->same_size(a)) {
            throw std::invalid_argument(std::string(what) +
                                        ": inputs must be single-channel with equal size");
        }
    }
}

double mean_abs_diff(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

Tensor elementwise_max(std::span<const double> a, std::span<const double> b, const Shape& shape) {
    Tensor out(shape);
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::max(a[i], b[i]);
    return out;
}

}  // namespace

double intensity_loss(const ImageTensor& fused_y, const ImageTensor& ir_ref,
                      const ImageTensor& vi_ref_y) {
    require_planes(fused_y, ir_ref, vi_ref_y, "intensity_loss");
    Tensor target = elementwise_max(ir_ref.data(), vi_ref_y.data(), ir_ref.tensor().shape());
    return mean_abs_diff(fused_y.data(), target.data());
}

double texture_loss(const ImageTensor& fused_y, const ImageTensor& ir_ref,
                    const ImageTensor& vi_ref_y) {
    require_planes(fused_y, ir_ref, vi_ref_y, "texture_loss");
    ImageTensor gf = sobel_gradient(fused_y);
    ImageTensor gi = sobel_gradient(ir_ref);
    ImageTensor gv = sobel_gradient(vi_ref_y);
    Tensor target = elementwise_max(gi.data(), gv.data(), gi.tensor().shape());
    return mean_abs_diff(gf.data(), target.data());
}

double color_loss(const YCbCrImage& fused, const YCbCrImage& vi_ref) {
    require_planes(fused.cb, fused.cr, vi_ref.cb, "color_loss");
    require_planes(fused.cb, fused.cr, vi_ref.cr, "color_loss");
    return mean_abs_diff(fused.cb.data(), vi_ref.cb.data()) +
           mean_abs_diff(fused.cr.data(), vi_ref.cr.data());
}

double weighted_total(double intensity, double texture, double color, const LossWeights& w) {
    return w.alpha * intensity + w.beta * texture + w.gamma * color;
}

LossReport total_loss(const FusionSample& sample, const ImageTensor& fused_ycc,
                      const LossWeights& w) {
    sample.validate();
    if (fused_ycc.channels() != 3 || !fused_ycc.same_size(sample.ir_reference)) {
        throw std::invalid_argument("total_loss: fused image must be 3-channel and match the references");
    }
    const YCbCrImage fused = split_ycbcr(fused_ycc);
    const YCbCrImage vi = rgb_to_ycbcr(sample.vi_reference);
    LossReport r;
    r.intensity = intensity_loss(fused.y, sample.ir_reference, vi.y);
    r.texture = texture_loss(fused.y, sample.ir_reference, vi.y);
    r.color = color_loss(fused, vi);
    r.total = weighted_total(r.intensity, r.texture, r.color, w);
    return r;
}

LossTargets loss_targets(const FusionSample& sample) {
    sample.validate();
    const YCbCrImage vi = rgb_to_ycbcr(sample.vi_reference);
    const ImageTensor& ir = sample.ir_reference;
    ImageTensor gi = sobel_gradient(ir);
    ImageTensor gv = sobel_gradient(vi.y);
    const Shape& shape = ir.tensor().shape();
    return {elementwise_max(ir.data(), vi.y.data(), shape),
            elementwise_max(gi.data(), gv.data(), shape), vi.cb.tensor(), vi.cr.tensor()};
}

LossReport LossTerms::report() const {
    return {intensity.value()[0], texture.value()[0], color.value()[0], total.value()[0]};
}

LossTerms loss_terms(const ag::Var& fused_ycc, const LossTargets& targets, const LossWeights& w) {
    const Shape& s = fused_ycc.shape();
    if (s.size() != 3 || s[0] != 3 || Shape{1, s[1], s[2]} != targets.intensity.shape()) {
        throw std::invalid_argument("loss_terms: output " + shape_string(s) +
                                    " does not match targets " +
                                    shape_string(targets.intensity.shape()));
    }
    ag::Var y = ag::slice(fused_ycc, 0, 1);
    ag::Var cb = ag::slice(fused_ycc, 1, 1);
    ag::Var cr = ag::slice(fused_ycc, 2, 1);
    LossTerms t;
    t.intensity = ag::mean(ag::abs(ag::sub(y, ag::constant(targets.intensity))));
    t.texture = ag::mean(ag::abs(ag::sub(ag::sobel_l1(y), ag::constant(targets.texture))));
    t.color = ag::add(ag::mean(ag::abs(ag::sub(cb, ag::constant(targets.cb)))),
                      ag::mean(ag::abs(ag::sub(cr, ag::constant(targets.cr)))));
    t.total = ag::add(ag::add(ag::scale(t.intensity, w.alpha), ag::scale(t.texture, w.beta)),
                      ag::scale(t.color, w.gamma));
    return t;
}

std::string to_json(const LossReport& r) {
    nlohmann::ordered_json j;
    j["intensity"] = r.intensity;
    j["texture"] = r.texture;
    j["color"] = r.color;
    j["total"] = r.total;
    return j.dump();
}

}  // namespace degfuse
