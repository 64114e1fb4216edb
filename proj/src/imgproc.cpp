// SPDX-License-Identifier: Apache-2.0
#include "degfuse/imgproc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace degfuse {

namespace {

// BT.601 luma weights; chroma scales follow from them so the inverse is exact.
constexpr double kKr = 0.299;
constexpr double kKg = 0.587;
constexpr double kKb = 0.114;
constexpr double kCbScale = 0.5 / (1.0 - kKb);
constexpr double kCrScale = 0.5 / (1.0 - kKr);

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

ImageTensor plane_image(std::size_t h, std::size_t w, std::vector<double> values) {
    return ImageTensor(Tensor(Shape{1, h, w}, std::move(values)));
}

void require_single_channel(const ImageTensor& img, const char* op) {
    if (img.channels() != 1) {
        throw std::invalid_argument(std::string(op) + ": expected 1 channel, got " +
                                    std::to_string(img.channels()));
    }
}

}  // namespace

YCbCrImage rgb_to_ycbcr(const ImageTensor& rgb) {
    if (rgb.channels() != 3) {
        throw std::invalid_argument("rgb_to_ycbcr: expected 3 channels, got " +
                                    std::to_string(rgb.channels()));
    }
    const std::size_t h = rgb.height(), w = rgb.width(), n = h * w;
    auto r = rgb.plane(0), g = rgb.plane(1), b = rgb.plane(2);
    std::vector<double> y(n), cb(n), cr(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double luma = kKr * r[i] + kKg * g[i] + kKb * b[i];
        // The transform maps the unit cube into itself; clamping only absorbs roundoff.
        y[i] = clamp01(luma);
        cb[i] = clamp01(0.5 + kCbScale * (b[i] - luma));
        cr[i] = clamp01(0.5 + kCrScale * (r[i] - luma));
    }
    return {plane_image(h, w, std::move(y)), plane_image(h, w, std::move(cb)),
            plane_image(h, w, std::move(cr))};
}

Tensor ycbcr_to_rgb_unclamped(const YCbCrImage& ycc) {
    const std::size_t h = ycc.y.height(), w = ycc.y.width(), n = h * w;
    if (!ycc.cb.same_size(ycc.y) || !ycc.cr.same_size(ycc.y)) {
        throw std::invalid_argument("ycbcr_to_rgb: plane sizes differ");
    }
    auto y = ycc.y.data(), cb = ycc.cb.data(), cr = ycc.cr.data();
    Tensor out(Shape{3, h, w});
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] + (cr[i] - 0.5) / kCrScale;
        const double b = y[i] + (cb[i] - 0.5) / kCbScale;
        const double g = (y[i] - kKr * r - kKb * b) / kKg;
        out[i] = r;
        out[n + i] = g;
        out[2 * n + i] = b;
    }
    return out;
}

ImageTensor ycbcr_to_rgb(const YCbCrImage& ycc) {
    Tensor t = ycbcr_to_rgb_unclamped(ycc);
    for (double& v : t.data()) v = clamp01(v);
    return ImageTensor(std::move(t));
}

ImageTensor stack_ycbcr(const YCbCrImage& ycc) {
    const std::size_t h = ycc.y.height(), w = ycc.y.width(), n = h * w;
    std::vector<double> v;
    v.reserve(3 * n);
    for (const ImageTensor* p : {&ycc.y, &ycc.cb, &ycc.cr}) {
        auto d = p->data();
        v.insert(v.end(), d.begin(), d.end());
    }
    return ImageTensor(Tensor(Shape{3, h, w}, std::move(v)));
}

YCbCrImage split_ycbcr(const ImageTensor& ycc) {
    if (ycc.channels() != 3) throw std::invalid_argument("split_ycbcr: expected 3 channels");
    return {ycc.channel(0), ycc.channel(1), ycc.channel(2)};
}

ImageTensor luminance(const ImageTensor& img) {
    if (img.channels() == 1) return img;
    return rgb_to_ycbcr(img).y;
}

// ---------------------------------------------------------------------------
// Sobel

namespace {

constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

std::size_t clamp_index(long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
}

void sobel_kernel(std::span<const double> in, std::size_t h, std::size_t w, std::span<double> gx,
                  std::span<double> gy) {
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            // Differences are taken before weighting so flat regions give exactly 0.
            const std::size_t r[3] = {clamp_index(static_cast<long>(y) - 1, h) * w, y * w,
                                      clamp_index(static_cast<long>(y) + 1, h) * w};
            const std::size_t c[3] = {clamp_index(static_cast<long>(x) - 1, w), x,
                                      clamp_index(static_cast<long>(x) + 1, w)};
            auto at = [&](int i, int j) { return in[r[i] + c[j]]; };
            gx[y * w + x] = (at(0, 2) - at(0, 0)) + 2.0 * (at(1, 2) - at(1, 0)) + (at(2, 2) - at(2, 0));
            gy[y * w + x] = (at(2, 0) - at(0, 0)) + 2.0 * (at(2, 1) - at(0, 1)) + (at(2, 2) - at(0, 2));
        }
}

}  // namespace

SobelResponse sobel_responses(const ImageTensor& img) {
    require_single_channel(img, "sobel");
    const std::size_t h = img.height(), w = img.width();
    SobelResponse r{Tensor(Shape{1, h, w}), Tensor(Shape{1, h, w})};
    sobel_kernel(img.data(), h, w, r.gx.data(), r.gy.data());
    return r;
}

ImageTensor sobel_gradient(const ImageTensor& img) {
    auto r = sobel_responses(img);
    Tensor out(r.gx.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(r.gx[i]) + std::abs(r.gy[i]);
    return ImageTensor(std::move(out), TensorRole::feature);
}

namespace ag {

Var sobel_l1(const Var& x) {
    if (x.shape().size() != 3 || x.shape()[0] != 1) {
        throw std::invalid_argument("sobel_l1: expected (1,H,W), got " + shape_string(x.shape()));
    }
    const std::size_t h = x.shape()[1], w = x.shape()[2];
    Tensor gx(x.shape()), gy(x.shape()), out(x.shape());
    sobel_kernel(x.value().data(), h, w, gx.data(), gy.data());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(gx[i]) + std::abs(gy[i]);
    return make_result(std::move(out), {x},
                       [h, w, gx = std::move(gx), gy = std::move(gy)](Node& self) {
        auto g = self.parents[0]->grad_buffer().data();
        auto go = self.grad.data();
        auto sign = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const std::size_t i = y * w + xx;
                const double ux = go[i] * sign(gx[i]);
                const double uy = go[i] * sign(gy[i]);
                if (ux == 0.0 && uy == 0.0) continue;
                for (int dy = -1; dy <= 1; ++dy) {
                    const std::size_t yy = clamp_index(static_cast<long>(y) + dy, h);
                    for (int dx = -1; dx <= 1; ++dx) {
                        const std::size_t src = yy * w + clamp_index(static_cast<long>(xx) + dx, w);
                        g[src] += kSobelX[dy + 1][dx + 1] * ux + kSobelY[dy + 1][dx + 1] * uy;
                    }
                }
            }
    });
}

}  // namespace ag

// ---------------------------------------------------------------------------
// Resampling

Downsample2::Downsample2(const Initializer& init, const std::string& name, int channels)
    : conv_(init, name, channels, 2 * channels, 3, 2) {}

ag::Var Downsample2::operator()(const ag::Var& x) const {
    if (x.shape().size() != 3 || x.shape()[1] % 2 || x.shape()[2] % 2) {
        throw std::invalid_argument("downsample2: spatial dims must be even, got " +
                                    shape_string(x.shape()));
    }
    return conv_(x);
}

Upsample2::Upsample2(const Initializer& init, const std::string& name, int channels) {
    if (channels % 2) throw std::invalid_argument("upsample2: channel count must be even");
    conv_ = Conv2d(init, name, channels, channels / 2, 3);
}

ag::Var Upsample2::operator()(const ag::Var& x) const {
    if (x.shape().size() != 3 || x.shape()[0] % 2) {
        throw std::invalid_argument("upsample2: channel count must be even, got " +
                                    shape_string(x.shape()));
    }
    return conv_(ag::upsample_nearest2(x));
}

// ---------------------------------------------------------------------------
// Histograms

std::size_t JointHistogram::total() const {
    std::size_t n = 0;
    for (auto c : counts_) n += c;
    return n;
}

std::vector<std::size_t> JointHistogram::marginal_a() const {
    std::vector<std::size_t> m(bins_, 0);
    for (std::size_t i = 0; i < bins_; ++i)
        for (std::size_t j = 0; j < bins_; ++j) m[i] += count(i, j);
    return m;
}

std::vector<std::size_t> JointHistogram::marginal_b() const {
    std::vector<std::size_t> m(bins_, 0);
    for (std::size_t i = 0; i < bins_; ++i)
        for (std::size_t j = 0; j < bins_; ++j) m[j] += count(i, j);
    return m;
}

std::size_t histogram_bin(double v, std::size_t bins) {
    const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * static_cast<double>(bins));
    return std::min(bins - 1, static_cast<std::size_t>(scaled));
}

std::vector<std::size_t> histogram(const ImageTensor& img, std::size_t bins) {
    if (bins < 2) throw std::invalid_argument("histogram: need at least 2 bins");
    std::vector<std::size_t> h(bins, 0);
    for (double v : img.data()) ++h[histogram_bin(v, bins)];
    return h;
}

JointHistogram joint_histogram(const ImageTensor& a, const ImageTensor& b, std::size_t bins) {
    if (bins < 2) throw std::invalid_argument("joint_histogram: need at least 2 bins");
    if (a.channels() != 1 || b.channels() != 1 || !a.same_size(b)) {
        throw std::invalid_argument("joint_histogram: inputs must be single-channel and equal size");
    }
    JointHistogram jh(bins);
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) ++jh.count(histogram_bin(da[i], bins), histogram_bin(db[i], bins));
    return jh;
}

}  // namespace degfuse
