// SPDX-License-Identifier: Apache-2.0
#include "degfuse/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace degfuse {

namespace {

void require_gray(const ImageTensor& img, const char* what) {
    if (img.channels() != 1) {
        throw std::invalid_argument(std::string(what) + ": expected a single-channel image");
    }
}

void require_min_size(const ImageTensor& img, const char* what) {
    require_gray(img, what);
    if (img.height() < 2 || img.width() < 2) {
        throw std::invalid_argument(std::string(what) + ": image must be at least 2x2");
    }
}

void require_triple(const ImageTensor& f, const ImageTensor& a, const ImageTensor& b,
                    const char* what) {
    require_gray(f, what);
    require_gray(a, what);
    require_gray(b, what);
    if (!f.same_size(a) || !f.same_size(b)) {
        throw std::invalid_argument(std::string(what) + ": images differ in size");
    }
}

}  // namespace

double avg_gradient(const ImageTensor& img) {
    require_min_size(img, "avg_gradient");
    const std::size_t h = img.height(), w = img.width();
    auto p = img.data();
    double s = 0.0;
    for (std::size_t y = 0; y + 1 < h; ++y)
        for (std::size_t x = 0; x + 1 < w; ++x) {
            const double dx = p[y * w + x + 1] - p[y * w + x];
            const double dy = p[(y + 1) * w + x] - p[y * w + x];
            s += std::sqrt((dx * dx + dy * dy) / 2.0);
        }
    return s / static_cast<double>((h - 1) * (w - 1));
}

double edge_intensity(const ImageTensor& img) {
    require_gray(img, "edge_intensity");
    auto r = sobel_responses(img);
    double s = 0.0;
    for (std::size_t i = 0; i < r.gx.size(); ++i) s += std::hypot(r.gx[i], r.gy[i]);
    return s / static_cast<double>(r.gx.size());
}

double std_dev(const ImageTensor& img) {
    require_gray(img, "std_dev");
    auto p = img.data();
    // Shifted by the first pixel so a constant image gives exactly 0.
    const double ref = p[0];
    double mean = 0.0;
    for (double v : p) mean += v - ref;
    mean /= static_cast<double>(p.size());
    double ss = 0.0;
    for (double v : p) ss += (v - ref - mean) * (v - ref - mean);
    return std::sqrt(ss / static_cast<double>(p.size()));
}

double spatial_frequency(const ImageTensor& img) {
    require_min_size(img, "spatial_frequency");
    const std::size_t h = img.height(), w = img.width();
    auto p = img.data();
    double rf = 0.0, cf = 0.0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x + 1 < w; ++x) {
            const double d = p[y * w + x + 1] - p[y * w + x];
            rf += d * d;
        }
    for (std::size_t y = 0; y + 1 < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double d = p[(y + 1) * w + x] - p[y * w + x];
            cf += d * d;
        }
    rf /= static_cast<double>(h * (w - 1));
    cf /= static_cast<double>((h - 1) * w);
    return std::sqrt(rf + cf);
}

double entropy_bits(const ImageTensor& img, std::size_t bins) {
    require_gray(img, "entropy");
    auto hist = histogram(img, bins);
    const double n = static_cast<double>(img.pixels());
    double e = 0.0;
    for (auto c : hist) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        e -= p * std::log2(p);
    }
    return e;
}

double mutual_information_pair(const ImageTensor& a, const ImageTensor& b, std::size_t bins) {
    JointHistogram jh = joint_histogram(a, b, bins);
    const auto ma = jh.marginal_a();
    const auto mb = jh.marginal_b();
    const double n = static_cast<double>(jh.total());
    double mi = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
        if (ma[i] == 0) continue;
        for (std::size_t j = 0; j < bins; ++j) {
            const auto c = jh.count(i, j);
            if (c == 0) continue;
            // p_ab / (p_a p_b) = c n / (m_a m_b)
            mi += (static_cast<double>(c) / n) *
                  std::log2(static_cast<double>(c) * n /
                            (static_cast<double>(ma[i]) * static_cast<double>(mb[j])));
        }
    }
    return std::max(0.0, mi);
}

double mutual_information(const ImageTensor& fused, const ImageTensor& ir, const ImageTensor& vi) {
    require_triple(fused, ir, vi, "mutual_information");
    return mutual_information_pair(fused, ir) + mutual_information_pair(fused, vi);
}

namespace {

struct EdgeField {
    std::vector<double> strength;
    std::vector<double> angle;
};

EdgeField edge_field(const ImageTensor& img) {
    auto r = sobel_responses(img);
    EdgeField e{std::vector<double>(r.gx.size()), std::vector<double>(r.gx.size())};
    for (std::size_t i = 0; i < r.gx.size(); ++i) {
        const double sx = r.gx[i], sy = r.gy[i];
        e.strength[i] = std::hypot(sx, sy);
        if (sx != 0.0) {
            e.angle[i] = std::atan(sy / sx);
        } else {
            e.angle[i] = sy != 0.0 ? std::numbers::pi / 2 : 0.0;
        }
    }
    return e;
}

// Preservation of source edges `s` in the fused edges `f` at every pixel.
std::vector<double> preservation(const EdgeField& s, const EdgeField& f, const QabfParams& q) {
    const double gamma_g = 1.0 + std::exp(q.kappa_g * (1.0 - q.sigma_g));
    const double gamma_a = 1.0 + std::exp(q.kappa_a * (1.0 - q.sigma_a));
    std::vector<double> out(s.strength.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double gs = s.strength[i], gf = f.strength[i];
        double g = 1.0;
        if (gs > gf) {
            g = gf / gs;
        } else if (gs < gf) {
            g = gs / gf;
        }
        const double a = 1.0 - std::abs(s.angle[i] - f.angle[i]) / (std::numbers::pi / 2);
        const double qg = gamma_g / (1.0 + std::exp(q.kappa_g * (g - q.sigma_g)));
        const double qa = gamma_a / (1.0 + std::exp(q.kappa_a * (a - q.sigma_a)));
        out[i] = qg * qa;
    }
    return out;
}

}  // namespace

double qabf(const ImageTensor& fused, const ImageTensor& ir, const ImageTensor& vi,
            const QabfParams& params) {
    require_triple(fused, ir, vi, "qabf");
    const EdgeField ef = edge_field(fused), ea = edge_field(ir), eb = edge_field(vi);
    const auto qa = preservation(ea, ef, params);
    const auto qb = preservation(eb, ef, params);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < qa.size(); ++i) {
        const double wa = std::pow(ea.strength[i], params.weight_exponent);
        const double wb = std::pow(eb.strength[i], params.weight_exponent);
        num += qa[i] * wa + qb[i] * wb;
        den += wa + wb;
    }
    if (den <= 0.0) return 0.0;
    return std::clamp(num / den, 0.0, 1.0);
}

MetricValues evaluate_metrics(const ImageTensor& fused, const ImageTensor& ir, const ImageTensor& vi) {
    const ImageTensor f = luminance(fused), a = luminance(ir), b = luminance(vi);
    MetricValues m;
    m.values = {avg_gradient(f), edge_intensity(f), std_dev(f), spatial_frequency(f),
                mutual_information(f, a, b), qabf(f, a, b)};
    return m;
}

MetricValues MetricReport::mean() const {
    MetricValues m;
    if (rows.empty()) return m;
    for (const auto& r : rows)
        for (std::size_t k = 0; k < m.values.size(); ++k) m.values[k] += r.metrics.values[k];
    for (double& v : m.values) v /= static_cast<double>(rows.size());
    return m;
}

std::string MetricReport::to_csv() const {
    std::ostringstream out;
    out << "image";
    for (auto n : kMetricNames) out << ',' << n;
    out << '\n';
    auto line = [&](const std::string& name, const MetricValues& m) {
        out << name;
        for (double v : m.values) out << ',' << format_double(v);
        out << '\n';
    };
    for (const auto& r : rows) line(r.image, r.metrics);
    line("mean", mean());
    return out.str();
}

std::string MetricReport::to_json() const {
    auto as_object = [](const MetricValues& m) {
        nlohmann::ordered_json o;
        for (std::size_t k = 0; k < kMetricNames.size(); ++k) o[std::string(kMetricNames[k])] = m.values[k];
        return o;
    };
    nlohmann::ordered_json j;
    j["images"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json o;
        o["image"] = r.image;
        o["metrics"] = as_object(r.metrics);
        j["images"].push_back(std::move(o));
    }
    j["mean"] = as_object(mean());
    return j.dump(2) + "\n";
}

}  // namespace degfuse
