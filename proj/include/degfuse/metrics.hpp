// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "degfuse/core_types.hpp"
#include "degfuse/imgproc.hpp"

namespace degfuse {

// All metrics take single-channel images; use luminance() for colour ones.

/// Average gradient: mean over the (H-1)x(W-1) pixels that have a forward
/// neighbour in both directions of sqrt((dx^2 + dy^2) / 2).
double avg_gradient(const ImageTensor& img);
/// Edge intensity: mean Sobel magnitude sqrt(Sx^2 + Sy^2), replicate borders.
double edge_intensity(const ImageTensor& img);
/// Population standard deviation.
double std_dev(const ImageTensor& img);
/// sqrt(RF^2 + CF^2) with RF, CF the RMS of horizontal / vertical first
/// differences (averaged over the number of differences).
double spatial_frequency(const ImageTensor& img);

/// Shannon entropy in bits of the 256-bin histogram.
double entropy_bits(const ImageTensor& img, std::size_t bins = kHistogramBins);
/// Mutual information in bits between two images (256-bin joint histogram).
double mutual_information_pair(const ImageTensor& a, const ImageTensor& b,
                               std::size_t bins = kHistogramBins);
/// MI(fused, ir) + MI(fused, vi).
double mutual_information(const ImageTensor& fused, const ImageTensor& ir, const ImageTensor& vi);

/// Constants of the edge-preservation sigmoids.
struct QabfParams {
    double kappa_g = -10.0;
    double sigma_g = 0.5;
    double kappa_a = -20.0;
    double sigma_a = 0.75;
    /// Exponent on edge strength for the saliency weights.
    double weight_exponent = 1.0;
};

/// Edge-transfer quality in [0,1]. The sigmoid gains are chosen so that a
/// pixel with perfectly preserved strength and orientation scores exactly 1.
double qabf(const ImageTensor& fused, const ImageTensor& ir, const ImageTensor& vi,
            const QabfParams& params = {});

inline constexpr std::array<std::string_view, 6> kMetricNames{"AG", "EI", "SD", "SF", "MI", "Qabf"};

struct MetricValues {
    std::array<double, 6> values{};  // ordered as kMetricNames
};

/// Every metric of a fused image against its sources. Colour inputs are
/// reduced to luminance first.
MetricValues evaluate_metrics(const ImageTensor& fused, const ImageTensor& ir, const ImageTensor& vi);

struct MetricReport {
    struct Row {
        std::string image;
        MetricValues metrics;
    };
    std::vector<Row> rows;

    MetricValues mean() const;
    /// Header, one line per image, then a "mean" line.
    std::string to_csv() const;
    std::string to_json() const;
};

}  // namespace degfuse
