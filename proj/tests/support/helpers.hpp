// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "degfuse/autograd.hpp"
#include "degfuse/core_types.hpp"
#include "degfuse/layers.hpp"

namespace testing {

using namespace degfuse;

inline std::vector<double> uniform_values(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    return Tensor(shape, uniform_values(shape_numel(shape), seed, lo, hi));
}

inline ImageTensor random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    return ImageTensor(random_tensor(Shape{c, h, w}, seed, 0.0, 1.0));
}

inline ImageTensor image_from(std::size_t h, std::size_t w, std::vector<double> values) {
    return ImageTensor(Tensor(Shape{1, h, w}, std::move(values)));
}

/// Smooth random image: a few low-frequency sinusoids, so gradients are
/// dense but not noise-like.
inline ImageTensor textured_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    auto phase = uniform_values(4 * c, seed, 0.0, 6.283185307179586);
    Tensor t(Shape{c, h, w});
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double v = 0.5 + 0.2 * std::sin(0.45 * static_cast<double>(x) + phase[4 * k]) +
                                 0.2 * std::cos(0.31 * static_cast<double>(y) + phase[4 * k + 1]) +
                                 0.08 * std::sin(0.9 * static_cast<double>(x + y) + phase[4 * k + 2]);
                t.at(k, y, x) = std::clamp(v, 0.0, 1.0);
            }
    return ImageTensor(t);
}

inline PromptEmbedding random_prompt(int dim, std::uint64_t seed) {
    return {uniform_values(static_cast<std::size_t>(dim), seed, -0.5, 0.5), "random"};
}

/// Small network used wherever a whole forward pass has to be cheap.
inline NetworkConfig toy_network(std::uint64_t seed = 7) {
    NetworkConfig cfg;
    cfg.base_channels = 4;
    cfg.attention_heads = 2;
    cfg.prompt_dim = 16;
    cfg.seed = seed;
    return cfg;
}

/// Overwrites a parameter with N(0, sigma) draws.
inline void jitter(const Parameter& p, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    ag::Var v = p.var;
    for (double& x : v.mutable_value().data()) x = n(rng);
}

inline void set_param(const Parameter& p, const std::vector<double>& values) {
    ag::Var v = p.var;
    std::copy(values.begin(), values.end(), v.mutable_value().data().begin());
}

inline void fill_param(const Parameter& p, double value) {
    ag::Var v = p.var;
    v.mutable_value().fill(value);
}

/// Overwrites every parameter with U(-a, a) draws; used to give oracle
/// comparisons non-trivial weights everywhere (including zero-init layers).
inline void randomize(const ParamList& params, double a, std::uint64_t seed) {
    std::uint64_t s = seed;
    for (const auto& p : params) {
        ag::Var v = p.var;
        auto vals = uniform_values(v.size(), ++s * 0x9e3779b97f4a7c15ULL, -a, a);
        std::copy(vals.begin(), vals.end(), v.mutable_value().data().begin());
    }
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "degfuse_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct GradCheckResult {
    std::size_t checked = 0;
    std::size_t failures = 0;
    double worst = 0.0;
    std::string worst_param;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
/// by construction (e.g. a bias feeding a normalization) from turning
/// finite-difference roundoff into a relative error of 1.
inline constexpr double kGradFloor = 1e-6;

inline double relative_error(double analytic, double numeric, double floor = kGradFloor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

/// Compares backprop against central differences for `count` parameter
/// entries. A parameter tensor is drawn uniformly, then an element inside
/// it. `loss` rebuilds the graph from the current parameter values.
inline GradCheckResult gradient_check(const ParamList& params, const std::function<ag::Var()>& loss,
                                      std::size_t count, std::uint64_t seed, double h = 1e-5,
                                      double tol = 1e-3, double floor = kGradFloor) {
    for (const auto& p : params) {
        ag::Var v = p.var;
        v.zero_grad();
    }
    ag::backward(loss());
    std::vector<Tensor> grads;
    for (const auto& p : params) grads.push_back(p.var.grad());

    std::mt19937_64 rng(seed);
    GradCheckResult r;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t pi = std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
        ag::Var v = params[pi].var;
        const std::size_t e = std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng);
        double& x = v.mutable_value()[e];
        const double orig = x;
        x = orig + h;
        const double up = loss().value()[0];
        x = orig - h;
        const double down = loss().value()[0];
        x = orig;
        const double err = relative_error(grads[pi][e], (up - down) / (2 * h), floor);
        if (err > r.worst) {
            r.worst = err;
            r.worst_param = params[pi].name + "[" + std::to_string(e) + "] analytic " +
                            format_double(grads[pi][e]) + " numeric " + format_double((up - down) / (2 * h));
        }
        if (err > tol) ++r.failures;
        ++r.checked;
    }
    return r;
}

}  // namespace testing
