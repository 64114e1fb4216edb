// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "degfuse/degrade.hpp"
#include "degfuse/imgproc.hpp"
#include "degfuse/metrics.hpp"
#include "helpers.hpp"

using namespace degfuse;
using namespace testing;

namespace {

double mean_of(const ImageTensor& img) {
    double s = 0;
    for (double v : img.data()) s += v;
    return s / static_cast<double>(img.data().size());
}

double clipped_fraction(const ImageTensor& img) {
    double n = 0;
    for (double v : img.data()) n += (v >= 1.0) ? 1.0 : 0.0;
    return n / static_cast<double>(img.data().size());
}

double mean_abs_change(const ImageTensor& a, const ImageTensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
    return s / static_cast<double>(a.data().size());
}

}  // namespace

TEST_CASE("severity zero is the identity") {
    auto rgb = textured_image(3, 16, 16, 1);
    auto gray = textured_image(1, 16, 16, 2);
    CHECK(apply_low_light(rgb, 0.0, 5).tensor().values() == rgb.tensor().values());
    CHECK(apply_overexposure(rgb, 0.0, 5).tensor().values() == rgb.tensor().values());
    CHECK(apply_low_contrast(gray, 0.0, 5).tensor().values() == gray.tensor().values());
    CHECK(apply_noise(gray, 0.0, 5).tensor().values() == gray.tensor().values());
}

TEST_CASE("low light darkens") {
    auto out = apply_low_light(ImageTensor::filled(3, 32, 32, 0.5), 1.0, 3);
    CHECK(mean_of(out) < 0.2);
    // Without noise the value is 0.5^2.5 * 0.4; the field only adds zero-mean jitter.
    CHECK(mean_of(out) == doctest::Approx(std::pow(0.5, 2.5) * 0.4).epsilon(0.05));
}

TEST_CASE("overexposure saturates") {
    auto out = apply_overexposure(ImageTensor::filled(3, 8, 8, 0.6), 1.0, 0);
    for (double v : out.data()) CHECK(v == 1.0);
    auto img = random_image(3, 8, 8, 4);
    auto half = apply_overexposure(img, 0.25, 0);
    for (std::size_t i = 0; i < img.data().size(); ++i)
        CHECK(half.data()[i] == doctest::Approx(std::min(1.0, img.data()[i] * 1.5)).epsilon(1e-15));
}

TEST_CASE("low contrast scales the deviation around the mean") {
    auto img = textured_image(1, 32, 32, 5);
    auto out = apply_low_contrast(img, 1.0, 0);
    CHECK(std::abs(std_dev(out) / std_dev(img) - 0.2) <= 1e-9);
    CHECK(mean_of(out) == doctest::Approx(mean_of(img)).epsilon(1e-12));
}

TEST_CASE("noise level") {
    auto field = noise_field({1, 256, 256}, 0.1, 7);
    double s = 0, s2 = 0;
    for (double v : field.data()) {
        s += v;
        s2 += v * v;
    }
    const double n = static_cast<double>(field.size());
    const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
    CHECK(std::abs(sd - 0.1) <= 0.01);
    const auto silent = noise_field({1, 4, 4}, 0.0, 7);
    for (double v : silent.data()) CHECK(v == 0.0);

    // Mid-grey rarely clips at sigma 0.1, so the observed spread stays close.
    auto out = apply_noise(ImageTensor::filled(1, 256, 256, 0.5), 1.0, 7);
    CHECK(std::abs(std_dev(out) - 0.1) <= 0.01);
}

TEST_CASE("severity sweeps are monotone") {
    auto rgb = textured_image(3, 32, 32, 8);
    auto gray = textured_image(1, 32, 32, 9);
    double prev_y = mean_of(luminance(rgb)), prev_sd = std_dev(gray), prev_clip = clipped_fraction(rgb), prev_noise = 0;
    for (int k = 1; k <= 10; ++k) {
        const double s = k / 10.0;
        const double y = mean_of(luminance(apply_low_light(rgb, s, 11)));
        const double sd = std_dev(apply_low_contrast(gray, s, 11));
        const double clip = clipped_fraction(apply_overexposure(rgb, s, 11));
        const double change = mean_abs_change(apply_noise(gray, s, 11), gray);
        INFO("severity " << s);
        CHECK(y < prev_y);
        CHECK(sd < prev_sd);
        CHECK(clip >= prev_clip);
        CHECK(change >= prev_noise);
        prev_y = y;
        prev_sd = sd;
        prev_clip = clip;
        prev_noise = change;
    }
}

TEST_CASE("same seed, same output") {
    auto img = textured_image(3, 16, 16, 1);
    CHECK(apply_low_light(img, 0.7, 3).tensor().values() == apply_low_light(img, 0.7, 3).tensor().values());
    CHECK(apply_noise(luminance(img), 0.7, 3).tensor().values() == apply_noise(luminance(img), 0.7, 3).tensor().values());
    CHECK(apply_noise(luminance(img), 0.7, 3).tensor().values() != apply_noise(luminance(img), 0.7, 4).tensor().values());
}

TEST_CASE("outputs stay in range") {
    auto img = random_image(3, 16, 16, 2);
    for (double s : {0.3, 1.0}) {
        for (const auto& out : {apply_low_light(img, s, 1), apply_overexposure(img, s, 1),
                                apply_low_contrast(img, s, 1), apply_noise(img, s, 1)}) {
            for (double v : out.data()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("severity validation") {
    auto img = ImageTensor::filled(1, 4, 4, 0.5);
    CHECK_THROWS_AS(apply_noise(img, -0.1, 0), std::invalid_argument);
    CHECK_THROWS_AS(apply_low_light(img, 1.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(validate(DegradeSpec{IrDegradation::noise, ViDegradation::none, std::nan(""), 0}),
                    std::invalid_argument);
    CHECK_NOTHROW(validate(DegradeSpec{IrDegradation::noise, ViDegradation::none, 1.0, 0}));
}

TEST_CASE("make_sample") {
    auto ir = textured_image(1, 16, 16, 1), vi = textured_image(3, 16, 16, 2);
    DegradeSpec spec{IrDegradation::noise, ViDegradation::low_light, 0.8, 42};
    auto s = make_sample(ir, vi, spec);
    CHECK(s.prompt_ir == "IVIF. The infrared image suffers from noise.");
    CHECK(s.prompt_vi == "IVIF. The visible image suffers from low light.");
    CHECK(s.ir_reference.tensor().values() == ir.tensor().values());
    CHECK(s.vi_reference.tensor().values() == vi.tensor().values());
    CHECK(s.ir_degraded.tensor().values() != ir.tensor().values());
    CHECK(mean_of(s.vi_degraded) < mean_of(vi));
    CHECK(make_sample(ir, vi, spec).ir_degraded.tensor().values() == s.ir_degraded.tensor().values());

    auto clean = make_sample(ir, vi, DegradeSpec{});
    CHECK(clean.ir_degraded.tensor().values() == ir.tensor().values());
    CHECK(clean.prompt_vi == "IVIF. The visible image suffers from no degradation.");
    CHECK_THROWS_AS(make_sample(vi, vi, spec), std::invalid_argument);
}
