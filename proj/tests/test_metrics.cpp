#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "c123/errors.hpp"
#include "c123/metrics.hpp"
#include "c123/rng.hpp"

using namespace c123;

namespace {
Image random_image(int res, uint64_t seed) {
    Image img(res, res);
    Rng rng(seed);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    return img;
}

Image hflip(const Image& in) {
    Image out(in.height, in.width);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
            for (int c = 0; c < 3; ++c) out.px(y, x)[c] = in.px(y, in.width - 1 - x)[c];
    return out;
}
}  // namespace

TEST_CASE("psnr: cap, arithmetic, symmetry") {
    Image a = random_image(16, 1);
    CHECK(psnr(a, a) == 99.0);

    // uniform difference of 0.1 -> MSE 0.01 -> 20 dB (up to f32 pixel rounding)
    Image lo(16, 16, 0.4f), hi(16, 16, 0.5f);
    CHECK(psnr(lo, hi) == doctest::Approx(20.0).epsilon(1e-6));

    Image b = random_image(16, 2);
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-12));

    CHECK_THROWS_AS(psnr(a, Image(8, 8)), ShapeError);
}

TEST_CASE("psnr decreases monotonically with noise amplitude") {
    Image base = random_image(24, 3);
    Rng rng(77);
    std::vector<float> noise(base.pixels.size());
    for (auto& v : noise) v = rng.normalf();
    double prev = 1e9;
    for (double amp : {0.01, 0.03, 0.1, 0.3}) {
        Image noisy = base;
        for (size_t i = 0; i < noisy.pixels.size(); ++i) {
            noisy.pixels[i] = std::clamp(noisy.pixels[i] + static_cast<float>(amp) * noise[i], 0.0f, 1.0f);
        }
        double p = psnr(base, noisy);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim: identity, closed form on constants, symmetry") {
    Image a = random_image(16, 4);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

    // constant vs constant+0.5: contrast and structure terms are 1, so the
    // score is exactly the luminance term (2*mu1*mu2 + C1)/(mu1^2+mu2^2+C1)
    double mu1 = 0.25, mu2 = 0.75;
    Image c1(16, 16, static_cast<float>(mu1)), c2(16, 16, static_cast<float>(mu2));
    double c1const = 0.01 * 0.01;
    double lum = (2 * mu1 * mu2 + c1const) / (mu1 * mu1 + mu2 * mu2 + c1const);
    CHECK(ssim(c1, c2) == doctest::Approx(lum).epsilon(1e-6));

    Image b = random_image(16, 5);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));

    CHECK_THROWS_AS(ssim(Image(8, 8), Image(8, 8)), ParamError);
}

TEST_CASE("metrics invariant to simultaneous horizontal flips") {
    Image a = random_image(20, 6);
    Image b = random_image(20, 7);
    CHECK(psnr(a, b) == doctest::Approx(psnr(hflip(a), hflip(b))).epsilon(1e-12));
    CHECK(ssim(a, b) == doctest::Approx(ssim(hflip(a), hflip(b))).epsilon(1e-9));
}
