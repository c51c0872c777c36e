#include "c123/metrics.hpp"

#include <array>
#include <cmath>

#include "c123/errors.hpp"

namespace c123 {

namespace {
constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

std::array<double, kWin * kWin> gaussian_window() {
    std::array<double, kWin * kWin> w{};
    double sum = 0;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            double dy = i - kWin / 2, dx = j - kWin / 2;
            w[static_cast<size_t>(i * kWin + j)] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
            sum += w[static_cast<size_t>(i * kWin + j)];
        }
    for (auto& v : w) v /= sum;
    return w;
}

void check_same(const Image& a, const Image& b, const char* op) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(op) + ": image sizes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width) + ")");
}
}  // namespace

double psnr(const Image& a, const Image& b) {
    check_same(a, b, "psnr");
    double mse = 0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.pixels.size());
    if (mse <= 0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
    check_same(a, b, "ssim");
    if (a.height < kWin || a.width < kWin)
        throw ParamError("ssim: image smaller than the 11x11 window");
    static const auto win = gaussian_window();
    const double c1 = kK1 * kK1;  // dynamic range 1
    const double c2 = kK2 * kK2;

    double total = 0;
    int64_t count = 0;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y + kWin <= a.height; ++y) {
            for (int x = 0; x + kWin <= a.width; ++x) {
                double mu1 = 0, mu2 = 0, s11 = 0, s22 = 0, s12 = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        double w = win[static_cast<size_t>(i * kWin + j)];
                        double v1 = a.px(y + i, x + j)[c];
                        double v2 = b.px(y + i, x + j)[c];
                        mu1 += w * v1;
                        mu2 += w * v2;
                        s11 += w * v1 * v1;
                        s22 += w * v2 * v2;
                        s12 += w * v1 * v2;
                    }
                double var1 = s11 - mu1 * mu1;
                double var2 = s22 - mu2 * mu2;
                double cov = s12 - mu1 * mu2;
                double num = (2 * mu1 * mu2 + c1) * (2 * cov + c2);
                double den = (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

MetricResult compare_images(const Image& a, const Image& b) { return {psnr(a, b), ssim(a, b)}; }

}  // namespace c123
