#pragma once

#include "c123/image.hpp"

namespace c123 {

struct MetricResult {
    double psnr = 0;  // dB, capped at 99 for identical images
    double ssim = 0;  // in [-1, 1]
};

// 10*log10(1/MSE) over all channels; zero MSE returns the 99 dB cap.
double psnr(const Image& a, const Image& b);

// Single-scale SSIM: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03,
// dynamic range 1, averaged over valid windows and channels.
double ssim(const Image& a, const Image& b);

MetricResult compare_images(const Image& a, const Image& b);

}  // namespace c123
