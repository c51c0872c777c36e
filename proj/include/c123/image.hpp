#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace c123 {

// H x W x 3 float image, row-major, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // size H*W*3

    Image() = default;
    Image(int h, int w, float fill = 1.0f)
        : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, fill) {}

    float* px(int y, int x) { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
    const float* px(int y, int x) const {
        return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
    }
};

// 8-bit RGB PNG, fixed encoder settings so identical pixels give identical
// bytes. Values are clamped to [0,1] and rounded to the nearest of 255 levels.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// mean |a-b| and max |a-b| over all channels
double image_mean_abs_diff(const Image& a, const Image& b);
double image_max_abs_diff(const Image& a, const Image& b);

}  // namespace c123
