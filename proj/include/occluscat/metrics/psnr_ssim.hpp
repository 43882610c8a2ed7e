#pragma once

#include <cmath>
#include <vector>

#include "occluscat/core/common.hpp"

namespace occluscat::metrics {

constexpr double kPsnrCap = 99.0;  // sentinel for zero-MSE pairs

// Peak signal-to-noise ratio over all channels of planar (C, H, W) images.
inline double psnr(const float* a, const float* b, int channels, int height, int width,
                   double peak = 1.0) {
    check(channels > 0 && height > 0 && width > 0, "psnr: empty image");
    int64_t n = static_cast<int64_t>(channels) * height * width;
    double mse = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

// Mean local SSIM over sliding 7x7 uniform windows (valid placements only),
// computed on the per-channel average. Constants follow the standard choice
// for unit dynamic range.
inline double ssim(const float* a, const float* b, int channels, int height, int width,
                   int window = 7) {
    check(height >= window && width >= window, "ssim: image smaller than window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    int64_t hw = static_cast<int64_t>(height) * width;
    std::vector<double> ga(hw, 0.0), gb(hw, 0.0);
    for (int ch = 0; ch < channels; ++ch)
        for (int64_t i = 0; i < hw; ++i) {
            ga[static_cast<size_t>(i)] += a[ch * hw + i];
            gb[static_cast<size_t>(i)] += b[ch * hw + i];
        }
    for (int64_t i = 0; i < hw; ++i) {
        ga[static_cast<size_t>(i)] /= channels;
        gb[static_cast<size_t>(i)] /= channels;
    }
    const double inv_n = 1.0 / (window * window);
    double total = 0.0;
    int64_t windows = 0;
    for (int r = 0; r + window <= height; ++r) {
        for (int c = 0; c + window <= width; ++c) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < window; ++i)
                for (int j = 0; j < window; ++j) {
                    double va = ga[static_cast<size_t>((r + i)) * width + (c + j)];
                    double vb = gb[static_cast<size_t>((r + i)) * width + (c + j)];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            double mu_a = sa * inv_n, mu_b = sb * inv_n;
            double var_a = saa * inv_n - mu_a * mu_a;
            double var_b = sbb * inv_n - mu_b * mu_b;
            double cov = sab * inv_n - mu_a * mu_b;
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

// Luminance conversion from planar RGB, scaled to [0,255] so the flow
// estimator operates in the standard 8-bit numeric regime.
inline std::vector<float> rgb_to_gray255(const float* rgb, int height, int width) {
    int64_t hw = static_cast<int64_t>(height) * width;
    std::vector<float> gray(hw);
    for (int64_t i = 0; i < hw; ++i)
        gray[static_cast<size_t>(i)] =
            255.0f * (0.299f * rgb[i] + 0.587f * rgb[hw + i] + 0.114f * rgb[2 * hw + i]);
    return gray;
}

}  // namespace occluscat::metrics
