#include <gtest/gtest.h>

#include "occluscat/core/rng.hpp"
#include "occluscat/metrics/ofd.hpp"

using namespace occluscat;
using namespace occluscat::metrics;

namespace {

// Smoothed random texture in the 0..255 range: rich enough local structure
// for quadratic expansion to lock onto.
std::vector<float> smooth_texture(uint64_t seed, int height, int width) {
    Rng rng(seed);
    std::vector<float> img(static_cast<size_t>(height) * width);
    for (float& v : img) v = static_cast<float>(rng.uniform(0.0, 255.0));
    // Two box-blur passes approximate a Gaussian.
    for (int pass = 0; pass < 2; ++pass) {
        std::vector<float> out(img.size());
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) {
                double acc = 0.0;
                for (int i = -1; i <= 1; ++i)
                    for (int j = -1; j <= 1; ++j) {
                        int rr = (r + i + height) % height;
                        int cc = (c + j + width) % width;
                        acc += img[static_cast<size_t>(rr) * width + cc];
                    }
                out[static_cast<size_t>(r) * width + c] = static_cast<float>(acc / 9.0);
            }
        img = std::move(out);
    }
    return img;
}

std::vector<float> translate_wrap(const std::vector<float>& img, int height, int width, int dh,
                                  int dw) {
    std::vector<float> out(img.size());
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            int sr = ((r - dh) % height + height) % height;
            int sc = ((c - dw) % width + width) % width;
            out[static_cast<size_t>(r) * width + c] = img[static_cast<size_t>(sr) * width + sc];
        }
    return out;
}

}  // namespace

TEST(Farneback, IdenticalFramesGiveNearZeroFlow) {
    std::vector<float> img = smooth_texture(1, 64, 64);
    FlowField f = farneback_flow(img, img, 64, 64);
    float max_mag = 0.0f;
    for (float v : f.values) max_mag = std::max(max_mag, std::abs(v));
    EXPECT_LT(max_mag, 1e-3f);
}

TEST(Farneback, ConstantImagesGiveExactlyZeroFlow) {
    std::vector<float> a(64 * 64, 40.0f), b(64 * 64, 40.0f);
    FlowField f = farneback_flow(a, b, 64, 64);
    for (float v : f.values) EXPECT_EQ(v, 0.0f);
}

TEST(Farneback, RecoversIntegerTranslation) {
    int H = 64, W = 64, margin = 10;
    std::vector<float> img = smooth_texture(2, H, W);
    std::vector<float> moved = translate_wrap(img, H, W, 0, 3);
    FlowField f = farneback_flow(img, moved, H, W);
    double mh = 0.0, mw = 0.0;
    int count = 0;
    for (int r = margin; r < H - margin; ++r)
        for (int c = margin; c < W - margin; ++c) {
            mh += f.at(r, c)[0];
            mw += f.at(r, c)[1];
            ++count;
        }
    mh /= count;
    mw /= count;
    EXPECT_NEAR(mh, 0.0, 0.5);
    EXPECT_NEAR(mw, 3.0, 0.5);
}

TEST(Farneback, HorizontalFlipNegatesHorizontalFlow) {
    int H = 48, W = 48;
    std::vector<float> a = smooth_texture(3, H, W);
    std::vector<float> b = translate_wrap(a, H, W, 1, 2);
    auto flip = [&](const std::vector<float>& img) {
        std::vector<float> out(img.size());
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
                out[static_cast<size_t>(r) * W + c] = img[static_cast<size_t>(r) * W + (W - 1 - c)];
        return out;
    };
    FlowField f = farneback_flow(a, b, H, W);
    FlowField g = farneback_flow(flip(a), flip(b), H, W);
    double worst = 0.0;
    for (int r = 4; r < H - 4; ++r)
        for (int c = 4; c < W - 4; ++c) {
            worst = std::max(worst, std::abs(static_cast<double>(f.at(r, c)[1]) +
                                             g.at(r, W - 1 - c)[1]));
            worst = std::max(worst, std::abs(static_cast<double>(f.at(r, c)[0]) -
                                             g.at(r, W - 1 - c)[0]));
        }
    EXPECT_LT(worst, 1e-3);
}

TEST(Ofd, ZeroWhenPredictionMatchesAndClosedFormWhenStatic) {
    int H = 64, W = 64;
    std::vector<float> ctx = smooth_texture(4, H, W);
    std::vector<std::vector<float>> gt = {translate_wrap(ctx, H, W, 0, 2),
                                          translate_wrap(ctx, H, W, 0, 4)};
    EXPECT_DOUBLE_EQ(ofd(gt, gt, ctx, H, W), 0.0);

    // Static prediction: OFD equals the mean squared magnitude of the
    // ground-truth flows (computed independently here).
    std::vector<std::vector<float>> stat = {ctx, ctx};
    double expected = 0.0;
    const std::vector<float>* prev = &ctx;
    for (const auto& frame : gt) {
        FlowField f = farneback_flow(*prev, frame, H, W);
        double acc = 0.0;
        for (size_t i = 0; i < f.values.size(); i += 2)
            acc += static_cast<double>(f.values[i]) * f.values[i] +
                   static_cast<double>(f.values[i + 1]) * f.values[i + 1];
        expected += acc / (H * W);
        prev = &frame;
    }
    expected /= 2.0;
    double got = ofd(stat, gt, ctx, H, W);
    EXPECT_NEAR(got, expected, 1e-6 * std::max(1.0, expected));

    // Symmetric under swapping prediction and ground truth.
    EXPECT_DOUBLE_EQ(ofd(stat, gt, ctx, H, W), ofd(gt, stat, ctx, H, W));

    EXPECT_THROW(ofd(stat, {gt[0]}, ctx, H, W), ContractError);
}
