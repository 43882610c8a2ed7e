#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "occluscat/core/common.hpp"

namespace occluscat::metrics {

struct FlowField {
    int height = 0, width = 0;
    std::vector<float> values;  // (H, W, 2): (dh, dw) in pixels

    const float* at(int r, int c) const {
        return values.data() + (static_cast<int64_t>(r) * width + c) * 2;
    }
    float* at(int r, int c) {
        return values.data() + (static_cast<int64_t>(r) * width + c) * 2;
    }
    void validate_finite() const {
        for (float v : values) check(std::isfinite(v), "FlowField: non-finite value");
    }
};

struct FarnebackParams {
    double pyr_scale = 0.5;
    int levels = 3;
    int winsize = 15;
    int iterations = 3;
    int poly_n = 5;
    double poly_sigma = 1.2;

    nlohmann::json to_json() const {
        return nlohmann::json{{"pyr_scale", pyr_scale}, {"levels", levels},
                              {"winsize", winsize},    {"iterations", iterations},
                              {"poly_n", poly_n},      {"poly_sigma", poly_sigma}};
    }
};

namespace fb_detail {

struct Image {
    int height = 0, width = 0;
    std::vector<float> v;
    float at(int r, int c) const {
        r = std::min(std::max(r, 0), height - 1);  // replicate borders
        c = std::min(std::max(c, 0), width - 1);
        return v[static_cast<size_t>(r) * width + c];
    }
};

inline Image gaussian_blur(const Image& img, double sigma) {
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<size_t>(i + radius)];
    }
    for (double& x : k) x /= sum;
    Image tmp{img.height, img.width, std::vector<float>(img.v.size())};
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[static_cast<size_t>(i + radius)] * img.at(r, c + i);
            tmp.v[static_cast<size_t>(r) * img.width + c] = static_cast<float>(acc);
        }
    Image out{img.height, img.width, std::vector<float>(img.v.size())};
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[static_cast<size_t>(i + radius)] * tmp.at(r + i, c);
            out.v[static_cast<size_t>(r) * img.width + c] = static_cast<float>(acc);
        }
    return out;
}

inline Image resize_bilinear(const Image& img, int oh, int ow) {
    Image out{oh, ow, std::vector<float>(static_cast<size_t>(oh) * ow)};
    double sr = static_cast<double>(img.height) / oh;
    double sc = static_cast<double>(img.width) / ow;
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
            double fr = (r + 0.5) * sr - 0.5;
            double fc = (c + 0.5) * sc - 0.5;
            int r0 = static_cast<int>(std::floor(fr)), c0 = static_cast<int>(std::floor(fc));
            double ar = fr - r0, ac = fc - c0;
            double v = (1 - ar) * (1 - ac) * img.at(r0, c0) +
                       (1 - ar) * ac * img.at(r0, c0 + 1) +
                       ar * (1 - ac) * img.at(r0 + 1, c0) + ar * ac * img.at(r0 + 1, c0 + 1);
            out.v[static_cast<size_t>(r) * ow + c] = static_cast<float>(v);
        }
    return out;
}

// Per-pixel quadratic expansion f(x) ~ c + b'x + x'Ax fit with Gaussian
// applicability over a (2n+1)^2 window; solved via separable moment
// correlations and a precomputed inverse Gram matrix.
struct PolyExpansion {
    int height = 0, width = 0;
    // Per pixel: b_r, b_c, a_rr, a_cc, a_rc (A symmetric).
    std::vector<float> coef;  // (H, W, 5)

    const float* at(int r, int c) const {
        return coef.data() + (static_cast<int64_t>(r) * width + c) * 5;
    }
};

inline void invert6(double g[6][6]) {
    // Gauss-Jordan with partial pivoting on the small Gram matrix.
    double inv[6][6] = {};
    for (int i = 0; i < 6; ++i) inv[i][i] = 1.0;
    for (int col = 0; col < 6; ++col) {
        int piv = col;
        for (int r = col + 1; r < 6; ++r)
            if (std::abs(g[r][col]) > std::abs(g[piv][col])) piv = r;
        check(std::abs(g[piv][col]) > 1e-12, "farneback: singular Gram matrix");
        std::swap(g[col], g[piv]);
        std::swap(inv[col], inv[piv]);
        double d = g[col][col];
        for (int j = 0; j < 6; ++j) {
            g[col][j] /= d;
            inv[col][j] /= d;
        }
        for (int r = 0; r < 6; ++r) {
            if (r == col) continue;
            double f = g[r][col];
            for (int j = 0; j < 6; ++j) {
                g[r][j] -= f * g[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) g[i][j] = inv[i][j];
}

inline PolyExpansion poly_expansion(const Image& img, int n, double sigma) {
    // 1D applicability kernels g, i*g, i^2*g.
    std::vector<double> g(static_cast<size_t>(2 * n + 1));
    double sum = 0.0;
    for (int i = -n; i <= n; ++i) {
        g[static_cast<size_t>(i + n)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += g[static_cast<size_t>(i + n)];
    }
    for (double& x : g) x /= sum;

    // Gram matrix of the basis (1, r, c, r^2, c^2, rc) under w = g(r)g(c).
    double s2 = 0.0, s4 = 0.0;
    for (int i = -n; i <= n; ++i) {
        s2 += g[static_cast<size_t>(i + n)] * i * i;
        s4 += g[static_cast<size_t>(i + n)] * i * i * i * i;
    }
    double ginv[6][6] = {};
    {
        double gm[6][6] = {};
        gm[0][0] = 1.0;
        gm[1][1] = s2;
        gm[2][2] = s2;
        gm[3][3] = s4;
        gm[4][4] = s4;
        gm[5][5] = s2 * s2;
        gm[0][3] = gm[3][0] = s2;
        gm[0][4] = gm[4][0] = s2;
        gm[3][4] = gm[4][3] = s2 * s2;
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) ginv[i][j] = gm[i][j];
        invert6(ginv);
    }

    const int H = img.height, W = img.width;
    // Horizontal pass: moments along c with kernels (g, cg, c^2 g).
    std::vector<double> row0(static_cast<size_t>(H) * W), row1(row0.size()), row2(row0.size());
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double m0 = 0, m1 = 0, m2 = 0;
            for (int i = -n; i <= n; ++i) {
                double w = g[static_cast<size_t>(i + n)];
                double f = img.at(r, c + i);
                m0 += w * f;
                m1 += w * i * f;
                m2 += w * i * i * f;
            }
            size_t k = static_cast<size_t>(r) * W + c;
            row0[k] = m0;
            row1[k] = m1;
            row2[k] = m2;
        }

    PolyExpansion pe;
    pe.height = H;
    pe.width = W;
    pe.coef.resize(static_cast<size_t>(H) * W * 5);
    auto sample = [&](const std::vector<double>& buf, int r, int c) {
        r = std::min(std::max(r, 0), H - 1);
        return buf[static_cast<size_t>(r) * W + c];
    };
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            // Vertical pass combines row moments into the six 2D moments.
            double m00 = 0, m10 = 0, m01 = 0, m20 = 0, m02 = 0, m11 = 0;
            for (int i = -n; i <= n; ++i) {
                double w = g[static_cast<size_t>(i + n)];
                double f0 = sample(row0, r + i, c);
                double f1 = sample(row1, r + i, c);
                double f2 = sample(row2, r + i, c);
                m00 += w * f0;
                m01 += w * f1;
                m02 += w * f2;
                m10 += w * i * f0;
                m11 += w * i * f1;
                m20 += w * i * i * f0;
            }
            double m[6] = {m00, m10, m01, m20, m02, m11};
            double coef[6];
            for (int i = 0; i < 6; ++i) {
                coef[i] = 0.0;
                for (int j = 0; j < 6; ++j) coef[i] += ginv[i][j] * m[j];
            }
            float* out = pe.coef.data() + (static_cast<int64_t>(r) * W + c) * 5;
            out[0] = static_cast<float>(coef[1]);  // b_r
            out[1] = static_cast<float>(coef[2]);  // b_c
            out[2] = static_cast<float>(coef[3]);  // a_rr
            out[3] = static_cast<float>(coef[4]);  // a_cc
            out[4] = static_cast<float>(coef[5] * 0.5);  // a_rc
        }
    return pe;
}

// One displacement refinement: with expansions of both frames and a prior
// flow, accumulate the normal equations over a winsize box and solve per
// pixel (epsilon-regularized, so constant inputs give exactly zero flow).
inline void update_flow(const PolyExpansion& p1, const PolyExpansion& p2, FlowField& flow,
                        int winsize) {
    const int H = p1.height, W = p1.width;
    std::vector<double> m(static_cast<size_t>(H) * W * 5);  // g11,g12,g22,h1,h2
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const float* f = flow.at(r, c);
            double dr = f[0], dc = f[1];
            int r2 = std::min(std::max(static_cast<int>(std::lround(r + dr)), 0), H - 1);
            int c2 = std::min(std::max(static_cast<int>(std::lround(c + dc)), 0), W - 1);
            const float* q1 = p1.at(r, c);
            const float* q2 = p2.at(r2, c2);
            double a_rr = 0.5 * (q1[2] + q2[2]);
            double a_cc = 0.5 * (q1[3] + q2[3]);
            double a_rc = 0.5 * (q1[4] + q2[4]);
            double db_r = -0.5 * (q2[0] - q1[0]) + a_rr * dr + a_rc * dc;
            double db_c = -0.5 * (q2[1] - q1[1]) + a_rc * dr + a_cc * dc;
            size_t k = (static_cast<size_t>(r) * W + c) * 5;
            m[k + 0] = a_rr * a_rr + a_rc * a_rc;
            m[k + 1] = a_rr * a_rc + a_rc * a_cc;
            m[k + 2] = a_rc * a_rc + a_cc * a_cc;
            m[k + 3] = a_rr * db_r + a_rc * db_c;
            m[k + 4] = a_rc * db_r + a_cc * db_c;
        }
    }
    // Box-average the normal equations over the window, then solve 2x2.
    int radius = winsize / 2;
    std::vector<double> blurred(m.size());
    std::vector<double> tmp(m.size());
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            for (int ch = 0; ch < 5; ++ch) {
                double acc = 0.0;
                int cnt = 0;
                for (int j = -radius; j <= radius; ++j) {
                    int cc = std::min(std::max(c + j, 0), W - 1);
                    acc += m[(static_cast<size_t>(r) * W + cc) * 5 + ch];
                    ++cnt;
                }
                tmp[(static_cast<size_t>(r) * W + c) * 5 + ch] = acc / cnt;
            }
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            for (int ch = 0; ch < 5; ++ch) {
                double acc = 0.0;
                int cnt = 0;
                for (int i = -radius; i <= radius; ++i) {
                    int rr = std::min(std::max(r + i, 0), H - 1);
                    acc += tmp[(static_cast<size_t>(rr) * W + c) * 5 + ch];
                    ++cnt;
                }
                blurred[(static_cast<size_t>(r) * W + c) * 5 + ch] = acc / cnt;
            }
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            size_t k = (static_cast<size_t>(r) * W + c) * 5;
            double g11 = blurred[k], g12 = blurred[k + 1], g22 = blurred[k + 2];
            double h1 = blurred[k + 3], h2 = blurred[k + 4];
            double scale = 1.0 / (g11 * g22 - g12 * g12 + 1e-3);
            float* f = flow.at(r, c);
            f[0] = static_cast<float>((g22 * h1 - g12 * h2) * scale);
            f[1] = static_cast<float>((g11 * h2 - g12 * h1) * scale);
        }
}

}  // namespace fb_detail

// Dense two-frame optical flow by quadratic polynomial expansion with a
// coarse-to-fine pyramid and iterative refinement. Inputs are grayscale
// (H*W) images; values are expected in the 8-bit range.
inline FlowField farneback_flow(const std::vector<float>& f1, const std::vector<float>& f2,
                                int height, int width,
                                const FarnebackParams& params = FarnebackParams()) {
    check(f1.size() == f2.size() &&
              f1.size() == static_cast<size_t>(height) * static_cast<size_t>(width),
          "farneback_flow: shape mismatch");
    check(params.pyr_scale > 0.0 && params.pyr_scale < 1.0, "farneback_flow: bad pyr_scale");

    using namespace fb_detail;
    std::vector<Image> pyr1, pyr2;
    pyr1.push_back({height, width, f1});
    pyr2.push_back({height, width, f2});
    double blur_sigma = 0.5 / params.pyr_scale;  // anti-alias before shrink
    for (int l = 1; l < params.levels; ++l) {
        int oh = static_cast<int>(std::lround(pyr1.back().height * params.pyr_scale));
        int ow = static_cast<int>(std::lround(pyr1.back().width * params.pyr_scale));
        if (oh < 4 * params.poly_n || ow < 4 * params.poly_n) break;
        pyr1.push_back(resize_bilinear(gaussian_blur(pyr1.back(), blur_sigma), oh, ow));
        pyr2.push_back(resize_bilinear(gaussian_blur(pyr2.back(), blur_sigma), oh, ow));
    }

    FlowField flow;
    for (int l = static_cast<int>(pyr1.size()) - 1; l >= 0; --l) {
        const Image& a = pyr1[static_cast<size_t>(l)];
        const Image& b = pyr2[static_cast<size_t>(l)];
        FlowField level_flow{a.height, a.width,
                             std::vector<float>(static_cast<size_t>(a.height) * a.width * 2,
                                                0.0f)};
        if (flow.height > 0) {
            // Upsample the coarser flow and rescale the displacements.
            Image fr{flow.height, flow.width,
                     std::vector<float>(static_cast<size_t>(flow.height) * flow.width)};
            Image fc = fr;
            for (int i = 0; i < flow.height * flow.width; ++i) {
                fr.v[static_cast<size_t>(i)] = flow.values[static_cast<size_t>(i) * 2];
                fc.v[static_cast<size_t>(i)] = flow.values[static_cast<size_t>(i) * 2 + 1];
            }
            Image ur = resize_bilinear(fr, a.height, a.width);
            Image uc = resize_bilinear(fc, a.height, a.width);
            double gain = static_cast<double>(a.height) / flow.height;
            for (int i = 0; i < a.height * a.width; ++i) {
                level_flow.values[static_cast<size_t>(i) * 2] =
                    static_cast<float>(ur.v[static_cast<size_t>(i)] * gain);
                level_flow.values[static_cast<size_t>(i) * 2 + 1] =
                    static_cast<float>(uc.v[static_cast<size_t>(i)] * gain);
            }
        }
        PolyExpansion p1 = poly_expansion(a, params.poly_n, params.poly_sigma);
        PolyExpansion p2 = poly_expansion(b, params.poly_n, params.poly_sigma);
        for (int it = 0; it < params.iterations; ++it)
            update_flow(p1, p2, level_flow, params.winsize);
        flow = std::move(level_flow);
    }
    flow.validate_finite();
    return flow;
}

}  // namespace occluscat::metrics
