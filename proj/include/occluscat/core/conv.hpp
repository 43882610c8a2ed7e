#pragma once

#include <omp.h>

#include <vector>

#include "occluscat/core/gemm.hpp"
#include "occluscat/core/tape.hpp"

namespace occluscat::ag {

namespace detail {

// col is [Cin*kh*kw, Ho*Wo] for a single sample.
inline void im2col(const float* x, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int Ho, int Wo, float* col) {
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                float* dst = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) *
                                       (static_cast<int64_t>(Ho) * Wo);
                for (int oi = 0; oi < Ho; ++oi) {
                    int ii = oi * stride + ki - pad;
                    for (int oj = 0; oj < Wo; ++oj) {
                        int jj = oj * stride + kj - pad;
                        dst[oi * Wo + oj] =
                            (ii >= 0 && ii < H && jj >= 0 && jj < W)
                                ? x[(static_cast<int64_t>(c) * H + ii) * W + jj]
                                : 0.0f;
                    }
                }
            }
        }
    }
}

inline void col2im_add(const float* col, int C, int H, int W, int kh, int kw, int stride,
                       int pad, int Ho, int Wo, float* x) {
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const float* src = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) *
                                             (static_cast<int64_t>(Ho) * Wo);
                for (int oi = 0; oi < Ho; ++oi) {
                    int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= H) continue;
                    for (int oj = 0; oj < Wo; ++oj) {
                        int jj = oj * stride + kj - pad;
                        if (jj < 0 || jj >= W) continue;
                        x[(static_cast<int64_t>(c) * H + ii) * W + jj] += src[oi * Wo + oj];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x [B,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout] (or -1 for none).
inline Id conv2d(Tape& t, Id x, Id w, Id b, int stride = 1, int pad = 1) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    check(xv.ndim() == 4 && wv.ndim() == 4, "conv2d: expect 4D tensors");
    int B = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int Cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    check(wv.dim(1) == Cin, "conv2d: channel mismatch");
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    int K = Cin * kh * kw;
    int64_t ohw = static_cast<int64_t>(Ho) * Wo;
    Tensor out({B, Cout, Ho, Wo});
    const float* pw = wv.data();
    const float* pb = b >= 0 ? t.val(b).data() : nullptr;
    {
        float* po = out.data();
        const float* px = xv.data();
#pragma omp parallel for schedule(static)
        for (int bi = 0; bi < B; ++bi) {
            std::vector<float> col(static_cast<size_t>(K) * ohw);
            detail::im2col(px + static_cast<int64_t>(bi) * Cin * H * W, Cin, H, W, kh, kw,
                           stride, pad, Ho, Wo, col.data());
            float* ob = po + static_cast<int64_t>(bi) * Cout * ohw;
            gemm(pw, col.data(), ob, Cout, K, static_cast<int>(ohw));
            if (pb) {
                for (int c = 0; c < Cout; ++c)
                    for (int64_t i = 0; i < ohw; ++i) ob[c * ohw + i] += pb[c];
            }
        }
    }
    bool ng = t.needs_grad(x) || t.needs_grad(w) || (b >= 0 && t.needs_grad(b));
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, w, b, B, Cin, H, W, Cout, kh, kw, stride, pad, Ho,
                               Wo, K, ohw]() {
            const Tensor& g = t.node(id).grad;
            const float* pg = g.data();
            const float* px = t.val(x).data();
            const float* pw = t.val(w).data();
            if (t.needs_grad(x)) {
                float* gx = t.grad(x).data();
#pragma omp parallel for schedule(static)
                for (int bi = 0; bi < B; ++bi) {
                    std::vector<float> col(static_cast<size_t>(K) * ohw);
                    gemm(pw, pg + static_cast<int64_t>(bi) * Cout * ohw, col.data(), K, Cout,
                         static_cast<int>(ohw), true, false);
                    detail::col2im_add(col.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                                       gx + static_cast<int64_t>(bi) * Cin * H * W);
                }
            }
            if (t.needs_grad(w)) {
                // Sequential over batch so the reduction order is fixed.
                float* gw = t.grad(w).data();
                std::vector<float> col(static_cast<size_t>(K) * ohw);
                for (int bi = 0; bi < B; ++bi) {
                    detail::im2col(px + static_cast<int64_t>(bi) * Cin * H * W, Cin, H, W, kh,
                                   kw, stride, pad, Ho, Wo, col.data());
                    gemm(pg + static_cast<int64_t>(bi) * Cout * ohw, col.data(), gw, Cout,
                         static_cast<int>(ohw), K, false, true, 1.0f);
                }
            }
            if (b >= 0 && t.needs_grad(b)) {
                float* gb = t.grad(b).data();
                for (int bi = 0; bi < B; ++bi)
                    for (int c = 0; c < Cout; ++c) {
                        const float* row = pg + (static_cast<int64_t>(bi) * Cout + c) * ohw;
                        double s = 0.0;
                        for (int64_t i = 0; i < ohw; ++i) s += row[i];
                        gb[c] += static_cast<float>(s);
                    }
            }
        };
    }
    return id;
}

// Transposed convolution. x [B,Cin,H,W], w [Cin,Cout,kh,kw]; output spatial
// size (H-1)*stride + kh - 2*pad.
inline Id conv_transpose2d(Tape& t, Id x, Id w, Id b, int stride = 2, int pad = 0) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    check(xv.ndim() == 4 && wv.ndim() == 4, "conv_transpose2d: expect 4D tensors");
    int B = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    check(wv.dim(0) == Cin, "conv_transpose2d: channel mismatch");
    int Cout = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
    int Ho = (H - 1) * stride + kh - 2 * pad;
    int Wo = (W - 1) * stride + kw - 2 * pad;
    int K = Cout * kh * kw;
    int64_t ihw = static_cast<int64_t>(H) * W;
    Tensor out({B, Cout, Ho, Wo});
    const float* pw = wv.data();
    const float* pb = b >= 0 ? t.val(b).data() : nullptr;
    {
        // out = col2im(W^T @ x): the exact adjoint of conv2d's forward.
        float* po = out.data();
        const float* px = xv.data();
#pragma omp parallel for schedule(static)
        for (int bi = 0; bi < B; ++bi) {
            std::vector<float> col(static_cast<size_t>(K) * ihw);
            gemm(pw, px + static_cast<int64_t>(bi) * Cin * ihw, col.data(), K, Cin,
                 static_cast<int>(ihw), true, false);
            float* ob = po + static_cast<int64_t>(bi) * Cout * Ho * Wo;
            detail::col2im_add(col.data(), Cout, Ho, Wo, kh, kw, stride, pad, H, W, ob);
            if (pb) {
                for (int c = 0; c < Cout; ++c)
                    for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i)
                        ob[c * static_cast<int64_t>(Ho) * Wo + i] += pb[c];
            }
        }
    }
    bool ng = t.needs_grad(x) || t.needs_grad(w) || (b >= 0 && t.needs_grad(b));
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, w, b, B, Cin, H, W, Cout, kh, kw, stride, pad, Ho,
                               Wo, K, ihw]() {
            const Tensor& g = t.node(id).grad;
            const float* pg = g.data();
            const float* px = t.val(x).data();
            const float* pw = t.val(w).data();
            if (t.needs_grad(x)) {
                float* gx = t.grad(x).data();
#pragma omp parallel for schedule(static)
                for (int bi = 0; bi < B; ++bi) {
                    std::vector<float> col(static_cast<size_t>(K) * ihw);
                    detail::im2col(pg + static_cast<int64_t>(bi) * Cout * Ho * Wo, Cout, Ho,
                                   Wo, kh, kw, stride, pad, H, W, col.data());
                    gemm(pw, col.data(), gx + static_cast<int64_t>(bi) * Cin * ihw, Cin, K,
                         static_cast<int>(ihw), false, false, 1.0f);
                }
            }
            if (t.needs_grad(w)) {
                float* gw = t.grad(w).data();
                std::vector<float> col(static_cast<size_t>(K) * ihw);
                for (int bi = 0; bi < B; ++bi) {
                    detail::im2col(pg + static_cast<int64_t>(bi) * Cout * Ho * Wo, Cout, Ho,
                                   Wo, kh, kw, stride, pad, H, W, col.data());
                    gemm(px + static_cast<int64_t>(bi) * Cin * ihw, col.data(), gw, Cin,
                         static_cast<int>(ihw), K, false, true, 1.0f);
                }
            }
            if (b >= 0 && t.needs_grad(b)) {
                float* gb = t.grad(b).data();
                int64_t ohw = static_cast<int64_t>(Ho) * Wo;
                for (int bi = 0; bi < B; ++bi)
                    for (int c = 0; c < Cout; ++c) {
                        const float* row = pg + (static_cast<int64_t>(bi) * Cout + c) * ohw;
                        double s = 0.0;
                        for (int64_t i = 0; i < ohw; ++i) s += row[i];
                        gb[c] += static_cast<float>(s);
                    }
            }
        };
    }
    return id;
}

}  // namespace occluscat::ag
