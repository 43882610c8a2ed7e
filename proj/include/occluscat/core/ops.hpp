#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "occluscat/core/gemm.hpp"
#include "occluscat/core/tape.hpp"

// Elementwise ops, linear algebra, normalization and loss heads. Convolution
// and attention live in their own headers. Every backward writes disjoint
// outputs or accumulates sequentially, so results are bitwise reproducible
// for any thread count.

namespace occluscat::ag {


inline Id add(Tape& t, Id a, Id b) {
    check(t.val(a).same_shape(t.val(b)), "add: shape mismatch");
    Tensor out = t.val(a).clone();
    const float* pb = t.val(b).data();
    float* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, a, b]() {
            const Tensor& g = t.node(id).grad;
            t.add_grad(a, g.data(), g.numel());
            t.add_grad(b, g.data(), g.numel());
        };
    }
    return id;
}

inline Id scale(Tape& t, Id a, float s) {
    Tensor out = t.val(a).clone();
    float* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] *= s;
    bool ng = t.needs_grad(a);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, a, s]() {
            const Tensor& g = t.node(id).grad;
            Tensor& ga = t.grad(a);
            float* dst = ga.data();
            const float* src = g.data();
            for (int64_t i = 0; i < g.numel(); ++i) dst[i] += s * src[i];
        };
    }
    return id;
}

inline Id sub(Tape& t, Id a, Id b) { return add(t, a, scale(t, b, -1.0f)); }

inline Id relu(Tape& t, Id a) {
    Tensor out = t.val(a).clone();
    float* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = po[i] > 0.0f ? po[i] : 0.0f;
    bool ng = t.needs_grad(a);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, a]() {
            const Tensor& g = t.node(id).grad;
            const Tensor& x = t.val(a);
            Tensor& ga = t.grad(a);
            float* dst = ga.data();
            const float* src = g.data();
            const float* px = x.data();
            for (int64_t i = 0; i < g.numel(); ++i)
                if (px[i] > 0.0f) dst[i] += src[i];
        };
    }
    return id;
}

inline Id gelu(Tape& t, Id a) {
    const Tensor& x = t.val(a);
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    for (int64_t i = 0; i < out.numel(); ++i) {
        float v = px[i];
        po[i] = 0.5f * v * (1.0f + std::tanh(kC * (v + 0.044715f * v * v * v)));
    }
    bool ng = t.needs_grad(a);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, a]() {
            const Tensor& g = t.node(id).grad;
            const Tensor& x = t.val(a);
            Tensor& ga = t.grad(a);
            float* dst = ga.data();
            const float* src = g.data();
            const float* px = x.data();
            constexpr float kC = 0.7978845608028654f;
            for (int64_t i = 0; i < g.numel(); ++i) {
                float v = px[i];
                float u = kC * (v + 0.044715f * v * v * v);
                float th = std::tanh(u);
                float sech2 = 1.0f - th * th;
                float du = kC * (1.0f + 3.0f * 0.044715f * v * v);
                dst[i] += src[i] * (0.5f * (1.0f + th) + 0.5f * v * sech2 * du);
            }
        };
    }
    return id;
}

inline Id sigmoid(Tape& t, Id a) {
    Tensor out = t.val(a).clone();
    float* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = 1.0f / (1.0f + std::exp(-po[i]));
    bool ng = t.needs_grad(a);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, a]() {
            const Tensor& g = t.node(id).grad;
            const Tensor& y = t.val(id);
            Tensor& ga = t.grad(a);
            float* dst = ga.data();
            const float* src = g.data();
            const float* py = y.data();
            for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i] * py[i] * (1.0f - py[i]);
        };
    }
    return id;
}

// Shares storage with the input value; gradient reshapes back.
inline Id reshape(Tape& t, Id a, std::vector<int> shape) {
    Tensor out = t.val(a).reshaped(std::move(shape));
    bool ng = t.needs_grad(a);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, a]() {
            const Tensor& g = t.node(id).grad;
            t.add_grad(a, g.data(), g.numel());
        };
    }
    return id;
}

// Blocks gradient flow; the value is shared.
inline Id stopgrad(Tape& t, Id a) { return t.input(t.val(a)); }

// x: [N.., Din] -> [N.., Dout] with w [Dout, Din], b [Dout].
inline Id linear(Tape& t, Id x, Id w, Id b) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    int din = wv.dim(1), dout = wv.dim(0);
    check(xv.dim(xv.ndim() - 1) == din, "linear: inner dim mismatch");
    int64_t n = xv.numel() / din;
    std::vector<int> oshape = xv.shape();
    oshape.back() = dout;
    Tensor out(oshape);
    gemm(xv.data(), wv.data(), out.data(), static_cast<int>(n), din, dout, false, true);
    if (b >= 0) {
        const float* pb = t.val(b).data();
        float* po = out.data();
        for (int64_t i = 0; i < n; ++i)
            for (int j = 0; j < dout; ++j) po[i * dout + j] += pb[j];
    }
    bool ng = t.needs_grad(x) || t.needs_grad(w) || (b >= 0 && t.needs_grad(b));
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, w, b, n, din, dout]() {
            const Tensor& g = t.node(id).grad;
            if (t.needs_grad(x)) {
                Tensor& gx = t.grad(x);
                gemm(g.data(), t.val(w).data(), gx.data(), static_cast<int>(n), dout, din,
                     false, false, 1.0f);
            }
            if (t.needs_grad(w)) {
                Tensor& gw = t.grad(w);
                gemm(g.data(), t.val(x).data(), gw.data(), dout, static_cast<int>(n), din,
                     true, false, 1.0f);
            }
            if (b >= 0 && t.needs_grad(b)) {
                Tensor& gb = t.grad(b);
                float* dst = gb.data();
                const float* src = g.data();
                for (int64_t i = 0; i < n; ++i)
                    for (int j = 0; j < dout; ++j) dst[j] += src[i * dout + j];
            }
        };
    }
    return id;
}

// LayerNorm over the last dimension.
inline Id layer_norm(Tape& t, Id x, Id gamma, Id beta, float eps = 1e-5f) {
    const Tensor& xv = t.val(x);
    int d = xv.dim(xv.ndim() - 1);
    int64_t rows = xv.numel() / d;
    Tensor out(xv.shape());
    auto stats = std::make_shared<std::vector<float>>(2 * rows);  // mean, rstd per row
    const float* px = xv.data();
    const float* pg = t.val(gamma).data();
    const float* pb = t.val(beta).data();
    float* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = px + r * d;
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= d;
        float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*stats)[2 * r] = static_cast<float>(mu);
        (*stats)[2 * r + 1] = rstd;
        float* orow = po + r * d;
        for (int j = 0; j < d; ++j)
            orow[j] = (row[j] - static_cast<float>(mu)) * rstd * pg[j] + pb[j];
    }
    bool ng = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, gamma, beta, rows, d, stats]() {
            const Tensor& g = t.node(id).grad;
            const float* src = g.data();
            const float* px = t.val(x).data();
            const float* pg = t.val(gamma).data();
            float* gx = t.needs_grad(x) ? t.grad(x).data() : nullptr;
            float* gg = t.needs_grad(gamma) ? t.grad(gamma).data() : nullptr;
            float* gb = t.needs_grad(beta) ? t.grad(beta).data() : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                float mu = (*stats)[2 * r], rstd = (*stats)[2 * r + 1];
                const float* xr = px + r * d;
                const float* gr = src + r * d;
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int j = 0; j < d; ++j) {
                    float xhat = (xr[j] - mu) * rstd;
                    float dxhat = gr[j] * pg[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (gg) gg[j] += gr[j] * xhat;
                    if (gb) gb[j] += gr[j];
                }
                if (gx) {
                    float m1 = static_cast<float>(sum_dxhat / d);
                    float m2 = static_cast<float>(sum_dxhat_xhat / d);
                    float* gxr = gx + r * d;
                    for (int j = 0; j < d; ++j) {
                        float xhat = (xr[j] - mu) * rstd;
                        float dxhat = gr[j] * pg[j];
                        gxr[j] += rstd * (dxhat - m1 - xhat * m2);
                    }
                }
            }
        };
    }
    return id;
}

// GroupNorm over [B, C, H, W].
inline Id group_norm(Tape& t, Id x, Id gamma, Id beta, int groups, float eps = 1e-5f) {
    const Tensor& xv = t.val(x);
    check(xv.ndim() == 4, "group_norm: expect [B,C,H,W]");
    int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    check(C % groups == 0, "group_norm: channels not divisible by groups");
    int cpg = C / groups;
    int64_t hw = static_cast<int64_t>(H) * W;
    int64_t gsize = cpg * hw;
    Tensor out(xv.shape());
    auto stats = std::make_shared<std::vector<float>>(2 * B * groups);
    const float* px = xv.data();
    const float* pg = t.val(gamma).data();
    const float* pb = t.val(beta).data();
    float* po = out.data();
    for (int b = 0; b < B; ++b) {
        for (int g = 0; g < groups; ++g) {
            const float* xg = px + (static_cast<int64_t>(b) * C + g * cpg) * hw;
            double mu = 0.0;
            for (int64_t i = 0; i < gsize; ++i) mu += xg[i];
            mu /= static_cast<double>(gsize);
            double var = 0.0;
            for (int64_t i = 0; i < gsize; ++i) var += (xg[i] - mu) * (xg[i] - mu);
            var /= static_cast<double>(gsize);
            float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
            (*stats)[2 * (b * groups + g)] = static_cast<float>(mu);
            (*stats)[2 * (b * groups + g) + 1] = rstd;
            float* og = po + (static_cast<int64_t>(b) * C + g * cpg) * hw;
            for (int c = 0; c < cpg; ++c) {
                float ga = pg[g * cpg + c], be = pb[g * cpg + c];
                for (int64_t i = 0; i < hw; ++i) {
                    og[c * hw + i] =
                        (xg[c * hw + i] - static_cast<float>(mu)) * rstd * ga + be;
                }
            }
        }
    }
    bool ng = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, gamma, beta, B, C, groups, cpg, hw, gsize, stats]() {
            const Tensor& g = t.node(id).grad;
            const float* src = g.data();
            const float* px = t.val(x).data();
            const float* pg = t.val(gamma).data();
            float* gx = t.needs_grad(x) ? t.grad(x).data() : nullptr;
            float* gg = t.needs_grad(gamma) ? t.grad(gamma).data() : nullptr;
            float* gb = t.needs_grad(beta) ? t.grad(beta).data() : nullptr;
            for (int b = 0; b < B; ++b) {
                for (int gr = 0; gr < groups; ++gr) {
                    int64_t base = (static_cast<int64_t>(b) * C + gr * cpg) * hw;
                    float mu = (*stats)[2 * (b * groups + gr)];
                    float rstd = (*stats)[2 * (b * groups + gr) + 1];
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int c = 0; c < cpg; ++c) {
                        float ga = pg[gr * cpg + c];
                        for (int64_t i = 0; i < hw; ++i) {
                            int64_t k = base + c * hw + i;
                            float xhat = (px[k] - mu) * rstd;
                            float dxhat = src[k] * ga;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                            if (gg) gg[gr * cpg + c] += src[k] * xhat;
                            if (gb) gb[gr * cpg + c] += src[k];
                        }
                    }
                    if (gx) {
                        float m1 = static_cast<float>(sum_dxhat / static_cast<double>(gsize));
                        float m2 =
                            static_cast<float>(sum_dxhat_xhat / static_cast<double>(gsize));
                        for (int c = 0; c < cpg; ++c) {
                            float ga = pg[gr * cpg + c];
                            for (int64_t i = 0; i < hw; ++i) {
                                int64_t k = base + c * hw + i;
                                float xhat = (px[k] - mu) * rstd;
                                float dxhat = src[k] * ga;
                                gx[k] += rstd * (dxhat - m1 - xhat * m2);
                            }
                        }
                    }
                }
            }
        };
    }
    return id;
}

// Concatenate along dim 1 of [B, C, H, W] (or dim 0 of [C, H, W] when B absent).
inline Id concat_channels(Tape& t, const std::vector<Id>& parts) {
    check(!parts.empty(), "concat_channels: empty");
    const Tensor& first = t.val(parts[0]);
    int nd = first.ndim();
    check(nd == 3 || nd == 4, "concat_channels: expect 3D or 4D");
    int cdim = nd == 4 ? 1 : 0;
    std::vector<int> oshape = first.shape();
    int ctotal = 0;
    for (Id p : parts) ctotal += t.val(p).dim(cdim);
    oshape[static_cast<size_t>(cdim)] = ctotal;
    Tensor out(oshape);
    int B = nd == 4 ? first.dim(0) : 1;
    int64_t inner = static_cast<int64_t>(first.dim(nd - 2)) * first.dim(nd - 1);
    float* po = out.data();
    bool ng = false;
    std::vector<int> offsets;
    int off = 0;
    for (Id p : parts) {
        const Tensor& v = t.val(p);
        int c = v.dim(cdim);
        for (int b = 0; b < B; ++b) {
            std::memcpy(po + (static_cast<int64_t>(b) * ctotal + off) * inner,
                        v.data() + static_cast<int64_t>(b) * c * inner,
                        static_cast<size_t>(c * inner) * sizeof(float));
        }
        offsets.push_back(off);
        off += c;
        ng = ng || t.needs_grad(p);
    }
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        std::vector<Id> ps = parts;
        t.node(id).backward = [&t, id, ps, offsets, B, ctotal, inner]() {
            const Tensor& g = t.node(id).grad;
            const float* src = g.data();
            for (size_t i = 0; i < ps.size(); ++i) {
                if (!t.needs_grad(ps[i])) continue;
                Tensor& gp = t.grad(ps[i]);
                int c = static_cast<int>(gp.numel() / (B * inner));
                float* dst = gp.data();
                for (int b = 0; b < B; ++b) {
                    const float* s =
                        src + (static_cast<int64_t>(b) * ctotal + offsets[i]) * inner;
                    float* d = dst + static_cast<int64_t>(b) * c * inner;
                    for (int64_t j = 0; j < c * inner; ++j) d[j] += s[j];
                }
            }
        };
    }
    return id;
}

// Concatenate along the last dimension (feature axis).
inline Id concat_lastdim(Tape& t, const std::vector<Id>& parts) {
    check(!parts.empty(), "concat_lastdim: empty");
    const Tensor& first = t.val(parts[0]);
    int nd = first.ndim();
    int64_t rows = first.numel() / first.dim(nd - 1);
    int dtotal = 0;
    for (Id p : parts) dtotal += t.val(p).dim(nd - 1);
    std::vector<int> oshape = first.shape();
    oshape.back() = dtotal;
    Tensor out(oshape);
    float* po = out.data();
    bool ng = false;
    std::vector<int> offsets;
    int off = 0;
    for (Id p : parts) {
        const Tensor& v = t.val(p);
        int d = v.dim(nd - 1);
        const float* pv = v.data();
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(po + r * dtotal + off, pv + r * d, static_cast<size_t>(d) * sizeof(float));
        offsets.push_back(off);
        off += d;
        ng = ng || t.needs_grad(p);
    }
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        std::vector<Id> ps = parts;
        t.node(id).backward = [&t, id, ps, offsets, rows, dtotal]() {
            const Tensor& g = t.node(id).grad;
            const float* src = g.data();
            for (size_t i = 0; i < ps.size(); ++i) {
                if (!t.needs_grad(ps[i])) continue;
                Tensor& gp = t.grad(ps[i]);
                int d = gp.dim(gp.ndim() - 1);
                float* dst = gp.data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < d; ++j) dst[r * d + j] += src[r * dtotal + offsets[i] + j];
            }
        };
    }
    return id;
}

// [A, B, C] -> [A, C, B].
inline Id transpose12(Tape& t, Id x) {
    const Tensor& xv = t.val(x);
    check(xv.ndim() == 3, "transpose12: expect 3D");
    int A = xv.dim(0), B = xv.dim(1), C = xv.dim(2);
    Tensor out({A, C, B});
    const float* px = xv.data();
    float* po = out.data();
    for (int a = 0; a < A; ++a)
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                po[(static_cast<int64_t>(a) * C + c) * B + b] =
                    px[(static_cast<int64_t>(a) * B + b) * C + c];
    bool ng = t.needs_grad(x);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, A, B, C]() {
            const Tensor& g = t.node(id).grad;
            Tensor& gx = t.grad(x);
            const float* src = g.data();
            float* dst = gx.data();
            for (int a = 0; a < A; ++a)
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c)
                        dst[(static_cast<int64_t>(a) * B + b) * C + c] +=
                            src[(static_cast<int64_t>(a) * C + c) * B + b];
        };
    }
    return id;
}

// Row slice of a 2D tensor.
inline Id slice_rows(Tape& t, Id x, int start, int len) {
    const Tensor& xv = t.val(x);
    check(xv.ndim() == 2, "slice_rows: expect 2D");
    int D = xv.dim(1);
    check(start >= 0 && start + len <= xv.dim(0), "slice_rows: out of range");
    Tensor out({len, D});
    std::memcpy(out.data(), xv.data() + static_cast<int64_t>(start) * D,
                static_cast<size_t>(len) * D * sizeof(float));
    bool ng = t.needs_grad(x);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, start, len, D]() {
            const Tensor& g = t.node(id).grad;
            Tensor& gx = t.grad(x);
            const float* src = g.data();
            float* dst = gx.data() + static_cast<int64_t>(start) * D;
            for (int64_t i = 0; i < static_cast<int64_t>(len) * D; ++i) dst[i] += src[i];
        };
    }
    return id;
}

// Channel slice along dim 1 of [B, C, H, W].
inline Id slice_channels(Tape& t, Id x, int start, int len) {
    const Tensor& xv = t.val(x);
    check(xv.ndim() == 4, "slice_channels: expect 4D");
    int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    check(start >= 0 && start + len <= C, "slice_channels: out of range");
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor out({B, len, H, W});
    const float* px = xv.data();
    float* po = out.data();
    for (int b = 0; b < B; ++b)
        std::memcpy(po + static_cast<int64_t>(b) * len * hw,
                    px + (static_cast<int64_t>(b) * C + start) * hw,
                    static_cast<size_t>(len * hw) * sizeof(float));
    bool ng = t.needs_grad(x);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, B, C, start, len, hw]() {
            const Tensor& g = t.node(id).grad;
            Tensor& gx = t.grad(x);
            const float* src = g.data();
            float* dst = gx.data();
            for (int b = 0; b < B; ++b) {
                const float* s = src + static_cast<int64_t>(b) * len * hw;
                float* d = dst + (static_cast<int64_t>(b) * C + start) * hw;
                for (int64_t i = 0; i < len * hw; ++i) d[i] += s[i];
            }
        };
    }
    return id;
}

// Rows of `table` selected by `idx`; gradients scatter back into the table.
inline Id gather_rows(Tape& t, Id table, std::vector<int> idx) {
    const Tensor& tv = t.val(table);
    check(tv.ndim() == 2, "gather_rows: table must be [K, D]");
    int K = tv.dim(0), D = tv.dim(1);
    int n = static_cast<int>(idx.size());
    Tensor out({n, D});
    const float* pt = tv.data();
    float* po = out.data();
    for (int i = 0; i < n; ++i) {
        check(idx[i] >= 0 && idx[i] < K, "gather_rows: index out of range");
        std::memcpy(po + static_cast<int64_t>(i) * D, pt + static_cast<int64_t>(idx[i]) * D,
                    static_cast<size_t>(D) * sizeof(float));
    }
    bool ng = t.needs_grad(table);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        auto ix = std::make_shared<std::vector<int>>(std::move(idx));
        t.node(id).backward = [&t, id, table, ix, D]() {
            const Tensor& g = t.node(id).grad;
            Tensor& gt = t.grad(table);
            const float* src = g.data();
            float* dst = gt.data();
            for (size_t i = 0; i < ix->size(); ++i) {
                float* row = dst + static_cast<int64_t>((*ix)[i]) * D;
                const float* s = src + static_cast<int64_t>(i) * D;
                for (int j = 0; j < D; ++j) row[j] += s[j];
            }
        };
    }
    return id;
}

// Value of `quantized`, gradient routed to `continuous` unchanged.
inline Id straight_through(Tape& t, Id continuous, Id quantized) {
    check(t.val(continuous).same_shape(t.val(quantized)), "straight_through: shape mismatch");
    Tensor out = t.val(quantized).clone();
    bool ng = t.needs_grad(continuous);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, continuous]() {
            const Tensor& g = t.node(id).grad;
            t.add_grad(continuous, g.data(), g.numel());
        };
    }
    return id;
}

// --- scalar reductions (double accumulation) ---

inline Id mean_all(Tape& t, Id a) {
    const Tensor& x = t.val(a);
    double s = 0.0;
    const float* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) s += px[i];
    int64_t n = x.numel();
    Tensor out = Tensor::from({1}, {static_cast<float>(s / static_cast<double>(n))});
    bool ng = t.needs_grad(a);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, a, n]() {
            float g = t.node(id).grad.at(0) / static_cast<float>(n);
            Tensor& ga = t.grad(a);
            float* dst = ga.data();
            for (int64_t i = 0; i < ga.numel(); ++i) dst[i] += g;
        };
    }
    return id;
}

// Sum of squared differences (the VQ-style norm; no normalization).
inline Id sum_squares_diff(Tape& t, Id a, Id b) {
    const Tensor& xa = t.val(a);
    const Tensor& xb = t.val(b);
    check(xa.same_shape(xb), "sum_squares_diff: shape mismatch");
    double s = 0.0;
    const float* pa = xa.data();
    const float* pb = xb.data();
    for (int64_t i = 0; i < xa.numel(); ++i) {
        double d = static_cast<double>(pa[i]) - pb[i];
        s += d * d;
    }
    Tensor out = Tensor::from({1}, {static_cast<float>(s)});
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, a, b]() {
            float g = t.node(id).grad.at(0);
            const float* pa = t.val(a).data();
            const float* pb = t.val(b).data();
            int64_t n = t.val(a).numel();
            if (t.needs_grad(a)) {
                float* dst = t.grad(a).data();
                for (int64_t i = 0; i < n; ++i) dst[i] += 2.0f * g * (pa[i] - pb[i]);
            }
            if (t.needs_grad(b)) {
                float* dst = t.grad(b).data();
                for (int64_t i = 0; i < n; ++i) dst[i] -= 2.0f * g * (pa[i] - pb[i]);
            }
        };
    }
    return id;
}

// Mean squared error over all elements.
inline Id mse_loss(Tape& t, Id a, Id b) {
    int64_t n = t.val(a).numel();
    return scale(t, sum_squares_diff(t, a, b), 1.0f / static_cast<float>(n));
}

// Mean cross-entropy between logits [N, K] and integer targets.
inline Id cross_entropy(Tape& t, Id logits, const std::vector<int>& targets) {
    const Tensor& lv = t.val(logits);
    check(lv.ndim() == 2, "cross_entropy: logits must be [N, K]");
    int N = lv.dim(0), K = lv.dim(1);
    check(static_cast<int>(targets.size()) == N, "cross_entropy: target count mismatch");
    auto probs = std::make_shared<Tensor>(Tensor({N, K}));
    const float* pl = lv.data();
    float* pp = probs->data();
    double total = 0.0;
    for (int i = 0; i < N; ++i) {
        const float* row = pl + static_cast<int64_t>(i) * K;
        float m = row[0];
        for (int j = 1; j < K; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int j = 0; j < K; ++j) z += std::exp(static_cast<double>(row[j]) - m);
        double lse = m + std::log(z);
        check(targets[i] >= 0 && targets[i] < K, "cross_entropy: target out of range");
        total += lse - row[targets[i]];
        float* prow = pp + static_cast<int64_t>(i) * K;
        for (int j = 0; j < K; ++j)
            prow[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - lse));
    }
    Tensor out = Tensor::from({1}, {static_cast<float>(total / N)});
    bool ng = t.needs_grad(logits);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        auto tg = std::make_shared<std::vector<int>>(targets);
        t.node(id).backward = [&t, id, logits, probs, tg, N, K]() {
            float g = t.node(id).grad.at(0) / static_cast<float>(N);
            Tensor& gl = t.grad(logits);
            float* dst = gl.data();
            const float* pp = probs->data();
            for (int i = 0; i < N; ++i) {
                for (int j = 0; j < K; ++j)
                    dst[static_cast<int64_t>(i) * K + j] += g * pp[static_cast<int64_t>(i) * K + j];
                dst[static_cast<int64_t>(i) * K + (*tg)[i]] -= g;
            }
        };
    }
    return id;
}

// Mean binary cross-entropy on logits against {0,1} targets.
inline Id bce_with_logits(Tape& t, Id logits, Id targets) {
    const Tensor& lv = t.val(logits);
    const Tensor& tv = t.val(targets);
    check(lv.same_shape(tv), "bce_with_logits: shape mismatch");
    int64_t n = lv.numel();
    const float* pl = lv.data();
    const float* pt = tv.data();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double x = pl[i], y = pt[i];
        total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    Tensor out = Tensor::from({1}, {static_cast<float>(total / static_cast<double>(n))});
    bool ng = t.needs_grad(logits);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, logits, targets, n]() {
            float g = t.node(id).grad.at(0) / static_cast<float>(n);
            Tensor& gl = t.grad(logits);
            float* dst = gl.data();
            const float* pl = t.val(logits).data();
            const float* pt = t.val(targets).data();
            for (int64_t i = 0; i < n; ++i) {
                float s = 1.0f / (1.0f + std::exp(-pl[i]));
                dst[i] += g * (s - pt[i]);
            }
        };
    }
    return id;
}

// Softmax over the last dimension.
inline Id softmax_lastdim(Tape& t, Id a) {
    const Tensor& x = t.val(a);
    int d = x.dim(x.ndim() - 1);
    int64_t rows = x.numel() / d;
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = px + r * d;
        float m = row[0];
        for (int j = 1; j < d; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int j = 0; j < d; ++j) z += std::exp(static_cast<double>(row[j]) - m);
        float* orow = po + r * d;
        for (int j = 0; j < d; ++j)
            orow[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - m) / z);
    }
    bool ng = t.needs_grad(a);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, a, rows, d]() {
            const Tensor& g = t.node(id).grad;
            const Tensor& y = t.val(id);
            Tensor& ga = t.grad(a);
            const float* src = g.data();
            const float* py = y.data();
            float* dst = ga.data();
            for (int64_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += src[r * d + j] * py[r * d + j];
                for (int j = 0; j < d; ++j)
                    dst[r * d + j] +=
                        py[r * d + j] * (src[r * d + j] - static_cast<float>(dot));
            }
        };
    }
    return id;
}

// Unit L2 normalization along the channel dim of [B, C, H, W] (LPIPS-style).
inline Id channel_l2_normalize(Tape& t, Id x, float eps = 1e-10f) {
    const Tensor& xv = t.val(x);
    check(xv.ndim() == 4, "channel_l2_normalize: expect [B,C,H,W]");
    int B = xv.dim(0), C = xv.dim(1);
    int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor out(xv.shape());
    const float* px = xv.data();
    float* po = out.data();
    auto rnorm = std::make_shared<std::vector<float>>(B * hw);
    for (int b = 0; b < B; ++b) {
        for (int64_t i = 0; i < hw; ++i) {
            double s = 0.0;
            for (int c = 0; c < C; ++c) {
                float v = px[(static_cast<int64_t>(b) * C + c) * hw + i];
                s += static_cast<double>(v) * v;
            }
            float r = static_cast<float>(1.0 / std::sqrt(s + eps));
            (*rnorm)[b * hw + i] = r;
            for (int c = 0; c < C; ++c) {
                int64_t k = (static_cast<int64_t>(b) * C + c) * hw + i;
                po[k] = px[k] * r;
            }
        }
    }
    bool ng = t.needs_grad(x);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, B, C, hw, rnorm]() {
            const Tensor& g = t.node(id).grad;
            const Tensor& y = t.val(id);
            Tensor& gx = t.grad(x);
            const float* src = g.data();
            const float* py = y.data();
            float* dst = gx.data();
            for (int b = 0; b < B; ++b) {
                for (int64_t i = 0; i < hw; ++i) {
                    float r = (*rnorm)[b * hw + i];
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c) {
                        int64_t k = (static_cast<int64_t>(b) * C + c) * hw + i;
                        dot += static_cast<double>(src[k]) * py[k];
                    }
                    for (int c = 0; c < C; ++c) {
                        int64_t k = (static_cast<int64_t>(b) * C + c) * hw + i;
                        dst[k] += r * (src[k] - py[k] * static_cast<float>(dot));
                    }
                }
            }
        };
    }
    return id;
}

}  // namespace occluscat::ag
