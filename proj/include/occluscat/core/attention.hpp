#pragma once

#include <omp.h>

#include <cmath>
#include <limits>
#include <vector>

#include "occluscat/core/gemm.hpp"
#include "occluscat/core/tape.hpp"

namespace occluscat::ag {

// [A, B, D] -> [B, A, D].
inline Id transpose01(Tape& t, Id x) {
    const Tensor& xv = t.val(x);
    check(xv.ndim() == 3, "transpose01: expect 3D");
    int A = xv.dim(0), B = xv.dim(1), D = xv.dim(2);
    Tensor out({B, A, D});
    const float* px = xv.data();
    float* po = out.data();
    for (int a = 0; a < A; ++a)
        for (int b = 0; b < B; ++b)
            std::memcpy(po + (static_cast<int64_t>(b) * A + a) * D,
                        px + (static_cast<int64_t>(a) * B + b) * D,
                        static_cast<size_t>(D) * sizeof(float));
    bool ng = t.needs_grad(x);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, A, B, D]() {
            const Tensor& g = t.node(id).grad;
            Tensor& gx = t.grad(x);
            const float* src = g.data();
            float* dst = gx.data();
            for (int b = 0; b < B; ++b)
                for (int a = 0; a < A; ++a) {
                    const float* s = src + (static_cast<int64_t>(b) * A + a) * D;
                    float* d = dst + (static_cast<int64_t>(a) * B + b) * D;
                    for (int j = 0; j < D; ++j) d[j] += s[j];
                }
        };
    }
    return id;
}

// [A, L, D] -> [A*H, L, D/H]: group axis absorbs the head split.
inline Id split_heads(Tape& t, Id x, int heads) {
    const Tensor& xv = t.val(x);
    check(xv.ndim() == 3, "split_heads: expect 3D");
    int A = xv.dim(0), L = xv.dim(1), D = xv.dim(2);
    check(D % heads == 0, "split_heads: width not divisible by head count");
    int dh = D / heads;
    Tensor out({A * heads, L, dh});
    const float* px = xv.data();
    float* po = out.data();
    for (int a = 0; a < A; ++a)
        for (int h = 0; h < heads; ++h)
            for (int l = 0; l < L; ++l)
                std::memcpy(po + ((static_cast<int64_t>(a) * heads + h) * L + l) * dh,
                            px + (static_cast<int64_t>(a) * L + l) * D + h * dh,
                            static_cast<size_t>(dh) * sizeof(float));
    bool ng = t.needs_grad(x);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, A, L, D, heads, dh]() {
            const Tensor& g = t.node(id).grad;
            Tensor& gx = t.grad(x);
            const float* src = g.data();
            float* dst = gx.data();
            for (int a = 0; a < A; ++a)
                for (int h = 0; h < heads; ++h)
                    for (int l = 0; l < L; ++l) {
                        const float* s =
                            src + ((static_cast<int64_t>(a) * heads + h) * L + l) * dh;
                        float* d = dst + (static_cast<int64_t>(a) * L + l) * D + h * dh;
                        for (int j = 0; j < dh; ++j) d[j] += s[j];
                    }
        };
    }
    return id;
}

// Inverse of split_heads: [A*H, L, dh] -> [A, L, H*dh].
inline Id merge_heads(Tape& t, Id x, int heads) {
    const Tensor& xv = t.val(x);
    check(xv.ndim() == 3, "merge_heads: expect 3D");
    int AH = xv.dim(0), L = xv.dim(1), dh = xv.dim(2);
    check(AH % heads == 0, "merge_heads: group axis not divisible by heads");
    int A = AH / heads, D = dh * heads;
    Tensor out({A, L, D});
    const float* px = xv.data();
    float* po = out.data();
    for (int a = 0; a < A; ++a)
        for (int h = 0; h < heads; ++h)
            for (int l = 0; l < L; ++l)
                std::memcpy(po + (static_cast<int64_t>(a) * L + l) * D + h * dh,
                            px + ((static_cast<int64_t>(a) * heads + h) * L + l) * dh,
                            static_cast<size_t>(dh) * sizeof(float));
    bool ng = t.needs_grad(x);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, x, A, L, D, heads, dh]() {
            const Tensor& g = t.node(id).grad;
            Tensor& gx = t.grad(x);
            const float* src = g.data();
            float* dst = gx.data();
            for (int a = 0; a < A; ++a)
                for (int h = 0; h < heads; ++h)
                    for (int l = 0; l < L; ++l) {
                        const float* s = src + (static_cast<int64_t>(a) * L + l) * D + h * dh;
                        float* d =
                            dst + ((static_cast<int64_t>(a) * heads + h) * L + l) * dh;
                        for (int j = 0; j < dh; ++j) d[j] += s[j];
                    }
        };
    }
    return id;
}

// Scaled dot-product attention over independent groups.
// q [G, Lq, dh], k/v [G, Lk, dh]. Scale is 1/sqrt(dh). The causal flag masks
// key positions j > i (requires Lq == Lk).
inline Id attention(Tape& t, Id q, Id k, Id v, bool causal) {
    const Tensor& qv = t.val(q);
    const Tensor& kv = t.val(k);
    const Tensor& vv = t.val(v);
    check(qv.ndim() == 3 && kv.ndim() == 3 && vv.ndim() == 3, "attention: expect 3D");
    int G = qv.dim(0), Lq = qv.dim(1), dh = qv.dim(2);
    int Lk = kv.dim(1);
    check(kv.dim(0) == G && vv.dim(0) == G, "attention: group mismatch");
    check(kv.dim(2) == dh && vv.dim(2) == dh && vv.dim(1) == Lk, "attention: shape mismatch");
    check(!causal || Lq == Lk, "attention: causal mask requires square attention");
    float scl = 1.0f / std::sqrt(static_cast<float>(dh));
    auto probs = std::make_shared<Tensor>(
        Tensor({G, Lq, Lk}));  // kept for the backward pass
    Tensor out({G, Lq, dh});
    {
        const float* pq = qv.data();
        const float* pk = kv.data();
        const float* pv = vv.data();
        float* pp = probs->data();
        float* po = out.data();
#pragma omp parallel for schedule(static)
        for (int g = 0; g < G; ++g) {
            const float* Q = pq + static_cast<int64_t>(g) * Lq * dh;
            const float* K = pk + static_cast<int64_t>(g) * Lk * dh;
            const float* V = pv + static_cast<int64_t>(g) * Lk * dh;
            float* P = pp + static_cast<int64_t>(g) * Lq * Lk;
            gemm(Q, K, P, Lq, dh, Lk, false, true);
            for (int i = 0; i < Lq; ++i) {
                float* row = P + static_cast<int64_t>(i) * Lk;
                int lim = causal ? i + 1 : Lk;
                float m = -std::numeric_limits<float>::infinity();
                for (int j = 0; j < lim; ++j) {
                    row[j] *= scl;
                    m = std::max(m, row[j]);
                }
                double z = 0.0;
                for (int j = 0; j < lim; ++j) z += std::exp(static_cast<double>(row[j]) - m);
                for (int j = 0; j < lim; ++j)
                    row[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - m) / z);
                for (int j = lim; j < Lk; ++j) row[j] = 0.0f;
            }
            gemm(P, V, po + static_cast<int64_t>(g) * Lq * dh, Lq, Lk, dh);
        }
    }
    bool ng = t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(v);
    Id id = t.emit(std::move(out), ng, nullptr);
    if (ng) {
        t.node(id).backward = [&t, id, q, k, v, probs, G, Lq, Lk, dh, scl]() {
            const Tensor& g = t.node(id).grad;
            const float* pg = g.data();
            const float* pq = t.val(q).data();
            const float* pk = t.val(k).data();
            const float* pv = t.val(v).data();
            const float* pp = probs->data();
            float* gq = t.needs_grad(q) ? t.grad(q).data() : nullptr;
            float* gk = t.needs_grad(k) ? t.grad(k).data() : nullptr;
            float* gv = t.needs_grad(v) ? t.grad(v).data() : nullptr;
#pragma omp parallel for schedule(static)
            for (int gi = 0; gi < G; ++gi) {
                const float* dO = pg + static_cast<int64_t>(gi) * Lq * dh;
                const float* Q = pq + static_cast<int64_t>(gi) * Lq * dh;
                const float* K = pk + static_cast<int64_t>(gi) * Lk * dh;
                const float* V = pv + static_cast<int64_t>(gi) * Lk * dh;
                const float* P = pp + static_cast<int64_t>(gi) * Lq * Lk;
                if (gv) {
                    gemm(P, dO, gv + static_cast<int64_t>(gi) * Lk * dh, Lk, Lq, dh, true,
                         false, 1.0f);
                }
                if (gq || gk) {
                    std::vector<float> dP(static_cast<size_t>(Lq) * Lk);
                    gemm(dO, V, dP.data(), Lq, dh, Lk, false, true);
                    // dS = P .* (dP - rowsum(dP .* P)), then fold in the scale.
                    for (int i = 0; i < Lq; ++i) {
                        const float* prow = P + static_cast<int64_t>(i) * Lk;
                        float* drow = dP.data() + static_cast<int64_t>(i) * Lk;
                        double dot = 0.0;
                        for (int j = 0; j < Lk; ++j) dot += drow[j] * prow[j];
                        for (int j = 0; j < Lk; ++j)
                            drow[j] = prow[j] * (drow[j] - static_cast<float>(dot)) * scl;
                    }
                    if (gq)
                        gemm(dP.data(), K, gq + static_cast<int64_t>(gi) * Lq * dh, Lq, Lk,
                             dh, false, false, 1.0f);
                    if (gk)
                        gemm(dP.data(), Q, gk + static_cast<int64_t>(gi) * Lk * dh, Lk, Lq,
                             dh, true, false, 1.0f);
                }
            }
        };
    }
    return id;
}

}  // namespace occluscat::ag
