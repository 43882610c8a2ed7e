#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "occluscat/core/common.hpp"
#include "occluscat/core/rng.hpp"

namespace occluscat::metrics {

// Sparse optimal transport plan; basic solutions carry at most m+n-1 arcs.
struct TransportPlan {
    int m = 0, n = 0;
    struct Entry {
        int i, j;
        double mass;
    };
    std::vector<Entry> entries;

    std::vector<double> row_sums() const {
        std::vector<double> r(static_cast<size_t>(m), 0.0);
        for (const Entry& e : entries) r[static_cast<size_t>(e.i)] += e.mass;
        return r;
    }
    std::vector<double> col_sums() const {
        std::vector<double> c(static_cast<size_t>(n), 0.0);
        for (const Entry& e : entries) c[static_cast<size_t>(e.j)] += e.mass;
        return c;
    }
    double max_marginal_violation(const std::vector<double>& a,
                                  const std::vector<double>& b) const {
        double worst = 0.0;
        std::vector<double> r = row_sums(), c = col_sums();
        for (int i = 0; i < m; ++i) worst = std::max(worst, std::abs(r[static_cast<size_t>(i)] - a[static_cast<size_t>(i)]));
        for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(c[static_cast<size_t>(j)] - b[static_cast<size_t>(j)]));
        return worst;
    }
};

struct OtResult {
    double cost = 0.0;
    TransportPlan plan;
};

// Exact discrete optimal transport by successive shortest augmenting paths
// with node potentials (Dijkstra on reduced costs, early exit at the first
// unsaturated sink). cost is a dense row-major m x n matrix.
inline OtResult exact_ot(const std::vector<double>& a, const std::vector<double>& b,
                         const std::vector<double>& cost) {
    const int m = static_cast<int>(a.size());
    const int n = static_cast<int>(b.size());
    check(m > 0 && n > 0, "exact_ot: empty marginals");
    check(cost.size() == static_cast<size_t>(m) * n, "exact_ot: cost size mismatch");
    double sa = 0.0, sb = 0.0;
    for (double v : a) {
        check(v >= 0.0, "exact_ot: negative weight");
        sa += v;
    }
    for (double v : b) {
        check(v >= 0.0, "exact_ot: negative weight");
        sb += v;
    }
    check(std::abs(sa - 1.0) <= 1e-9 && std::abs(sb - 1.0) <= 1e-9,
          "exact_ot: weights must sum to 1 within 1e-9");
    for (double v : cost) check(v >= 0.0 && std::isfinite(v), "exact_ot: bad cost entry");

    const int nodes = m + n;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> supply(a), demand(b);
    std::vector<double> pot(static_cast<size_t>(nodes), 0.0);
    // Sparse flow: per (source) a list of (sink, amount); per sink a list of
    // candidate sources for residual arcs (lazily pruned).
    std::vector<std::vector<std::pair<int, double>>> flow(static_cast<size_t>(m));
    std::vector<std::vector<int>> sink_sources(static_cast<size_t>(n));

    auto flow_ref = [&](int i, int j) -> double& {
        for (auto& [jj, amt] : flow[static_cast<size_t>(i)])
            if (jj == j) return amt;
        flow[static_cast<size_t>(i)].push_back({j, 0.0});
        sink_sources[static_cast<size_t>(j)].push_back(i);
        return flow[static_cast<size_t>(i)].back().second;
    };
    auto flow_val = [&](int i, int j) -> double {
        for (auto& [jj, amt] : flow[static_cast<size_t>(i)])
            if (jj == j) return amt;
        return 0.0;
    };

    std::vector<double> dist(static_cast<size_t>(nodes));
    std::vector<int> parent(static_cast<size_t>(nodes));
    std::vector<char> settled(static_cast<size_t>(nodes));

    int source = 0;
    while (true) {
        while (source < m && supply[static_cast<size_t>(source)] <= 0.0) ++source;
        if (source == m) break;

        // Dijkstra from `source` over reduced costs.
        std::fill(dist.begin(), dist.end(), inf);
        std::fill(parent.begin(), parent.end(), -1);
        std::fill(settled.begin(), settled.end(), 0);
        using QE = std::pair<double, int>;
        std::priority_queue<QE, std::vector<QE>, std::greater<QE>> pq;
        dist[static_cast<size_t>(source)] = 0.0;
        pq.push({0.0, source});
        int target = -1;
        while (!pq.empty()) {
            auto [d, u] = pq.top();
            pq.pop();
            if (settled[static_cast<size_t>(u)]) continue;
            settled[static_cast<size_t>(u)] = 1;
            if (u >= m && demand[static_cast<size_t>(u - m)] > 0.0) {
                target = u - m;
                break;
            }
            if (u < m) {
                // Forward arcs to every sink.
                const double* crow = cost.data() + static_cast<int64_t>(u) * n;
                double pu = pot[static_cast<size_t>(u)];
                for (int j = 0; j < n; ++j) {
                    int v = m + j;
                    if (settled[static_cast<size_t>(v)]) continue;
                    double rc = crow[j] + pu - pot[static_cast<size_t>(v)];
                    double nd = d + rc;
                    if (nd < dist[static_cast<size_t>(v)]) {
                        dist[static_cast<size_t>(v)] = nd;
                        parent[static_cast<size_t>(v)] = u;
                        pq.push({nd, v});
                    }
                }
            } else {
                // Residual arcs back to sources with positive flow.
                int j = u - m;
                auto& cands = sink_sources[static_cast<size_t>(j)];
                size_t keep = 0;
                for (size_t s = 0; s < cands.size(); ++s) {
                    int i = cands[s];
                    double f = flow_val(i, j);
                    if (f <= 0.0) continue;  // prune dead arcs
                    cands[keep++] = i;
                    if (settled[static_cast<size_t>(i)]) continue;
                    double rc = -cost[static_cast<size_t>(i) * n + j] +
                                pot[static_cast<size_t>(u)] - pot[static_cast<size_t>(i)];
                    double nd = d + rc;
                    if (nd < dist[static_cast<size_t>(i)]) {
                        dist[static_cast<size_t>(i)] = nd;
                        parent[static_cast<size_t>(i)] = u;
                        pq.push({nd, i});
                    }
                }
                cands.resize(keep);
            }
        }
        check(target >= 0, "exact_ot: no augmenting path (marginals inconsistent)");

        // Potential update keeps reduced costs nonnegative with early exit.
        double dt = dist[static_cast<size_t>(m + target)];
        for (int v = 0; v < nodes; ++v)
            pot[static_cast<size_t>(v)] += std::min(dist[static_cast<size_t>(v)], dt);

        // Bottleneck along the alternating path.
        double amount = std::min(supply[static_cast<size_t>(source)],
                                 demand[static_cast<size_t>(target)]);
        for (int v = m + target; parent[static_cast<size_t>(v)] != -1;
             v = parent[static_cast<size_t>(v)]) {
            int u = parent[static_cast<size_t>(v)];
            if (u >= m)  // residual arc sink->source: bounded by its flow
                amount = std::min(amount, flow_val(v, u - m));
        }
        for (int v = m + target; parent[static_cast<size_t>(v)] != -1;
             v = parent[static_cast<size_t>(v)]) {
            int u = parent[static_cast<size_t>(v)];
            if (u < m)
                flow_ref(u, v - m) += amount;
            else
                flow_ref(v, u - m) -= amount;
        }
        supply[static_cast<size_t>(source)] -= amount;
        demand[static_cast<size_t>(target)] -= amount;
        if (supply[static_cast<size_t>(source)] < 1e-15) supply[static_cast<size_t>(source)] = 0.0;
        if (demand[static_cast<size_t>(target)] < 1e-15) demand[static_cast<size_t>(target)] = 0.0;
    }

    OtResult res;
    res.plan.m = m;
    res.plan.n = n;
    for (int i = 0; i < m; ++i)
        for (auto& [j, amt] : flow[static_cast<size_t>(i)])
            if (amt > 0.0) {
                res.plan.entries.push_back({i, j, amt});
                res.cost += amt * cost[static_cast<size_t>(i) * n + j];
            }
    return res;
}

// --- Earth Mover's Distance between binary masks ---

using PixelSet = std::vector<std::pair<int, int>>;  // (row, col)

inline PixelSet mask_support(const uint8_t* mask, int height, int width) {
    PixelSet pts;
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            if (mask[static_cast<int64_t>(r) * width + c]) pts.push_back({r, c});
    return pts;
}

struct EmdConfig {
    bool normalize = true;  // divide coordinates by (H, W)
    int max_support = 256;  // exact when |P|*|G| <= max_support^2
    uint64_t seed = 0x5EEDull;
};

// Wasserstein-1 between uniform distributions over two pixel sets, solved
// exactly on small supports and on a seeded uniform subsample otherwise.
// Argument order is canonicalized so the metric is exactly symmetric.
inline double emd_masks(const PixelSet& mask_p, const PixelSet& mask_g, int height, int width,
                        const EmdConfig& cfg = EmdConfig()) {
    check(!mask_p.empty() && !mask_g.empty(),
          "emd_masks: empty mask (apply the fallback before calling)");
    const PixelSet* first = &mask_p;
    const PixelSet* second = &mask_g;
    if (std::make_pair(second->size(), *second) < std::make_pair(first->size(), *first))
        std::swap(first, second);

    PixelSet ps = *first, gs = *second;
    if (static_cast<int64_t>(ps.size()) * static_cast<int64_t>(gs.size()) >
        static_cast<int64_t>(cfg.max_support) * cfg.max_support) {
        auto subsample = [&](PixelSet& s, uint64_t stream) {
            if (static_cast<int>(s.size()) <= cfg.max_support) return;
            Rng rng(hash_combine(cfg.seed, stream));
            std::vector<int> pick =
                rng.sample_without_replacement(static_cast<int>(s.size()), cfg.max_support);
            std::sort(pick.begin(), pick.end());
            PixelSet out;
            out.reserve(static_cast<size_t>(cfg.max_support));
            for (int i : pick) out.push_back(s[static_cast<size_t>(i)]);
            s = std::move(out);
        };
        subsample(ps, 1);
        subsample(gs, 2);
    }

    const int m = static_cast<int>(ps.size()), n = static_cast<int>(gs.size());
    std::vector<double> a(static_cast<size_t>(m), 1.0 / m);
    std::vector<double> b(static_cast<size_t>(n), 1.0 / n);
    double sh = cfg.normalize ? 1.0 / height : 1.0;
    double sw = cfg.normalize ? 1.0 / width : 1.0;
    std::vector<double> cost(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        double ph = ps[static_cast<size_t>(i)].first * sh;
        double pw = ps[static_cast<size_t>(i)].second * sw;
        for (int j = 0; j < n; ++j) {
            double dh = ph - gs[static_cast<size_t>(j)].first * sh;
            double dw = pw - gs[static_cast<size_t>(j)].second * sw;
            cost[static_cast<size_t>(i) * n + j] = std::sqrt(dh * dh + dw * dw);
        }
    }
    return exact_ot(a, b, cost).cost;
}

}  // namespace occluscat::metrics
