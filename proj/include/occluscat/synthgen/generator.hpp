#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "occluscat/clip.hpp"
#include "occluscat/core/rng.hpp"
#include "occluscat/synthgen/shapes.hpp"

namespace occluscat::synth {

// Class ids: background and object. Desk default m = 2.
constexpr int kClassBackground = 0;
constexpr int kClassObject = 1;

// Instance order is fixed: background, occluder, mover (class rank, then id).
constexpr int kInstBackground = 0;
constexpr int kInstOccluder = 1;
constexpr int kInstMover = 2;

struct ClipSpec {
    int height = 64, width = 64, frames = 20;
    Shape occluder;
    double occluder_h = 32.0, occluder_w = 32.0;  // fixed for all frames
    Shape mover;
    double mover_h0 = 32.0, mover_w0 = 0.0;  // position at t=0
    double mover_vh = 0.0, mover_vw = 2.0;   // per-frame velocity (px/frame)
    int mover_rank = 1, occluder_rank = 2;   // larger = nearer; background 0
    int track_grid_stride = 8;
    std::array<float, 3> background_color{0.1f, 0.1f, 0.1f};
    uint64_t seed = 0;

    void validate() const {
        check(height > 0 && width > 0 && frames > 0, "ClipSpec: empty dimensions");
        check(track_grid_stride > 0 && track_grid_stride <= std::min(height, width),
              "ClipSpec: track_grid_stride out of range");
        check(mover_rank != occluder_rank && mover_rank >= 1 && occluder_rank >= 1,
              "ClipSpec: layer ranks must be distinct object ranks");
    }

    double mover_h(int t) const { return mover_h0 + t * mover_vh; }
    double mover_w(int t) const { return mover_w0 + t * mover_vw; }

    SceneState scene_at(int t) const {
        SceneState s;
        s.height = height;
        s.width = width;
        s.layers.push_back({occluder, occluder_h, occluder_w, occluder_rank});
        s.layers.push_back({mover, mover_h(t), mover_w(t), mover_rank});
        return s;
    }
};

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct ValidationReport {
    std::vector<CheckResult> checks;
    bool all_pass() const {
        for (const CheckResult& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

namespace detail {

// Index of the visible (nearest covering) instance at an analytic position.
inline int visible_instance_at(const ClipSpec& spec, int t, double h, double w) {
    bool occ = spec.occluder.contains(spec.occluder_h, spec.occluder_w, h, w);
    bool mov = spec.mover.contains(spec.mover_h(t), spec.mover_w(t), h, w);
    if (occ && mov) return spec.occluder_rank > spec.mover_rank ? kInstOccluder : kInstMover;
    if (occ) return kInstOccluder;
    if (mov) return kInstMover;
    return kInstBackground;
}

}  // namespace detail

// Procedurally renders one occlusion clip with exact ground truth. Rejects
// specs whose mover is never fully occluded while inside the frame.
inline Clip generate_clip(const ClipSpec& spec) {
    spec.validate();
    Clip clip;
    clip.frames = spec.frames;
    clip.height = spec.height;
    clip.width = spec.width;
    clip.num_instances = 3;
    clip.classes = {kClassBackground, kClassObject, kClassObject};
    clip.allocate();

    const int H = spec.height, W = spec.width, T = spec.frames;
    bool occluded_in_frame = false;
    std::vector<int64_t> mover_area(T, 0);
    for (int t = 0; t < T; ++t) {
        SceneState scene = spec.scene_at(t);
        std::vector<float> depth = render_depth(scene);
        std::copy(depth.begin(), depth.end(), clip.depth_frame(t));
        float* rgb = clip.rgb_frame(t);
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                int inst = detail::visible_instance_at(spec, t, r + 0.5, c + 0.5);
                clip.mask(inst, t)[r * W + c] = 1;
                const float* color = inst == kInstOccluder ? spec.occluder.color.data()
                                     : inst == kInstMover ? spec.mover.color.data()
                                                          : spec.background_color.data();
                for (int ch = 0; ch < 3; ++ch) rgb[(r * W + c) * 3 + ch] = color[ch];
            }
        }
        mover_area[t] = clip.mask_area(kInstMover, t);
        double mh = spec.mover_h(t), mw = spec.mover_w(t);
        bool center_in_frame = mh >= 0.0 && mh < H && mw >= 0.0 && mw < W;
        if (mover_area[t] == 0 && center_in_frame) occluded_in_frame = true;
    }
    if (!occluded_in_frame)
        throw ConfigError(
            "generate_clip: mover is never fully occluded inside the frame; "
            "trajectory does not pass behind the occluder");

    // Query points on a regular grid at cell centers; each follows its owning
    // object rigidly, with exact positions kept while occluded.
    clip.tracks.frames = T;
    double half = spec.track_grid_stride * 0.5;
    for (int gi = 0; gi * spec.track_grid_stride + half < H; ++gi) {
        for (int gj = 0; gj * spec.track_grid_stride + half < W; ++gj) {
            double h0 = gi * spec.track_grid_stride + half;
            double w0 = gj * spec.track_grid_stride + half;
            PointTrack p;
            p.object_id = detail::visible_instance_at(spec, 0, h0, w0);
            p.pos.resize(T);
            p.vis.resize(T);
            double vh = p.object_id == kInstMover ? spec.mover_vh : 0.0;
            double vw = p.object_id == kInstMover ? spec.mover_vw : 0.0;
            int own_rank = p.object_id == kInstBackground ? 0
                           : p.object_id == kInstOccluder ? spec.occluder_rank
                                                          : spec.mover_rank;
            for (int t = 0; t < T; ++t) {
                double h = h0 + t * vh, w = w0 + t * vw;
                p.pos[t] = {h, w};
                bool in_frame = h >= 0.0 && h < H && w >= 0.0 && w < W;
                bool covered = false;
                if (p.object_id != kInstOccluder && spec.occluder_rank > own_rank)
                    covered = spec.occluder.contains(spec.occluder_h, spec.occluder_w, h, w);
                if (!covered && p.object_id != kInstMover && spec.mover_rank > own_rank)
                    covered = spec.mover.contains(spec.mover_h(t), spec.mover_w(t), h, w);
                p.vis[t] = (in_frame && !covered) ? 1 : 0;
            }
            clip.tracks.points.push_back(std::move(p));
        }
    }
    clip.tracks.validate();
    return clip;
}

// Report-only structural validation of a Clip's invariants.
inline ValidationReport verify_clip(const Clip& clip) {
    ValidationReport rep;
    const int64_t hw = clip.hw();

    // Partition: exactly one instance mask set per pixel per frame.
    {
        bool ok = true;
        std::string detail;
        for (int t = 0; t < clip.frames && ok; ++t) {
            for (int64_t i = 0; i < hw && ok; ++i) {
                int cover = 0;
                for (int k = 0; k < clip.num_instances; ++k) cover += clip.mask(k, t)[i];
                if (cover != 1) {
                    ok = false;
                    detail = "pixel " + std::to_string(i) + " at t=" + std::to_string(t) +
                             " covered by " + std::to_string(cover) + " masks";
                }
            }
        }
        rep.checks.push_back({"mask_partition", ok, detail});
    }

    // Additivity: sum of masked instances reproduces the frame exactly.
    {
        bool ok = true;
        std::string detail;
        for (int t = 0; t < clip.frames && ok; ++t) {
            const float* rgb = clip.rgb_frame(t);
            for (int64_t i = 0; i < hw && ok; ++i) {
                for (int ch = 0; ch < 3; ++ch) {
                    float sum = 0.0f;
                    for (int k = 0; k < clip.num_instances; ++k)
                        sum += clip.mask(k, t)[i] * rgb[i * 3 + ch];
                    if (sum != rgb[i * 3 + ch]) {
                        ok = false;
                        detail = "additivity broken at t=" + std::to_string(t);
                        break;
                    }
                }
            }
        }
        rep.checks.push_back({"rgb_additivity", ok, detail});
    }

    // Occlusion event: some object instance vanishes and then reappears.
    {
        bool ok = false;
        for (int k = 0; k < clip.num_instances && !ok; ++k) {
            if (clip.classes[k] == kClassBackground) continue;
            bool seen_before = false;
            for (int t = 0; t < clip.frames; ++t) {
                int64_t area = clip.mask_area(k, t);
                if (area > 0 && !seen_before) seen_before = true;
                else if (area == 0 && seen_before) {
                    for (int t2 = t + 1; t2 < clip.frames; ++t2)
                        if (clip.mask_area(k, t2) > 0) { ok = true; break; }
                    break;
                }
            }
        }
        rep.checks.push_back({"occlusion_event", ok,
                              ok ? "" : "no instance disappears and reappears"});
    }

    // Visibility consistency: a visible point's pixel belongs to (or touches
    // the boundary of) its object's mask; an invisible in-frame point must
    // not sit strictly inside its object's visible mask.
    {
        bool ok = true;
        std::string detail;
        auto in_mask_or_boundary = [&](int k, int t, int r, int c) {
            for (int dr = -1; dr <= 1 && r + dr >= 0; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= clip.height || cc < 0 || cc >= clip.width) continue;
                    if (clip.mask(k, t)[rr * clip.width + cc]) return true;
                }
            return false;
        };
        auto strictly_inside = [&](int k, int t, int r, int c) {
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= clip.height || cc < 0 || cc >= clip.width) return false;
                    if (!clip.mask(k, t)[rr * clip.width + cc]) return false;
                }
            return true;
        };
        for (const PointTrack& p : clip.tracks.points) {
            if (p.object_id < 0) continue;
            for (int t = 0; t < clip.frames && ok; ++t) {
                double h = p.pos[t][0], w = p.pos[t][1];
                bool in_frame = h >= 0 && h < clip.height && w >= 0 && w < clip.width;
                if (p.vis[t] && !in_frame) {
                    ok = false;
                    detail = "visible point outside frame";
                    break;
                }
                if (!in_frame) continue;
                int r = static_cast<int>(h), c = static_cast<int>(w);
                if (p.vis[t] && !in_mask_or_boundary(p.object_id, t, r, c)) {
                    ok = false;
                    detail = "visible point far from its object mask at t=" + std::to_string(t);
                } else if (!p.vis[t] && strictly_inside(p.object_id, t, r, c)) {
                    ok = false;
                    detail = "occluded point strictly inside its visible mask at t=" +
                             std::to_string(t);
                }
            }
            if (!ok) break;
        }
        rep.checks.push_back({"visibility_consistency", ok, detail});
    }

    return rep;
}

}  // namespace occluscat::synth
