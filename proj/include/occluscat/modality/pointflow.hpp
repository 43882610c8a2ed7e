#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "occluscat/core/common.hpp"
#include "occluscat/modality/tracks.hpp"

namespace occluscat::modality {

// Displacement tensor rasterized from point tracks: channels are
// (dh, dw, visibility) at each point's current grid cell. t=0 cells hold
// (0, 0, 1); cells without a point hold (0, 0, 0).
struct PointFlowGrid {
    int frames = 0, height = 0, width = 0;
    std::vector<float> values;       // (T, H, W, 3)
    std::vector<uint8_t> occupancy;  // (T, H, W)

    const float* cell(int t, int r, int c) const {
        return values.data() + ((static_cast<int64_t>(t) * height + r) * width + c) * 3;
    }
    bool occupied(int t, int r, int c) const {
        return occupancy[(static_cast<int64_t>(t) * height + r) * width + c] != 0;
    }
    int64_t occupied_count(int t) const {
        int64_t n = 0;
        const uint8_t* o = occupancy.data() + static_cast<int64_t>(t) * height * width;
        for (int64_t i = 0; i < static_cast<int64_t>(height) * width; ++i) n += o[i];
        return n;
    }
    const float* slice(int t) const {
        return values.data() + static_cast<int64_t>(t) * height * width * 3;
    }
};

namespace detail {

// Nearest integer, half up; out-of-frame positions clamp to the border cell.
inline int round_clamp(double v, int limit) {
    int i = static_cast<int>(std::floor(v + 0.5));
    if (i < 0) return 0;
    if (i >= limit) return limit - 1;
    return i;
}

struct CellAccum {
    double dh = 0.0, dw = 0.0;
    int count = 0;
    bool visible = false;
};

}  // namespace detail

// Rasterizes one frame of displacements at the points' current positions,
// channel-interleaved into out3 (H, W, 3). object_id -1 takes every point,
// otherwise only that object's points. Collision rule: a visible point wins
// over invisible ones; ties among same-visibility points average.
inline void rasterize_flow_frame(const PointTrackSet& tracks, int t, int height, int width,
                                 int object_id, float* out3, uint8_t* occupancy) {
    std::vector<detail::CellAccum> acc(static_cast<size_t>(height) * width);
    for (const PointTrack& p : tracks.points) {
        if (object_id >= 0 && p.object_id != object_id) continue;
        int r = detail::round_clamp(p.pos[t][0], height);
        int c = detail::round_clamp(p.pos[t][1], width);
        double dh = t == 0 ? 0.0 : p.pos[t][0] - p.pos[t - 1][0];
        double dw = t == 0 ? 0.0 : p.pos[t][1] - p.pos[t - 1][1];
        bool vis = p.vis[t] != 0;
        detail::CellAccum& a = acc[static_cast<size_t>(r) * width + c];
        if (a.count == 0 || vis == a.visible) {
            a.dh += dh;
            a.dw += dw;
            a.count += 1;
            a.visible = a.visible || vis;
        } else if (vis && !a.visible) {
            a = {dh, dw, 1, true};  // visible point evicts invisible ones
        }
        // an invisible point landing on a visible cell is dropped
    }
    for (int64_t i = 0; i < static_cast<int64_t>(height) * width; ++i) {
        const detail::CellAccum& a = acc[static_cast<size_t>(i)];
        if (a.count == 0) {
            out3[i * 3] = out3[i * 3 + 1] = out3[i * 3 + 2] = 0.0f;
            if (occupancy) occupancy[i] = 0;
            continue;
        }
        out3[i * 3] = static_cast<float>(a.dh / a.count);
        out3[i * 3 + 1] = static_cast<float>(a.dw / a.count);
        out3[i * 3 + 2] = a.visible ? 1.0f : 0.0f;
        if (occupancy) occupancy[i] = 1;
    }
}

inline PointFlowGrid compute_point_flow(const PointTrackSet& tracks, int height, int width,
                                        int frames) {
    check(tracks.frames == frames, "compute_point_flow: frame count mismatch");
    tracks.validate();
    PointFlowGrid grid;
    grid.frames = frames;
    grid.height = height;
    grid.width = width;
    grid.values.assign(static_cast<size_t>(frames) * height * width * 3, 0.0f);
    grid.occupancy.assign(static_cast<size_t>(frames) * height * width, 0);
    for (int t = 0; t < frames; ++t) {
        rasterize_flow_frame(
            tracks, t, height, width, -1,
            grid.values.data() + static_cast<int64_t>(t) * height * width * 3,
            grid.occupancy.data() + static_cast<int64_t>(t) * height * width);
    }
    return grid;
}

}  // namespace occluscat::modality
