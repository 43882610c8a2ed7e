#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "occluscat/core/common.hpp"

namespace occluscat {

// One tracked query point: analytic position at every frame (kept even while
// occluded) plus a visibility flag. object_id is present for synthetic data
// and optional for ingested tracks (-1 when unknown).
struct PointTrack {
    int object_id = -1;
    std::vector<std::array<double, 2>> pos;  // (h, w) per frame
    std::vector<uint8_t> vis;                // {0,1} per frame
};

struct PointTrackSet {
    int frames = 0;
    std::vector<PointTrack> points;

    void validate() const {
        for (const PointTrack& p : points) {
            check(static_cast<int>(p.pos.size()) == frames &&
                      static_cast<int>(p.vis.size()) == frames,
                  "PointTrackSet: track length mismatch");
            if (frames > 0) check(p.vis[0] == 1, "PointTrackSet: all points must be visible at t=0");
            for (int t = 0; t < frames; ++t) {
                check(std::isfinite(p.pos[t][0]) && std::isfinite(p.pos[t][1]),
                      "PointTrackSet: non-finite position");
                check(p.vis[t] == 0 || p.vis[t] == 1, "PointTrackSet: visibility not binary");
            }
        }
    }
};

}  // namespace occluscat
