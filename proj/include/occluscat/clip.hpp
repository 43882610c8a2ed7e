#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "occluscat/core/common.hpp"
#include "occluscat/modality/tracks.hpp"

namespace occluscat {

// A video sample with exact ground-truth modalities. RGB values are stored as
// k/255 so the 8-bit on-disk round trip is bitwise lossless. Instance masks
// partition every frame (background is instance 0), which makes the additive
// frame decomposition exact.
struct Clip {
    std::string clip_id;
    int frames = 0, height = 0, width = 0;
    int num_instances = 0;
    std::vector<float> rgb;      // (T, H, W, 3)
    std::vector<uint8_t> masks;  // (I, T, H, W), {0,1}
    std::vector<float> depth;    // (T, H, W), [0,1], larger = nearer
    PointTrackSet tracks;
    std::vector<int> classes;  // per-instance semantic class id

    int64_t hw() const { return static_cast<int64_t>(height) * width; }

    const float* rgb_frame(int t) const { return rgb.data() + static_cast<int64_t>(t) * hw() * 3; }
    float* rgb_frame(int t) { return rgb.data() + static_cast<int64_t>(t) * hw() * 3; }

    const uint8_t* mask(int k, int t) const {
        return masks.data() + (static_cast<int64_t>(k) * frames + t) * hw();
    }
    uint8_t* mask(int k, int t) {
        return masks.data() + (static_cast<int64_t>(k) * frames + t) * hw();
    }

    const float* depth_frame(int t) const { return depth.data() + static_cast<int64_t>(t) * hw(); }
    float* depth_frame(int t) { return depth.data() + static_cast<int64_t>(t) * hw(); }

    bool has_depth() const { return !depth.empty(); }
    bool has_tracks() const { return !tracks.points.empty(); }

    int64_t mask_area(int k, int t) const {
        const uint8_t* m = mask(k, t);
        int64_t a = 0;
        for (int64_t i = 0; i < hw(); ++i) a += m[i];
        return a;
    }

    void allocate() {
        rgb.assign(static_cast<size_t>(frames) * hw() * 3, 0.0f);
        masks.assign(static_cast<size_t>(num_instances) * frames * hw(), 0);
        depth.assign(static_cast<size_t>(frames) * hw(), 0.0f);
    }
};

}  // namespace occluscat
