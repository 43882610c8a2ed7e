#pragma once

#include <string>
#include <vector>

#include "occluscat/clip.hpp"
#include "occluscat/core/common.hpp"
#include "occluscat/modality/pointflow.hpp"

namespace occluscat::modality {

// The four input configurations of the model family.
struct VariantConfig {
    bool use_depth = false;
    bool use_pointflow = false;

    int channels() const { return 3 + (use_depth ? 1 : 0) + (use_pointflow ? 3 : 0); }

    std::string name() const {
        if (use_depth && use_pointflow) return "SCAT-PD";
        if (use_pointflow) return "SCAT-P";
        if (use_depth) return "SCAT-D";
        return "SCAT";
    }

    static VariantConfig from_name(const std::string& s) {
        if (s == "SCAT") return {false, false};
        if (s == "SCAT-D") return {true, false};
        if (s == "SCAT-P") return {false, true};
        if (s == "SCAT-PD") return {true, true};
        throw ConfigError("unknown variant: " + s +
                          " (expected SCAT|SCAT-P|SCAT-D|SCAT-PD)");
    }
};

// How per-instance point-flow is assigned. ObjectIdentity keeps an occluded
// object's points with that object; MaskContainment follows the segmentation
// map (which hands occluded points to the occluder).
enum class PointAssignPolicy { ObjectIdentity, MaskContainment };

// One masked instance with its per-instance modalities, all planar (C, H, W).
struct InstanceEntry {
    int instance_id = 0;
    int class_id = 0;
    std::vector<float> rgb;        // (3, H, W), zero outside the mask
    std::vector<uint8_t> mask;     // (H, W)
    std::vector<float> depth;      // (H, W); empty when unavailable
    std::vector<float> pointflow;  // (3, H, W); empty when unavailable
};

struct InstanceSet {
    int height = 0, width = 0;
    std::vector<InstanceEntry> instances;
};

// Each instance's modality channels stacked in fixed order:
// RGB, depth, (dh, dw, v).
struct ModalityStack {
    int channels = 0, height = 0, width = 0;
    VariantConfig variant;
    std::vector<float> values;  // (C, H, W)
};

// Affine map of a raw depth map into [0,1]; constant input maps to zero.
inline std::vector<float> normalize_depth(const std::vector<float>& raw, float min_v,
                                          float max_v) {
    check(max_v >= min_v, "normalize_depth: max < min");
    std::vector<float> out(raw.size(), 0.0f);
    if (max_v == min_v) return out;  // degenerate-input rule
    float inv = 1.0f / (max_v - min_v);
    for (size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - min_v) * inv;
    return out;
}

// Splits frame t of a clip into masked per-instance images plus per-instance
// depth and point-flow. Masks must partition the frame. Point-flow follows
// object identity when tracks carry object ids (the default), otherwise the
// full-frame slice is split by mask containment.
inline InstanceSet decompose_instances(
    const Clip& clip, int t, bool want_depth, bool want_pointflow,
    PointAssignPolicy policy = PointAssignPolicy::ObjectIdentity,
    const PointFlowGrid* full_grid = nullptr) {
    const int H = clip.height, W = clip.width;
    const int64_t hw = clip.hw();
    // Partition precondition.
    for (int64_t i = 0; i < hw; ++i) {
        int cover = 0;
        for (int k = 0; k < clip.num_instances; ++k) cover += clip.mask(k, t)[i];
        check(cover == 1, "decompose_instances: masks do not partition the frame");
    }

    bool identity_ok = clip.has_tracks() && !clip.tracks.points.empty() &&
                       clip.tracks.points.front().object_id >= 0;
    InstanceSet set;
    set.height = H;
    set.width = W;
    const float* frame = clip.rgb_frame(t);
    for (int k = 0; k < clip.num_instances; ++k) {
        InstanceEntry e;
        e.instance_id = k;
        e.class_id = clip.classes[k];
        const uint8_t* m = clip.mask(k, t);
        e.mask.assign(m, m + hw);
        e.rgb.assign(3 * hw, 0.0f);
        for (int64_t i = 0; i < hw; ++i) {
            if (!m[i]) continue;
            for (int ch = 0; ch < 3; ++ch) e.rgb[ch * hw + i] = frame[i * 3 + ch];
        }
        if (want_depth) {
            check(clip.has_depth(), "decompose_instances: depth requested but absent");
            const float* d = clip.depth_frame(t);
            e.depth.assign(hw, 0.0f);
            for (int64_t i = 0; i < hw; ++i) e.depth[i] = m[i] ? d[i] : 0.0f;
        }
        if (want_pointflow) {
            e.pointflow.assign(3 * hw, 0.0f);
            if (policy == PointAssignPolicy::ObjectIdentity && identity_ok) {
                std::vector<float> plane(hw * 3);
                rasterize_flow_frame(clip.tracks, t, H, W, k, plane.data(), nullptr);
                for (int64_t i = 0; i < hw; ++i)
                    for (int ch = 0; ch < 3; ++ch)
                        e.pointflow[ch * hw + i] = plane[i * 3 + ch];
            } else {
                check(full_grid != nullptr || clip.has_tracks(),
                      "decompose_instances: point-flow requested but no tracks");
                PointFlowGrid local;
                const PointFlowGrid* g = full_grid;
                if (!g) {
                    local = compute_point_flow(clip.tracks, H, W, clip.frames);
                    g = &local;
                }
                const float* plane = g->slice(t);
                for (int64_t i = 0; i < hw; ++i) {
                    if (!m[i]) continue;
                    for (int ch = 0; ch < 3; ++ch)
                        e.pointflow[ch * hw + i] = plane[i * 3 + ch];
                }
            }
        }
        set.instances.push_back(std::move(e));
    }
    return set;
}

// Stacks an instance's modalities into the variant's channel layout.
inline ModalityStack assemble_channels(const InstanceEntry& entry, int height, int width,
                                       const VariantConfig& variant) {
    const int64_t hw = static_cast<int64_t>(height) * width;
    check(static_cast<int64_t>(entry.rgb.size()) == 3 * hw, "assemble_channels: bad rgb size");
    ModalityStack stack;
    stack.variant = variant;
    stack.height = height;
    stack.width = width;
    stack.channels = variant.channels();
    stack.values.reserve(static_cast<size_t>(stack.channels) * hw);
    stack.values.insert(stack.values.end(), entry.rgb.begin(), entry.rgb.end());
    if (variant.use_depth) {
        check(static_cast<int64_t>(entry.depth.size()) == hw,
              "assemble_channels: depth required by variant but missing");
        stack.values.insert(stack.values.end(), entry.depth.begin(), entry.depth.end());
    }
    if (variant.use_pointflow) {
        check(static_cast<int64_t>(entry.pointflow.size()) == 3 * hw,
              "assemble_channels: point-flow required by variant but missing");
        stack.values.insert(stack.values.end(), entry.pointflow.begin(),
                            entry.pointflow.end());
    }
    return stack;
}

}  // namespace occluscat::modality
