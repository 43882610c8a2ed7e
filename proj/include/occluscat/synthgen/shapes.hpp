#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "occluscat/core/common.hpp"

namespace occluscat::synth {

enum class ShapeKind { Rect, Disk, Triangle };

inline std::string to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::Rect: return "rect";
        case ShapeKind::Disk: return "disk";
        case ShapeKind::Triangle: return "triangle";
    }
    return "?";
}

inline ShapeKind shape_kind_from(const std::string& s) {
    if (s == "rect") return ShapeKind::Rect;
    if (s == "disk") return ShapeKind::Disk;
    if (s == "triangle") return ShapeKind::Triangle;
    throw ConfigError("unknown shape kind: " + s);
}

// A rigid 2D shape. `size` is the half-extent in pixels (radius for disks).
// Geometry parameters are kept dyadic so per-frame positions and
// displacements are exact in floating point.
struct Shape {
    ShapeKind kind = ShapeKind::Rect;
    double size = 8.0;
    std::array<float, 3> color{1.0f, 1.0f, 1.0f};

    // Containment test against the shape centered at (ch, cw). Boundaries are
    // inclusive; no anti-aliasing anywhere, so rasterized masks are exact.
    bool contains(double ch, double cw, double h, double w) const {
        double dh = h - ch, dw = w - cw;
        switch (kind) {
            case ShapeKind::Rect:
                return std::abs(dh) <= size && std::abs(dw) <= size;
            case ShapeKind::Disk:
                return dh * dh + dw * dw <= size * size;
            case ShapeKind::Triangle:
                // Isoceles, apex up: apex (ch-size, cw), base corners (ch+size, cw +- size).
                if (dh < -size || dh > size) return false;
                return std::abs(dw) <= 0.5 * (dh + size);
        }
        return false;
    }
};

// One positioned layer of a scene at a fixed instant.
struct LayerState {
    Shape shape;
    double ch = 0.0, cw = 0.0;  // center
    int rank = 1;               // depth rank; larger = nearer; background is 0
};

// Scene = implicit background (rank 0) plus object layers with distinct ranks.
struct SceneState {
    int height = 0, width = 0;
    std::vector<LayerState> layers;
};

// Per-pixel depth: each pixel takes the value of the nearest covering layer;
// ranks map to evenly spaced values with background 0.0 and the nearest
// object layer 1.0.
inline std::vector<float> render_depth(const SceneState& scene) {
    int max_rank = 0;
    for (const LayerState& l : scene.layers) {
        check(l.rank >= 1, "render_depth: object layer rank must be >= 1");
        max_rank = std::max(max_rank, l.rank);
    }
    for (size_t i = 0; i < scene.layers.size(); ++i)
        for (size_t j = i + 1; j < scene.layers.size(); ++j)
            check(scene.layers[i].rank != scene.layers[j].rank,
                  "render_depth: layer ranks must be disjoint");
    std::vector<float> depth(static_cast<size_t>(scene.height) * scene.width, 0.0f);
    for (int r = 0; r < scene.height; ++r) {
        for (int c = 0; c < scene.width; ++c) {
            double h = r + 0.5, w = c + 0.5;
            int best = 0;
            for (const LayerState& l : scene.layers)
                if (l.rank > best && l.shape.contains(l.ch, l.cw, h, w)) best = l.rank;
            depth[static_cast<size_t>(r) * scene.width + c] =
                best == 0 ? 0.0f : static_cast<float>(best) / static_cast<float>(max_rank);
        }
    }
    return depth;
}

}  // namespace occluscat::synth
