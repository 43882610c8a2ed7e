#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "occluscat/harness/clip_io.hpp"
#include "occluscat/synthgen/generator.hpp"

namespace occluscat::synth {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kDatasetFormatVersion = 1;

struct GenerationConfig {
    int n_train = 130, n_test = 50;  // desk scale; paper scale is 1300/500
    int height = 64, width = 64, frames = 20;
    int track_grid_stride = 8;
    uint64_t seed = 0;
    // Occlusion placed so the event falls inside a horizon-15 prediction
    // window after a 5-frame context.
    int occlusion_frame_min = 7, occlusion_frame_max = 13;
    int max_spec_retries = 200;

    json to_json() const {
        return json{{"n_train", n_train},
                    {"n_test", n_test},
                    {"height", height},
                    {"width", width},
                    {"frames", frames},
                    {"track_grid_stride", track_grid_stride},
                    {"seed", seed},
                    {"occlusion_frame_min", occlusion_frame_min},
                    {"occlusion_frame_max", occlusion_frame_max}};
    }
};

struct DatasetManifest {
    fs::path root;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    json config;
    int format_version = kDatasetFormatVersion;
};

namespace detail {

// Quantize to 1/8 px so positions and displacements stay exact dyadics.
inline double q8(double v) { return std::round(v * 8.0) / 8.0; }

inline std::array<float, 3> sample_color(Rng& rng, float lo, float hi) {
    auto level = [&](float v) {
        return static_cast<float>(std::lround(v * 255.0f)) / 255.0f;  // 8-bit exact
    };
    return {level(static_cast<float>(rng.uniform(lo, hi))),
            level(static_cast<float>(rng.uniform(lo, hi))),
            level(static_cast<float>(rng.uniform(lo, hi)))};
}

inline ShapeKind sample_kind(Rng& rng) {
    switch (rng.uniform_int(0, 2)) {
        case 0: return ShapeKind::Rect;
        case 1: return ShapeKind::Disk;
        default: return ShapeKind::Triangle;
    }
}

}  // namespace detail

// Draws a ClipSpec whose mover crosses behind the occluder around a sampled
// frame. Retries until generate_clip accepts it (full occlusion verified on
// the rasterized masks).
inline ClipSpec sample_clip_spec(const GenerationConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    for (int attempt = 0; attempt < cfg.max_spec_retries; ++attempt) {
        ClipSpec spec;
        spec.height = cfg.height;
        spec.width = cfg.width;
        spec.frames = cfg.frames;
        spec.track_grid_stride = cfg.track_grid_stride;
        spec.seed = seed;
        spec.background_color = detail::sample_color(rng, 0.05f, 0.25f);

        spec.occluder.kind = detail::sample_kind(rng);
        spec.occluder.size = detail::q8(rng.uniform(9.0, 13.0));
        spec.occluder.color = detail::sample_color(rng, 0.45f, 0.95f);
        spec.occluder_h = detail::q8(rng.uniform(cfg.height * 0.35, cfg.height * 0.65));
        spec.occluder_w = detail::q8(rng.uniform(cfg.width * 0.35, cfg.width * 0.65));

        spec.mover.kind = detail::sample_kind(rng);
        spec.mover.size = detail::q8(rng.uniform(3.0, std::min(6.0, spec.occluder.size - 3.0)));
        spec.mover.color = detail::sample_color(rng, 0.45f, 0.95f);

        // Aim the trajectory through the occluder center with a small
        // perpendicular offset; the crossing frame sits inside the horizon.
        double angle = rng.uniform(0.0, 2.0 * M_PI);
        double speed = detail::q8(rng.uniform(1.75, 3.25));
        spec.mover_vh = detail::q8(speed * std::sin(angle));
        spec.mover_vw = detail::q8(speed * std::cos(angle));
        if (spec.mover_vh == 0.0 && spec.mover_vw == 0.0) continue;
        int t_cross = static_cast<int>(
            rng.uniform_int(cfg.occlusion_frame_min, cfg.occlusion_frame_max));
        double off = detail::q8(rng.uniform(-2.0, 2.0));
        double norm = std::hypot(spec.mover_vh, spec.mover_vw);
        double ph = -spec.mover_vw / norm, pw = spec.mover_vh / norm;  // unit perpendicular
        spec.mover_h0 = detail::q8(spec.occluder_h - t_cross * spec.mover_vh + off * ph);
        spec.mover_w0 = detail::q8(spec.occluder_w - t_cross * spec.mover_vw + off * pw);

        try {
            spec.validate();
            generate_clip(spec);  // full-occlusion gate on rasterized masks
            return spec;
        } catch (const ConfigError&) {
            continue;
        }
    }
    throw ConfigError("sample_clip_spec: no occluding spec found after retries");
}

inline json spec_to_json(const ClipSpec& s) {
    auto shape = [](const Shape& sh) {
        return json{{"kind", to_string(sh.kind)},
                    {"size", sh.size},
                    {"color", {sh.color[0], sh.color[1], sh.color[2]}}};
    };
    return json{{"height", s.height},
                {"width", s.width},
                {"frames", s.frames},
                {"occluder", shape(s.occluder)},
                {"occluder_pos", {s.occluder_h, s.occluder_w}},
                {"mover", shape(s.mover)},
                {"mover_start", {s.mover_h0, s.mover_w0}},
                {"mover_velocity", {s.mover_vh, s.mover_vw}},
                {"mover_rank", s.mover_rank},
                {"occluder_rank", s.occluder_rank},
                {"track_grid_stride", s.track_grid_stride},
                {"background_color",
                 {s.background_color[0], s.background_color[1], s.background_color[2]}},
                {"seed", s.seed}};
}

inline void save_manifest(const DatasetManifest& m) {
    json j;
    j["format_version"] = m.format_version;
    j["config"] = m.config;
    j["train"] = m.train_ids;
    j["test"] = m.test_ids;
    harness::write_json_file(m.root / "manifest.json", j);
}

inline DatasetManifest load_manifest(const fs::path& root) {
    json j = harness::dump_json_file(root / "manifest.json");
    DatasetManifest m;
    m.root = root;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kDatasetFormatVersion)
        throw IoError("unsupported dataset format version");
    m.config = j.at("config");
    m.train_ids = j.at("train").get<std::vector<std::string>>();
    m.test_ids = j.at("test").get<std::vector<std::string>>();
    for (const auto& ids : {m.train_ids, m.test_ids})
        for (const std::string& id : ids)
            if (!harness::clip_complete(root / "clips" / id))
                throw IoError("manifest lists incomplete clip: " + id);
    return m;
}

inline fs::path clip_dir(const fs::path& root, const std::string& id) {
    return root / "clips" / id;
}

// Writes n_train + n_test clips and the manifest (last). Already-complete
// clip directories are skipped, so interrupted runs resume cleanly.
inline DatasetManifest generate_dataset(const GenerationConfig& cfg, const fs::path& out_dir) {
    check(cfg.n_train >= 1 && cfg.n_test >= 1, "generate_dataset: counts must be >= 1");
    fs::create_directories(out_dir / "clips");

    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.config = cfg.to_json();

    auto make_split = [&](const std::string& prefix, int count,
                          std::vector<std::string>& ids) {
        for (int i = 0; i < count; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s_%04d", prefix.c_str(), i);
            std::string id = buf;
            ids.push_back(id);
            fs::path dir = clip_dir(out_dir, id);
            if (harness::clip_complete(dir)) continue;
            uint64_t clip_seed = hash_combine(cfg.seed, id);
            ClipSpec spec = sample_clip_spec(cfg, clip_seed);
            Clip clip = generate_clip(spec);
            clip.clip_id = id;
            harness::save_clip(clip, dir, spec_to_json(spec));
        }
    };
    make_split("train", cfg.n_train, manifest.train_ids);
    make_split("test", cfg.n_test, manifest.test_ids);
    save_manifest(manifest);
    return manifest;
}

}  // namespace occluscat::synth
