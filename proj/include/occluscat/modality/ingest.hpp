#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "occluscat/harness/clip_io.hpp"

namespace occluscat::modality {

namespace fs = std::filesystem;

// What ingestion had to repair or could not find. Real segmenters leak, so
// overlaps and residual pixels are tolerated and reported.
struct IngestReport {
    bool has_depth = false;
    bool has_tracks = false;
    int64_t overlap_pixels = 0;   // resolved to the lowest instance id
    int64_t residual_pixels = 0;  // assigned to background (instance 0)
};

// Loads externally precomputed modalities from the standard clip layout.
// Masks need not partition; the returned clip satisfies the partition
// invariant after repair. Missing depth or tracks restrict usable variants.
inline Clip ingest_external(const fs::path& dir, IngestReport* report = nullptr) {
    IngestReport rep;
    if (!fs::exists(dir / "rgb" / harness::frame_name(0)))
        throw IoError("ingest_external: missing RGB frames in " + dir.string());

    // Frame count = contiguous rgb frames on disk.
    int frames = 0;
    while (fs::exists(dir / "rgb" / harness::frame_name(frames))) ++frames;

    int H = 0, W = 0;
    std::vector<uint8_t> rgb8;
    harness::read_png_rgb8((dir / "rgb" / harness::frame_name(0)).string(), H, W, rgb8);

    // Instances = contiguous masks/inst_<k> directories.
    int instances = 0;
    while (fs::exists(dir / "masks" / ("inst_" + std::to_string(instances)))) ++instances;
    if (instances == 0) throw IoError("ingest_external: no instance masks in " + dir.string());

    Clip clip;
    clip.clip_id = dir.filename().string();
    clip.frames = frames;
    clip.height = H;
    clip.width = W;
    clip.num_instances = instances;
    clip.classes.assign(static_cast<size_t>(instances), 1);
    clip.classes[0] = 0;  // instance 0 is background by convention
    if (fs::exists(dir / "meta.json")) {
        auto meta = harness::dump_json_file(dir / "meta.json");
        if (meta.contains("classes")) clip.classes = meta["classes"].get<std::vector<int>>();
        if (meta.contains("clip_id")) clip.clip_id = meta["clip_id"].get<std::string>();
    }
    clip.allocate();
    const int64_t hw = clip.hw();

    rep.has_depth = fs::exists(dir / "depth" / harness::frame_name(0));
    if (!rep.has_depth) clip.depth.clear();

    for (int t = 0; t < frames; ++t) {
        int h = 0, w = 0;
        harness::read_png_rgb8((dir / "rgb" / harness::frame_name(t)).string(), h, w, rgb8);
        if (h != H || w != W) throw IoError("ingest_external: rgb size mismatch at frame " +
                                            std::to_string(t));
        float* out = clip.rgb_frame(t);
        for (int64_t i = 0; i < hw * 3; ++i) out[i] = rgb8[i] / 255.0f;

        // Overlaps go to the lowest instance id; uncovered pixels go to
        // background.
        std::vector<int> owner(hw, -1);
        for (int k = 0; k < instances; ++k) {
            fs::path mpath = dir / "masks" / ("inst_" + std::to_string(k)) /
                             harness::frame_name(t);
            if (!fs::exists(mpath))
                throw IoError("ingest_external: missing mask " + mpath.string());
            std::vector<uint8_t> m8;
            harness::read_png_gray8(mpath.string(), h, w, m8);
            if (h != H || w != W)
                throw IoError("ingest_external: mask size mismatch at frame " +
                              std::to_string(t));
            for (int64_t i = 0; i < hw; ++i) {
                if (m8[i] <= 127) continue;
                if (owner[i] == -1) owner[i] = k;
                else ++rep.overlap_pixels;
            }
        }
        for (int64_t i = 0; i < hw; ++i) {
            if (owner[i] == -1) {
                owner[i] = 0;
                ++rep.residual_pixels;
            }
            clip.mask(owner[i], t)[i] = 1;
        }

        if (rep.has_depth) {
            fs::path dpath = dir / "depth" / harness::frame_name(t);
            if (!fs::exists(dpath))
                throw IoError("ingest_external: depth frame count mismatch at " +
                              std::to_string(t));
            std::vector<uint16_t> d16;
            harness::read_png_gray16(dpath.string(), h, w, d16);
            if (h != H || w != W)
                throw IoError("ingest_external: depth size mismatch at frame " +
                              std::to_string(t));
            float* d = clip.depth_frame(t);
            for (int64_t i = 0; i < hw; ++i) d[i] = d16[i] / 65535.0f;
        }
    }

    rep.has_tracks = fs::exists(dir / "tracks.json");
    if (rep.has_tracks) {
        auto tracks = harness::dump_json_file(dir / "tracks.json");
        clip.tracks.frames = tracks.at("frames").get<int>();
        if (clip.tracks.frames != frames)
            throw IoError("ingest_external: track frame count mismatch");
        for (const auto& jp : tracks.at("points")) {
            PointTrack p;
            p.object_id = jp.value("object_id", -1);
            for (const auto& step : jp.at("track")) {
                p.pos.push_back({step.at(0).get<double>(), step.at(1).get<double>()});
                p.vis.push_back(static_cast<uint8_t>(step.at(2).get<int>()));
            }
            if (static_cast<int>(p.pos.size()) != frames)
                throw IoError("ingest_external: track length mismatch");
            clip.tracks.points.push_back(std::move(p));
        }
    }

    if (report) *report = rep;
    return clip;
}

}  // namespace occluscat::modality
