#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "occluscat/clip.hpp"
#include "occluscat/harness/io_png.hpp"

namespace occluscat::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// On-disk clip layout:
//   <dir>/rgb/frame_%04d.png          8-bit RGB
//   <dir>/masks/inst_<k>/frame_%04d.png  binary 8-bit (0/255)
//   <dir>/depth/frame_%04d.png        16-bit gray, value = round(depth*65535)
//   <dir>/tracks.json                 per point: object_id, [[h,w,v], ...]
//   <dir>/meta.json                   classes, sizes, spec echo; written last

inline std::string frame_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%04d.png", t);
    return buf;
}

inline json dump_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path.string());
    json j;
    in >> j;
    return j;
}

inline void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline void save_clip(const Clip& clip, const fs::path& dir, const json& spec_echo = json()) {
    fs::create_directories(dir / "rgb");
    fs::create_directories(dir / "depth");
    for (int k = 0; k < clip.num_instances; ++k)
        fs::create_directories(dir / "masks" / ("inst_" + std::to_string(k)));

    const int64_t hw = clip.hw();
    std::vector<uint8_t> rgb8(hw * 3);
    std::vector<uint8_t> mask8(hw);
    std::vector<uint16_t> depth16(hw);
    for (int t = 0; t < clip.frames; ++t) {
        const float* rgb = clip.rgb_frame(t);
        for (int64_t i = 0; i < hw * 3; ++i)
            rgb8[i] = static_cast<uint8_t>(
                std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));
        write_png_rgb8((dir / "rgb" / frame_name(t)).string(), clip.height, clip.width,
                       rgb8.data());
        for (int k = 0; k < clip.num_instances; ++k) {
            const uint8_t* m = clip.mask(k, t);
            for (int64_t i = 0; i < hw; ++i) mask8[i] = m[i] ? 255 : 0;
            write_png_gray8(
                (dir / "masks" / ("inst_" + std::to_string(k)) / frame_name(t)).string(),
                clip.height, clip.width, mask8.data());
        }
        const float* d = clip.depth_frame(t);
        for (int64_t i = 0; i < hw; ++i)
            depth16[i] = static_cast<uint16_t>(
                std::lround(std::clamp(d[i], 0.0f, 1.0f) * 65535.0f));
        write_png_gray16((dir / "depth" / frame_name(t)).string(), clip.height, clip.width,
                         depth16.data());
    }

    json tracks;
    tracks["frames"] = clip.tracks.frames;
    tracks["points"] = json::array();
    for (const PointTrack& p : clip.tracks.points) {
        json jp;
        jp["object_id"] = p.object_id;
        json tr = json::array();
        for (int t = 0; t < clip.tracks.frames; ++t)
            tr.push_back({p.pos[t][0], p.pos[t][1], static_cast<int>(p.vis[t])});
        jp["track"] = std::move(tr);
        tracks["points"].push_back(std::move(jp));
    }
    write_json_file(dir / "tracks.json", tracks);

    json meta;
    meta["clip_id"] = clip.clip_id;
    meta["frames"] = clip.frames;
    meta["height"] = clip.height;
    meta["width"] = clip.width;
    meta["num_instances"] = clip.num_instances;
    meta["classes"] = clip.classes;
    if (!spec_echo.is_null()) meta["spec"] = spec_echo;
    write_json_file(dir / "meta.json", meta);  // marks the clip complete
}

inline bool clip_complete(const fs::path& dir) { return fs::exists(dir / "meta.json"); }

inline Clip load_clip(const fs::path& dir) {
    json meta = dump_json_file(dir / "meta.json");
    Clip clip;
    clip.clip_id = meta.at("clip_id").get<std::string>();
    clip.frames = meta.at("frames").get<int>();
    clip.height = meta.at("height").get<int>();
    clip.width = meta.at("width").get<int>();
    clip.num_instances = meta.at("num_instances").get<int>();
    clip.classes = meta.at("classes").get<std::vector<int>>();
    clip.allocate();

    const int64_t hw = clip.hw();
    for (int t = 0; t < clip.frames; ++t) {
        int h = 0, w = 0;
        std::vector<uint8_t> rgb8;
        read_png_rgb8((dir / "rgb" / frame_name(t)).string(), h, w, rgb8);
        if (h != clip.height || w != clip.width)
            throw IoError("rgb frame size mismatch in " + dir.string());
        float* rgb = clip.rgb_frame(t);
        for (int64_t i = 0; i < hw * 3; ++i) rgb[i] = rgb8[i] / 255.0f;
        for (int k = 0; k < clip.num_instances; ++k) {
            std::vector<uint8_t> m8;
            read_png_gray8(
                (dir / "masks" / ("inst_" + std::to_string(k)) / frame_name(t)).string(), h, w,
                m8);
            uint8_t* m = clip.mask(k, t);
            for (int64_t i = 0; i < hw; ++i) m[i] = m8[i] > 127 ? 1 : 0;
        }
        std::vector<uint16_t> d16;
        read_png_gray16((dir / "depth" / frame_name(t)).string(), h, w, d16);
        float* d = clip.depth_frame(t);
        for (int64_t i = 0; i < hw; ++i) d[i] = d16[i] / 65535.0f;
    }

    json tracks = dump_json_file(dir / "tracks.json");
    clip.tracks.frames = tracks.at("frames").get<int>();
    if (clip.tracks.frames != clip.frames)
        throw IoError("track frame count mismatch in " + dir.string());
    for (const json& jp : tracks.at("points")) {
        PointTrack p;
        p.object_id = jp.at("object_id").get<int>();
        for (const json& step : jp.at("track")) {
            p.pos.push_back({step.at(0).get<double>(), step.at(1).get<double>()});
            p.vis.push_back(static_cast<uint8_t>(step.at(2).get<int>()));
        }
        clip.tracks.points.push_back(std::move(p));
    }
    return clip;
}

}  // namespace occluscat::harness
