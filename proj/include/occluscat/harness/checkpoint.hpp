#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "occluscat/core/params.hpp"
#include "occluscat/harness/clip_io.hpp"

namespace occluscat::harness {

constexpr int kCheckpointFormatVersion = 1;

// Checkpoint = directory with a manifest plus one raw little-endian float32
// file per parameter tensor. load(save(w)) == w bitwise.
inline void save_checkpoint(const fs::path& dir, const std::string& component,
                            const json& config, ag::ParamRegistry& params,
                            const json& extra = json::object()) {
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["component"] = component;
    manifest["config"] = config;
    for (auto& [k, v] : extra.items()) manifest[k] = v;
    json shapes = json::object();
    for (const auto& [name, p] : params.by_name()) {
        shapes[name] = p->value.shape();
        std::ofstream out(dir / (name + ".f32"), std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint tensor: " + name);
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.numel() * sizeof(float)));
    }
    manifest["tensors"] = shapes;
    write_json_file(dir / "checkpoint.json", manifest);
}

inline json load_checkpoint_manifest(const fs::path& dir) {
    if (!fs::exists(dir / "checkpoint.json"))
        throw IoError("missing checkpoint: " + dir.string());
    json manifest = dump_json_file(dir / "checkpoint.json");
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw IoError("unsupported checkpoint format version");
    return manifest;
}

// Loads tensors into an already-built registry; shapes must match exactly.
inline json load_checkpoint(const fs::path& dir, ag::ParamRegistry& params) {
    json manifest = load_checkpoint_manifest(dir);
    const json& shapes = manifest.at("tensors");
    for (const auto& [name, p] : params.by_name()) {
        if (!shapes.contains(name))
            throw IoError("checkpoint missing tensor: " + name);
        auto shape = shapes.at(name).get<std::vector<int>>();
        if (shape != p->value.shape())
            throw IoError("checkpoint shape mismatch for " + name);
        fs::path f = dir / (name + ".f32");
        std::ifstream in(f, std::ios::binary);
        if (!in) throw IoError("missing checkpoint tensor file: " + f.string());
        in.seekg(0, std::ios::end);
        auto bytes = static_cast<int64_t>(in.tellg());
        if (bytes != p->value.numel() * static_cast<int64_t>(sizeof(float)))
            throw IoError("checkpoint byte length mismatch for " + name);
        in.seekg(0);
        in.read(reinterpret_cast<char*>(p->value.data()), bytes);
    }
    return manifest;
}

}  // namespace occluscat::harness
