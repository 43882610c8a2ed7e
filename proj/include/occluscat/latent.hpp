#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "occluscat/core/common.hpp"

namespace occluscat {

// Per-instance codebook-index grid sequences produced by a frozen
// stage-1 encoder; the training data of stage 2.
struct LatentClip {
    std::string clip_id;
    int frames = 0, latent_h = 0, latent_w = 0;
    int codebook_size = 0;
    std::vector<int> classes;                        // per instance
    std::vector<std::vector<std::vector<int>>> indices;  // [I][T][h'*w']

    int instances() const { return static_cast<int>(classes.size()); }
    int cells() const { return latent_h * latent_w; }

    void validate() const {
        check(static_cast<int>(indices.size()) == instances(), "LatentClip: instance mismatch");
        for (const auto& seq : indices) {
            check(static_cast<int>(seq.size()) == frames, "LatentClip: frame mismatch");
            for (const auto& grid : seq) {
                check(static_cast<int>(grid.size()) == cells(), "LatentClip: cell mismatch");
                for (int v : grid)
                    check(v >= 0 && v < codebook_size, "LatentClip: index out of range");
            }
        }
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"clip_id", clip_id},   {"frames", frames},
                              {"latent_h", latent_h}, {"latent_w", latent_w},
                              {"codebook_size", codebook_size}, {"classes", classes},
                              {"indices", indices}};
    }

    static LatentClip from_json(const nlohmann::json& j) {
        LatentClip lc;
        lc.clip_id = j.at("clip_id").get<std::string>();
        lc.frames = j.at("frames").get<int>();
        lc.latent_h = j.at("latent_h").get<int>();
        lc.latent_w = j.at("latent_w").get<int>();
        lc.codebook_size = j.at("codebook_size").get<int>();
        lc.classes = j.at("classes").get<std::vector<int>>();
        lc.indices = j.at("indices").get<std::vector<std::vector<std::vector<int>>>>();
        lc.validate();
        return lc;
    }
};

}  // namespace occluscat
