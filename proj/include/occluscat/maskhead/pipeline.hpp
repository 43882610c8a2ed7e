#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "occluscat/core/adam.hpp"
#include "occluscat/harness/checkpoint.hpp"
#include "occluscat/oaae/pipeline.hpp"
#include "occluscat/predictor/pipeline.hpp"

namespace occluscat::maskhead {

namespace fs = std::filesystem;
using nlohmann::json;

struct MaskHeadConfig {
    int embed_dim = 64;    // must match the OAAE's D
    int latent_size = 8;
    int image_size = 64;
    std::array<int, 3> widths = {32, 16, 8};
    uint64_t seed = 0;

    json to_json() const {
        return json{{"embed_dim", embed_dim},
                    {"latent_size", latent_size},
                    {"image_size", image_size},
                    {"widths", widths},
                    {"seed", seed}};
    }
    static MaskHeadConfig from_json(const json& j) {
        MaskHeadConfig c;
        c.embed_dim = j.at("embed_dim").get<int>();
        c.latent_size = j.at("latent_size").get<int>();
        c.image_size = j.at("image_size").get<int>();
        c.widths = j.at("widths").get<std::array<int, 3>>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }
};

// Three transposed-conv stages from a per-instance latent grid to full-frame
// mask logits. Used solely for EMD evaluation; inputs come from the frozen
// OAAE codebook, so no gradient can reach stage-1 or stage-2 weights.
class MaskHeadModel {
  public:
    MaskHeadConfig cfg;
    ag::ParamRegistry params;

    explicit MaskHeadModel(const MaskHeadConfig& config) : cfg(config) {
        check(cfg.image_size == cfg.latent_size * 8, "maskhead: expects an 8x upsampling");
        Rng rng(cfg.seed);
        up_[0] = nn::make_conv_gn(params, rng, "up0", cfg.embed_dim, cfg.widths[0],
                                            2, 2, 0, true);
        up_[1] = nn::make_conv_gn(params, rng, "up1", cfg.widths[0], cfg.widths[1],
                                            2, 2, 0, true);
        up_[2] = nn::make_conv_gn(params, rng, "up2", cfg.widths[1], cfg.widths[2],
                                            2, 2, 0, true);
        out_w_ = &params.add("out.w", ag::he_init({1, cfg.widths[2], 3, 3}, rng, 0.5f));
        out_b_ = &params.add("out.b", Tensor::zeros({1}));
    }

    // latents [B, D, s, s] -> logits [B, 1, S, S].
    ag::Id forward(ag::Tape& t, ag::Id latents) const {
        check(t.val(latents).dim(1) == cfg.embed_dim, "maskhead: latent depth mismatch");
        ag::Id h = up_[0].forward(t, latents);
        h = up_[1].forward(t, h);
        h = up_[2].forward(t, h);
        return ag::conv2d(t, h, t.leaf(*out_w_), t.leaf(*out_b_), 1, 1);
    }

  private:
    std::array<nn::ConvGN, 3> up_;
    ag::Parameter* out_w_ = nullptr;
    ag::Parameter* out_b_ = nullptr;
};

struct MaskPrediction {
    int height = 0, width = 0;
    std::vector<float> soft;  // [0,1]
    float threshold = 0.5f;
    std::pair<int, int> fallback_pixel{0, 0};  // argmax location

    // Binarized support; never empty thanks to the fallback pixel.
    std::vector<std::pair<int, int>> support() const {
        std::vector<std::pair<int, int>> pts;
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c)
                if (soft[static_cast<size_t>(r) * width + c] > threshold) pts.push_back({r, c});
        if (pts.empty()) pts.push_back(fallback_pixel);
        return pts;
    }
};

// Per-instance latent embedding grid as a planar tensor [D, s, s].
inline Tensor latent_plane(const oaae::OaaeModel& oaae_model, const LatentClip& lc,
                           int instance, int frame) {
    const auto& cfg = oaae_model.cfg;
    int cells = cfg.latent_cells();
    Tensor rows = oaae::gather_codebook(
        oaae_model.codebooks[static_cast<size_t>(
                                 cfg.instance_classes[static_cast<size_t>(instance)])]
            ->value,
        lc.indices[static_cast<size_t>(instance)][static_cast<size_t>(frame)]);
    Tensor plane({cfg.embed_dim, cfg.latent_size(), cfg.latent_size()});
    for (int d = 0; d < cfg.embed_dim; ++d)
        for (int i = 0; i < cells; ++i)
            plane.data()[static_cast<int64_t>(d) * cells + i] =
                rows.at(static_cast<int64_t>(i) * cfg.embed_dim + d);
    return plane;
}

struct MaskTrainConfig {
    int epochs = 10;
    float lr = 1e-3f;
    float lr_floor = 0.1f;
    int batch_frames = 8;
    uint64_t seed = 0;
    json to_json() const {
        return json{{"epochs", epochs},
                    {"lr", lr},
                    {"lr_floor", lr_floor},
                    {"batch_frames", batch_frames},
                    {"seed", seed}};
    }
};

// Per-pixel binary cross-entropy against ground-truth instance masks, with
// the OAAE frozen (its codebook only supplies constant inputs).
inline MaskHeadModel train_maskhead(const std::vector<Clip>& clips,
                                    const std::vector<LatentClip>& latents,
                                    oaae::OaaeModel& oaae_model, const MaskTrainConfig& train,
                                    const fs::path& out_dir, bool quiet = false) {
    check(clips.size() == latents.size(), "train_maskhead: clip/latent count mismatch");
    check(!clips.empty(), "train_maskhead: empty dataset");
    fs::create_directories(out_dir);
    MaskHeadConfig cfg;
    cfg.embed_dim = oaae_model.cfg.embed_dim;
    cfg.latent_size = oaae_model.cfg.latent_size();
    cfg.image_size = oaae_model.cfg.image_size;
    cfg.seed = hash_combine(train.seed, std::string("maskhead"));
    MaskHeadModel model(cfg);

    fs::path log_path = out_dir / "loss_log.csv";
    {
        std::ofstream log(log_path);
        log << "epoch,bce\n";
    }

    const int I = oaae_model.cfg.num_instances;
    const int S = cfg.image_size;
    std::vector<std::pair<int, int>> frames;
    for (size_t i = 0; i < clips.size(); ++i)
        for (int t = 0; t < clips[i].frames; ++t) frames.push_back({static_cast<int>(i), t});

    ag::Adam opt(train.lr);
    auto params = model.params.all();
    Rng shuffle_rng(hash_combine(train.seed, std::string("maskhead-shuffle")));
    int64_t steps_per_epoch =
        (static_cast<int64_t>(frames.size()) + train.batch_frames - 1) / train.batch_frames;
    int64_t total_steps = steps_per_epoch * train.epochs;

    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        shuffle_rng.shuffle(frames);
        double epoch_loss = 0.0;
        int steps = 0;
        for (size_t off = 0; off < frames.size(); off += train.batch_frames) {
            size_t end = std::min(frames.size(), off + train.batch_frames);
            int B = static_cast<int>(end - off) * I;
            Tensor latents_in({B, cfg.embed_dim, cfg.latent_size, cfg.latent_size});
            Tensor targets({B, 1, S, S});
            int b = 0;
            for (size_t i = off; i < end; ++i) {
                auto [ci, t] = frames[i];
                for (int k = 0; k < I; ++k, ++b) {
                    Tensor plane = latent_plane(oaae_model, latents[static_cast<size_t>(ci)],
                                                k, t);
                    std::memcpy(latents_in.data() + static_cast<int64_t>(b) * plane.numel(),
                                plane.data(),
                                static_cast<size_t>(plane.numel()) * sizeof(float));
                    const uint8_t* m = clips[static_cast<size_t>(ci)].mask(k, t);
                    float* dst = targets.data() + static_cast<int64_t>(b) * S * S;
                    for (int64_t px = 0; px < static_cast<int64_t>(S) * S; ++px)
                        dst[px] = static_cast<float>(m[px]);
                }
            }
            ag::Tape t;
            ag::Id logits = model.forward(t, t.input(std::move(latents_in)));
            ag::Id loss = ag::bce_with_logits(t, logits, t.input(std::move(targets)));
            double v = t.val(loss).at(0);
            if (!std::isfinite(v)) {
                harness::write_json_file(out_dir / "diagnostic.json",
                                         json{{"component", "maskhead"}, {"epoch", epoch}});
                throw std::runtime_error("train_maskhead: non-finite loss; snapshot written");
            }
            epoch_loss += v;
            ++steps;
            t.backward(loss);
            opt.set_lr(ag::cosine_lr(train.lr, opt.steps(), total_steps, train.lr_floor));
            opt.step(params);
        }
        std::ofstream log(log_path, std::ios::app);
        log << epoch << "," << epoch_loss / steps << "\n";
        if (!quiet)
            std::cerr << "[maskhead] epoch " << epoch << " bce=" << epoch_loss / steps << "\n";
        harness::save_checkpoint(out_dir / "checkpoint", "maskhead", cfg.to_json(),
                                 model.params,
                                 json{{"seed", cfg.seed}, {"epochs_completed", epoch + 1}});
    }
    return model;
}

inline MaskHeadModel load_maskhead(const fs::path& ckpt_dir) {
    json manifest = harness::load_checkpoint_manifest(ckpt_dir);
    check(manifest.at("component") == "maskhead", "load_maskhead: wrong component");
    MaskHeadConfig cfg = MaskHeadConfig::from_json(manifest.at("config"));
    MaskHeadModel model(cfg);
    harness::load_checkpoint(ckpt_dir, model.params);
    return model;
}

// Soft masks for every instance of one latent frame.
inline std::vector<MaskPrediction> predict_masks(MaskHeadModel& model,
                                                 oaae::OaaeModel& oaae_model,
                                                 const LatentClip& lc, int frame,
                                                 float threshold = 0.5f) {
    const int I = oaae_model.cfg.num_instances;
    const int S = model.cfg.image_size;
    Tensor latents_in({I, model.cfg.embed_dim, model.cfg.latent_size, model.cfg.latent_size});
    for (int k = 0; k < I; ++k) {
        Tensor plane = latent_plane(oaae_model, lc, k, frame);
        std::memcpy(latents_in.data() + static_cast<int64_t>(k) * plane.numel(), plane.data(),
                    static_cast<size_t>(plane.numel()) * sizeof(float));
    }
    ag::Tape t;
    ag::Id probs = ag::sigmoid(t, model.forward(t, t.input(std::move(latents_in))));
    const Tensor& pv = t.val(probs);
    std::vector<MaskPrediction> out;
    for (int k = 0; k < I; ++k) {
        MaskPrediction mp;
        mp.height = S;
        mp.width = S;
        mp.threshold = threshold;
        mp.soft.assign(pv.data() + static_cast<int64_t>(k) * S * S,
                       pv.data() + static_cast<int64_t>(k + 1) * S * S);
        int64_t best = 0;
        for (int64_t i = 1; i < static_cast<int64_t>(S) * S; ++i)
            if (mp.soft[static_cast<size_t>(i)] > mp.soft[static_cast<size_t>(best)]) best = i;
        mp.fallback_pixel = {static_cast<int>(best / S), static_cast<int>(best % S)};
        out.push_back(std::move(mp));
    }
    return out;
}

}  // namespace occluscat::maskhead
