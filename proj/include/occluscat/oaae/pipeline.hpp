#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "occluscat/core/adam.hpp"
#include "occluscat/harness/checkpoint.hpp"
#include "occluscat/harness/sha256.hpp"
#include "occluscat/latent.hpp"
#include "occluscat/oaae/losses.hpp"
#include "occluscat/synthgen/dataset.hpp"

namespace occluscat::oaae {

namespace fs = std::filesystem;

struct OaaeTrainConfig {
    int epochs = 50;
    float lr = 3e-4f;
    float lr_floor = 0.1f;  // cosine decay floor as a fraction of lr
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

// CPU-assembled inputs for one frame: per-instance modality stacks plus the
// full-frame reconstruction target (every channel of the variant).
struct FrameSample {
    std::vector<Tensor> instance_stacks;  // per instance, [C, S, S]
    Tensor target;                        // [C, S, S]
};

inline FrameSample assemble_frame_sample(const Clip& clip, int t,
                                         const VariantConfig& variant) {
    const int S = clip.height;
    const int64_t hw = clip.hw();
    modality::InstanceSet set = modality::decompose_instances(
        clip, t, variant.use_depth, variant.use_pointflow);
    FrameSample sample;
    for (const auto& e : set.instances) {
        modality::ModalityStack stack = modality::assemble_channels(e, S, S, variant);
        sample.instance_stacks.push_back(
            Tensor::from({stack.channels, S, S}, std::move(stack.values)));
    }
    // Full-frame target: RGB, full depth map, full point-flow slice.
    std::vector<float> target;
    target.reserve(static_cast<size_t>(variant.channels()) * hw);
    const float* rgb = clip.rgb_frame(t);
    for (int ch = 0; ch < 3; ++ch)
        for (int64_t i = 0; i < hw; ++i) target.push_back(rgb[i * 3 + ch]);
    if (variant.use_depth) {
        const float* d = clip.depth_frame(t);
        target.insert(target.end(), d, d + hw);
    }
    if (variant.use_pointflow) {
        std::vector<float> plane(hw * 3);
        modality::rasterize_flow_frame(clip.tracks, t, S, S, -1, plane.data(), nullptr);
        for (int ch = 0; ch < 3; ++ch)
            for (int64_t i = 0; i < hw; ++i) target.push_back(plane[i * 3 + ch]);
    }
    sample.target = Tensor::from({variant.channels(), S, S}, std::move(target));
    return sample;
}

struct OaaeStepLosses {
    ag::Id total, vq, commitment, recon, perceptual;
};

// Builds the full stage-1 loss graph for a batch of frames. VQ/commitment
// sums follow the per-class per-instance form; batch reduction is the mean
// over frames.
inline OaaeStepLosses build_oaae_losses(ag::Tape& t, OaaeModel& model,
                                        const std::vector<FrameSample>& batch) {
    const OaaeConfig& cfg = model.cfg;
    const int F = static_cast<int>(batch.size());
    const int I = cfg.num_instances;
    const int cells = cfg.latent_cells();
    const int S = cfg.image_size;
    const int C = cfg.variant.channels();

    // Batched per-class encoding; remember each (frame, instance)'s row.
    std::vector<std::vector<std::pair<int, int>>> members(
        static_cast<size_t>(cfg.num_classes));
    for (int f = 0; f < F; ++f)
        for (int k = 0; k < I; ++k)
            members[static_cast<size_t>(cfg.instance_classes[k])].push_back({f, k});

    std::vector<ag::Id> class_zq(static_cast<size_t>(cfg.num_classes), -1);
    std::vector<std::vector<int>> row_of(static_cast<size_t>(cfg.num_classes));
    ag::Id vq_total = t.input(Tensor::zeros({1}));
    ag::Id commit_total = t.input(Tensor::zeros({1}));
    for (int c = 0; c < cfg.num_classes; ++c) {
        const auto& mem = members[static_cast<size_t>(c)];
        if (mem.empty()) continue;
        int n = static_cast<int>(mem.size());
        Tensor xs({n, C, S, S});
        row_of[static_cast<size_t>(c)].assign(static_cast<size_t>(F) * I, -1);
        for (int i = 0; i < n; ++i) {
            auto [f, k] = mem[static_cast<size_t>(i)];
            const Tensor& stack = batch[static_cast<size_t>(f)]
                                      .instance_stacks[static_cast<size_t>(k)];
            std::memcpy(xs.data() + static_cast<int64_t>(i) * C * S * S, stack.data(),
                        static_cast<size_t>(C) * S * S * sizeof(float));
            row_of[static_cast<size_t>(c)][static_cast<size_t>(f) * I + k] = i;
        }
        ag::Id enc = model.encode_instance(t, t.input(std::move(xs)), c);
        ag::Id flat = ag::reshape(t, enc, {n, cfg.embed_dim, cells});
        ag::Id cellsT = ag::transpose12(t, flat);                       // [n, cells, D]
        ag::Id cells2 = ag::reshape(t, cellsT, {n * cells, cfg.embed_dim});
        VqLosses vql = vq_and_commitment_loss(t, cells2, *model.codebooks[c]);
        vq_total = ag::add(t, vq_total, vql.vq);
        commit_total = ag::add(t, commit_total, vql.commitment);
        class_zq[static_cast<size_t>(c)] = vql.quantized_st;
    }

    // Compose the structured latent per frame in fixed instance order.
    std::vector<ag::Id> frame_latents;
    for (int f = 0; f < F; ++f) {
        std::vector<ag::Id> parts;
        for (int k = 0; k < I; ++k) {
            int c = cfg.instance_classes[k];
            int row = row_of[static_cast<size_t>(c)][static_cast<size_t>(f) * I + k];
            parts.push_back(
                ag::slice_rows(t, class_zq[static_cast<size_t>(c)], row * cells, cells));
        }
        ag::Id z = ag::concat_lastdim(t, parts);                     // [cells, I*D]
        ag::Id z3 = ag::reshape(t, z, {cells, cfg.composed_depth(), 1});
        ag::Id zt = ag::transpose01(t, z3);                          // [I*D, cells, 1]
        frame_latents.push_back(
            ag::reshape(t, zt, {cfg.composed_depth(), cfg.latent_size(), cfg.latent_size()}));
    }
    ag::Id stacked = ag::concat_channels(t, frame_latents);  // [F*I*D, s, s]
    ag::Id composed = ag::reshape(
        t, stacked, {F, cfg.composed_depth(), cfg.latent_size(), cfg.latent_size()});
    ag::Id decoded = model.decode_frames(t, composed);  // [F, C, S, S]

    Tensor target({F, C, S, S});
    for (int f = 0; f < F; ++f)
        std::memcpy(target.data() + static_cast<int64_t>(f) * C * S * S,
                    batch[static_cast<size_t>(f)].target.data(),
                    static_cast<size_t>(C) * S * S * sizeof(float));
    ag::Id target_id = t.input(std::move(target));

    ag::Id recon = reconstruction_loss(t, target_id, decoded);
    ag::Id perc = perceptual_loss(t, ag::slice_channels(t, decoded, 0, 3),
                                  ag::slice_channels(t, target_id, 0, 3), model.perceptual);
    float inv_f = 1.0f / static_cast<float>(F);
    ag::Id vq_mean = ag::scale(t, vq_total, inv_f);
    ag::Id commit_mean = ag::scale(t, commit_total, inv_f);
    ag::Id total = ag::add(t, ag::add(t, vq_mean, commit_mean), ag::add(t, recon, perc));
    return {total, vq_mean, commit_mean, recon, perc};
}

struct EpochLosses {
    double vq = 0, commitment = 0, recon = 0, perceptual = 0, total = 0;
    int steps = 0;
    void accumulate(ag::Tape& t, const OaaeStepLosses& l) {
        vq += t.val(l.vq).at(0);
        commitment += t.val(l.commitment).at(0);
        recon += t.val(l.recon).at(0);
        perceptual += t.val(l.perceptual).at(0);
        total += t.val(l.total).at(0);
        ++steps;
    }
};

inline std::string dataset_hash(const fs::path& dataset_root) {
    std::ifstream in(dataset_root / "manifest.json", std::ios::binary);
    if (!in) throw IoError("missing dataset manifest under " + dataset_root.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return harness::Sha256::of(bytes);
}

inline std::vector<Clip> load_split(const synth::DatasetManifest& manifest,
                                    const std::vector<std::string>& ids) {
    std::vector<Clip> clips;
    clips.reserve(ids.size());
    for (const std::string& id : ids)
        clips.push_back(harness::load_clip(synth::clip_dir(manifest.root, id)));
    return clips;
}

// Stage-1 training. Deterministic given seeds and single-worker order;
// aborts with a diagnostic snapshot if the loss goes non-finite. Writes the
// checkpoint and an append-only per-epoch CSV into out_dir.
inline OaaeModel train_oaae(const synth::DatasetManifest& manifest, const OaaeConfig& cfg,
                            const OaaeTrainConfig& train, const fs::path& out_dir,
                            bool resume = false, bool quiet = false) {
    fs::create_directories(out_dir);
    OaaeModel model(cfg);
    int start_epoch = 0;
    fs::path ckpt_dir = out_dir / "checkpoint";
    fs::path log_path = out_dir / "loss_log.csv";
    if (resume && fs::exists(ckpt_dir / "checkpoint.json")) {
        json m = harness::load_checkpoint(ckpt_dir, model.params);
        start_epoch = m.value("epochs_completed", 0);
    } else if (!fs::exists(log_path)) {
        std::ofstream log(log_path);
        log << "epoch,l_vq,l_commit,l_recon,l_perc,total\n";
    }

    std::vector<Clip> clips = load_split(manifest, manifest.train_ids);
    check(!clips.empty(), "train_oaae: empty training split");
    for (const Clip& c : clips) {
        if (cfg.variant.use_pointflow)
            check(c.has_tracks(), "train_oaae: variant needs tracks but clip has none");
        if (cfg.variant.use_depth)
            check(c.has_depth(), "train_oaae: variant needs depth but clip has none");
    }

    std::vector<std::pair<int, int>> frames;  // (clip index, t)
    for (size_t i = 0; i < clips.size(); ++i)
        for (int t = 0; t < clips[i].frames; ++t)
            frames.push_back({static_cast<int>(i), t});

    ag::Adam opt(train.lr);
    auto params = model.params.all();
    int64_t steps_per_epoch =
        (static_cast<int64_t>(frames.size()) + train.batch_frames - 1) / train.batch_frames;
    int64_t total_steps = steps_per_epoch * train.epochs;
    Rng shuffle_rng(hash_combine(train.seed, std::string("oaae-shuffle")));

    for (int epoch = start_epoch; epoch < train.epochs; ++epoch) {
        shuffle_rng.shuffle(frames);
        EpochLosses ep;
        for (size_t off = 0; off < frames.size(); off += train.batch_frames) {
            size_t end = std::min(frames.size(), off + train.batch_frames);
            std::vector<FrameSample> batch;
            for (size_t i = off; i < end; ++i)
                batch.push_back(assemble_frame_sample(clips[frames[i].first],
                                                      frames[i].second, cfg.variant));
            ag::Tape t;
            OaaeStepLosses losses = build_oaae_losses(t, model, batch);
            double total = t.val(losses.total).at(0);
            if (!std::isfinite(total)) {
                json snap{{"component", "oaae"},
                          {"epoch", epoch},
                          {"step", ep.steps},
                          {"l_vq", t.val(losses.vq).at(0)},
                          {"l_commit", t.val(losses.commitment).at(0)},
                          {"l_recon", t.val(losses.recon).at(0)},
                          {"l_perc", t.val(losses.perceptual).at(0)}};
                harness::write_json_file(out_dir / "diagnostic.json", snap);
                throw std::runtime_error("train_oaae: non-finite loss; snapshot written");
            }
            ep.accumulate(t, losses);
            t.backward(losses.total);
            opt.set_lr(ag::cosine_lr(train.lr, opt.steps(), total_steps, train.lr_floor));
            opt.step(params);
        }
        std::ofstream log(log_path, std::ios::app);
        log << epoch << "," << ep.vq / ep.steps << "," << ep.commitment / ep.steps << ","
            << ep.recon / ep.steps << "," << ep.perceptual / ep.steps << ","
            << ep.total / ep.steps << "\n";
        if (!quiet)
            std::cerr << "[oaae " << cfg.variant.name() << "] epoch " << epoch
                      << " total=" << ep.total / ep.steps << "\n";
        json extra{{"seed", cfg.seed},
                   {"dataset_hash", dataset_hash(manifest.root)},
                   {"epochs_completed", epoch + 1},
                   {"train_config", train.to_json()},
                   {"variant", cfg.variant.name()}};
        harness::save_checkpoint(ckpt_dir, "oaae", cfg.to_json(), model.params, extra);
    }
    return model;
}

inline OaaeModel load_oaae(const fs::path& ckpt_dir) {
    json manifest = harness::load_checkpoint_manifest(ckpt_dir);
    check(manifest.at("component") == "oaae", "load_oaae: not an oaae checkpoint");
    OaaeConfig cfg = OaaeConfig::from_json(manifest.at("config"));
    OaaeModel model(cfg);
    harness::load_checkpoint(ckpt_dir, model.params);
    return model;
}

// Per-instance index-grid sequences for a clip under a frozen model.
inline LatentClip encode_clip(OaaeModel& model, const Clip& clip) {
    const OaaeConfig& cfg = model.cfg;
    check(clip.num_instances == cfg.num_instances, "encode_clip: instance count mismatch");
    const int T = clip.frames;
    const int S = cfg.image_size;
    const int C = cfg.variant.channels();
    const int cells = cfg.latent_cells();
    LatentClip lc;
    lc.clip_id = clip.clip_id;
    lc.frames = T;
    lc.latent_h = cfg.latent_size();
    lc.latent_w = cfg.latent_size();
    lc.codebook_size = cfg.codebook_size;
    lc.classes = cfg.instance_classes;
    lc.indices.assign(static_cast<size_t>(cfg.num_instances),
                      std::vector<std::vector<int>>(static_cast<size_t>(T)));

    std::vector<FrameSample> samples;
    samples.reserve(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t)
        samples.push_back(assemble_frame_sample(clip, t, cfg.variant));

    for (int k = 0; k < cfg.num_instances; ++k) {
        Tensor xs({T, C, S, S});
        for (int t = 0; t < T; ++t)
            std::memcpy(xs.data() + static_cast<int64_t>(t) * C * S * S,
                        samples[static_cast<size_t>(t)].instance_stacks[static_cast<size_t>(k)]
                            .data(),
                        static_cast<size_t>(C) * S * S * sizeof(float));
        ag::Tape t;
        ag::Id enc = model.encode_instance(t, t.input(std::move(xs)),
                                           cfg.instance_classes[static_cast<size_t>(k)]);
        ag::Id flat = ag::reshape(t, enc, {T, cfg.embed_dim, cells});
        ag::Id cellsT = ag::transpose12(t, flat);
        const Tensor& all_cells = t.val(cellsT);  // [T, cells, D]
        for (int f = 0; f < T; ++f) {
            Tensor frame_cells = Tensor::from(
                {cells, cfg.embed_dim},
                std::vector<float>(
                    all_cells.data() + static_cast<int64_t>(f) * cells * cfg.embed_dim,
                    all_cells.data() + static_cast<int64_t>(f + 1) * cells * cfg.embed_dim));
            lc.indices[static_cast<size_t>(k)][static_cast<size_t>(f)] = quantize_indices(
                frame_cells, model.codebooks[static_cast<size_t>(
                                                 cfg.instance_classes[static_cast<size_t>(k)])]
                                 ->value);
        }
    }
    lc.validate();
    return lc;
}

// Decodes index grids back to full modality stacks, [T, C, S, S].
inline Tensor decode_latent_frames(OaaeModel& model,
                                   const std::vector<std::vector<std::vector<int>>>& indices,
                                   int from_frame, int count) {
    const OaaeConfig& cfg = model.cfg;
    const int cells = cfg.latent_cells();
    Tensor composed({count, cfg.composed_depth(), cfg.latent_size(), cfg.latent_size()});
    for (int f = 0; f < count; ++f) {
        for (int k = 0; k < cfg.num_instances; ++k) {
            Tensor rows = gather_codebook(
                model.codebooks[static_cast<size_t>(cfg.instance_classes[static_cast<size_t>(k)])]
                    ->value,
                indices[static_cast<size_t>(k)][static_cast<size_t>(from_frame + f)]);
            // [cells, D] -> planar channels at offset k*D.
            for (int d = 0; d < cfg.embed_dim; ++d)
                for (int i = 0; i < cells; ++i)
                    composed.data()[((static_cast<int64_t>(f) * cfg.composed_depth() +
                                      k * cfg.embed_dim + d) *
                                     cells) +
                                    i] = rows.at(static_cast<int64_t>(i) * cfg.embed_dim + d);
        }
    }
    ag::Tape t;
    ag::Id out = model.decode_frames(t, t.input(std::move(composed)));
    return t.val(out).clone();
}

}  // namespace occluscat::oaae
