#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "occluscat/core/adam.hpp"
#include "occluscat/harness/checkpoint.hpp"
#include "occluscat/harness/sha256.hpp"
#include "occluscat/predictor/model.hpp"

namespace occluscat::predictor {

namespace fs = std::filesystem;

struct PredictorTrainConfig {
    int epochs = 30;
    float lr = 3e-4f;
    float lr_floor = 0.1f;
    uint64_t seed = 0;

    json to_json() const {
        return json{{"epochs", epochs}, {"lr", lr}, {"lr_floor", lr_floor}, {"seed", seed}};
    }
};

// Per-instance, per-cell categorical over codebook indices.
struct CategoricalGrid {
    int instances = 0, latent_h = 0, latent_w = 0, codebook_size = 0;
    std::vector<float> probs;  // (I, h', w', K)

    const float* cell(int k, int r, int c) const {
        return probs.data() +
               ((static_cast<int64_t>(k) * latent_h + r) * latent_w + c) * codebook_size;
    }
};

struct RolloutConfig {
    int horizon = 15;
    bool greedy = true;
    float temperature = 1.0f;
    uint64_t seed = 0;
};

// --- latent dataset on disk ---

inline void write_latent_dataset(const fs::path& dir,
                                 const std::vector<LatentClip>& train,
                                 const std::vector<LatentClip>& test, const json& meta) {
    fs::create_directories(dir / "latents");
    json manifest;
    manifest["meta"] = meta;
    manifest["train"] = json::array();
    manifest["test"] = json::array();
    for (const LatentClip& lc : train) {
        harness::write_json_file(dir / "latents" / (lc.clip_id + ".json"), lc.to_json());
        manifest["train"].push_back(lc.clip_id);
    }
    for (const LatentClip& lc : test) {
        harness::write_json_file(dir / "latents" / (lc.clip_id + ".json"), lc.to_json());
        manifest["test"].push_back(lc.clip_id);
    }
    harness::write_json_file(dir / "latents_manifest.json", manifest);
}

struct LatentDataset {
    std::vector<LatentClip> train, test;
    json meta;
};

inline LatentDataset load_latent_dataset(const fs::path& dir) {
    json manifest = harness::dump_json_file(dir / "latents_manifest.json");
    LatentDataset ds;
    ds.meta = manifest.at("meta");
    for (const auto& id : manifest.at("train"))
        ds.train.push_back(LatentClip::from_json(
            harness::dump_json_file(dir / "latents" / (id.get<std::string>() + ".json"))));
    for (const auto& id : manifest.at("test"))
        ds.test.push_back(LatentClip::from_json(
            harness::dump_json_file(dir / "latents" / (id.get<std::string>() + ".json"))));
    return ds;
}

// --- training ---

inline ag::Id embed_instance(ag::Tape& t, PredictorModel& model, const LatentClip& lc,
                             int instance) {
    return model.embed_tokens(t, lc.indices[static_cast<size_t>(instance)],
                              lc.classes[static_cast<size_t>(instance)]);
}

// Teacher-forced cross-entropy over every instance, cell, and step. The
// logits at frame f predict frame f+1.
inline ag::Id build_predictor_loss(ag::Tape& t, PredictorModel& model, const LatentClip& lc) {
    const PredictorConfig& cfg = model.cfg;
    check(lc.frames >= 2, "train_predictor: need at least two frames");
    std::vector<ag::Id> tokens;
    for (int k = 0; k < cfg.num_instances; ++k)
        tokens.push_back(embed_instance(t, model, lc, k));
    std::vector<ag::Id> logits = model.forward(t, tokens);
    int S = cfg.cells();
    ag::Id total = t.input(Tensor::zeros({1}));
    for (int k = 0; k < cfg.num_instances; ++k) {
        ag::Id flat = ag::reshape(t, logits[static_cast<size_t>(k)],
                                  {lc.frames * S, cfg.codebook_size});
        ag::Id context_rows = ag::slice_rows(t, flat, 0, (lc.frames - 1) * S);
        std::vector<int> targets;
        targets.reserve(static_cast<size_t>(lc.frames - 1) * S);
        for (int f = 1; f < lc.frames; ++f)
            for (int i = 0; i < S; ++i)
                targets.push_back(lc.indices[static_cast<size_t>(k)][static_cast<size_t>(f)]
                                            [static_cast<size_t>(i)]);
        total = ag::add(t, total, ag::cross_entropy(t, context_rows, targets));
    }
    return ag::scale(t, total, 1.0f / static_cast<float>(cfg.num_instances));
}

inline PredictorModel train_predictor(const LatentDataset& dataset,
                                      const PredictorConfig& cfg,
                                      const PredictorTrainConfig& train,
                                      const fs::path& out_dir, bool resume = false,
                                      bool quiet = false) {
    fs::create_directories(out_dir);
    PredictorModel model(cfg);
    int start_epoch = 0;
    fs::path ckpt_dir = out_dir / "checkpoint";
    fs::path log_path = out_dir / "loss_log.csv";
    if (resume && fs::exists(ckpt_dir / "checkpoint.json")) {
        json m = harness::load_checkpoint(ckpt_dir, model.params);
        start_epoch = m.value("epochs_completed", 0);
    } else if (!fs::exists(log_path)) {
        std::ofstream log(log_path);
        log << "epoch,cross_entropy\n";
    }
    check(!dataset.train.empty(), "train_predictor: empty latent training split");

    ag::Adam opt(train.lr);
    auto params = model.params.all();
    std::vector<int> order(dataset.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(hash_combine(train.seed, std::string("predictor-shuffle")));
    int64_t total_steps = static_cast<int64_t>(order.size()) * train.epochs;

    for (int epoch = start_epoch; epoch < train.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        int steps = 0;
        for (int idx : order) {
            ag::Tape t;
            ag::Id loss = build_predictor_loss(t, model, dataset.train[static_cast<size_t>(idx)]);
            double v = t.val(loss).at(0);
            if (!std::isfinite(v)) {
                harness::write_json_file(
                    out_dir / "diagnostic.json",
                    json{{"component", "predictor"}, {"epoch", epoch}, {"step", steps}});
                throw std::runtime_error("train_predictor: non-finite loss; snapshot written");
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
            std::cerr << "[predictor] epoch " << epoch << " ce=" << epoch_loss / steps << "\n";
        json extra{{"seed", cfg.seed},
                   {"epochs_completed", epoch + 1},
                   {"train_config", train.to_json()}};
        harness::save_checkpoint(ckpt_dir, "predictor", cfg.to_json(), model.params, extra);
    }
    return model;
}

inline PredictorModel load_predictor(const fs::path& ckpt_dir) {
    json manifest = harness::load_checkpoint_manifest(ckpt_dir);
    check(manifest.at("component") == "predictor", "load_predictor: wrong component");
    PredictorConfig cfg = PredictorConfig::from_json(manifest.at("config"));
    PredictorModel model(cfg);
    harness::load_checkpoint(ckpt_dir, model.params);
    return model;
}

// Distribution over each instance's next-frame indices given a history.
inline CategoricalGrid predictor_forward(PredictorModel& model,
                                         const LatentClip& history) {
    const PredictorConfig& cfg = model.cfg;
    check(history.frames >= 1, "predictor_forward: empty history");
    ag::Tape t;
    std::vector<ag::Id> tokens;
    for (int k = 0; k < cfg.num_instances; ++k)
        tokens.push_back(embed_instance(t, model, history, k));
    std::vector<ag::Id> logits = model.forward(t, tokens);
    int S = cfg.cells();
    CategoricalGrid grid;
    grid.instances = cfg.num_instances;
    grid.latent_h = cfg.latent_h;
    grid.latent_w = cfg.latent_w;
    grid.codebook_size = cfg.codebook_size;
    grid.probs.resize(static_cast<size_t>(cfg.num_instances) * S * cfg.codebook_size);
    for (int k = 0; k < cfg.num_instances; ++k) {
        ag::Id last = ag::slice_rows(
            t, ag::reshape(t, logits[static_cast<size_t>(k)], {history.frames * S, cfg.codebook_size}),
            (history.frames - 1) * S, S);
        ag::Id probs = ag::softmax_lastdim(t, last);
        std::memcpy(grid.probs.data() + static_cast<int64_t>(k) * S * cfg.codebook_size,
                    t.val(probs).data(),
                    static_cast<size_t>(S) * cfg.codebook_size * sizeof(float));
    }
    return grid;
}

// Autoregressive rollout: each predicted frame is appended to the history
// before the next step. Greedy mode takes the per-cell argmax with the
// lowest-index tie break; temperature mode samples with a seeded generator.
inline std::vector<std::vector<std::vector<int>>> rollout(PredictorModel& model,
                                                          const LatentClip& context,
                                                          const RolloutConfig& rc) {
    const PredictorConfig& cfg = model.cfg;
    check(rc.horizon >= 0, "rollout: negative horizon");
    check(context.frames >= 1, "rollout: empty context");
    check(!(!rc.greedy && rc.temperature <= 0.0f), "rollout: temperature must be positive");
    int S = cfg.cells();
    LatentClip history = context;
    std::vector<std::vector<std::vector<int>>> predicted(
        static_cast<size_t>(cfg.num_instances));
    Rng rng(rc.seed);
    for (int step = 0; step < rc.horizon; ++step) {
        CategoricalGrid grid = predictor_forward(model, history);
        for (int k = 0; k < cfg.num_instances; ++k) {
            std::vector<int> frame(static_cast<size_t>(S));
            for (int i = 0; i < S; ++i) {
                const float* p = grid.probs.data() +
                                 (static_cast<int64_t>(k) * S + i) * cfg.codebook_size;
                if (rc.greedy) {
                    int best = 0;
                    for (int j = 1; j < cfg.codebook_size; ++j)
                        if (p[j] > p[best]) best = j;
                    frame[static_cast<size_t>(i)] = best;
                } else {
                    // Temperature re-shaping of the categorical, then inverse
                    // CDF sampling.
                    double inv_t = 1.0 / rc.temperature;
                    std::vector<double> w(static_cast<size_t>(cfg.codebook_size));
                    double z = 0.0;
                    for (int j = 0; j < cfg.codebook_size; ++j) {
                        w[static_cast<size_t>(j)] =
                            std::pow(static_cast<double>(p[j]), inv_t);
                        z += w[static_cast<size_t>(j)];
                    }
                    double u = rng.uniform() * z;
                    double acc = 0.0;
                    int chosen = cfg.codebook_size - 1;
                    for (int j = 0; j < cfg.codebook_size; ++j) {
                        acc += w[static_cast<size_t>(j)];
                        if (u < acc) {
                            chosen = j;
                            break;
                        }
                    }
                    frame[static_cast<size_t>(i)] = chosen;
                }
            }
            predicted[static_cast<size_t>(k)].push_back(frame);
            history.indices[static_cast<size_t>(k)].push_back(std::move(frame));
        }
        history.frames += 1;
    }
    return predicted;
}

}  // namespace occluscat::predictor
