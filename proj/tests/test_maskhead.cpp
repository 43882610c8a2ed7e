#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "occluscat/maskhead/pipeline.hpp"

using namespace occluscat;
using namespace occluscat::maskhead;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    synth::DatasetManifest manifest;
    std::vector<Clip> train_clips, test_clips;
    std::vector<LatentClip> train_latents, test_latents;
    oaae::OaaeModel oaae_model;
    fs::path data_dir;

    static Fixture make() {
        synth::GenerationConfig dcfg;
        dcfg.n_train = 4;
        dcfg.n_test = 2;
        dcfg.height = 32;
        dcfg.width = 32;
        dcfg.frames = 8;
        dcfg.track_grid_stride = 4;
        dcfg.occlusion_frame_min = 3;
        dcfg.occlusion_frame_max = 5;
        dcfg.seed = 31;
        fs::path dir = fs::temp_directory_path() / "occluscat_maskhead_data";
        fs::remove_all(dir);
        synth::DatasetManifest manifest = synth::generate_dataset(dcfg, dir);

        oaae::OaaeConfig cfg;
        cfg.variant = modality::VariantConfig::from_name("SCAT");
        cfg.image_size = 32;
        cfg.codebook_size = 16;
        cfg.embed_dim = 8;
        cfg.enc_widths = {8, 8, 8, 8};
        cfg.dec_widths = {8, 8, 8, 8};
        cfg.seed = 3;
        oaae::OaaeTrainConfig tr;
        tr.epochs = 2;
        tr.lr = 2e-3f;
        tr.seed = 3;
        fs::path run = fs::temp_directory_path() / "occluscat_maskhead_oaae";
        fs::remove_all(run);
        oaae::OaaeModel model = oaae::train_oaae(manifest, cfg, tr, run, false, true);

        Fixture f{manifest, {}, {}, {}, {}, std::move(model), dir};
        f.train_clips = oaae::load_split(manifest, manifest.train_ids);
        f.test_clips = oaae::load_split(manifest, manifest.test_ids);
        for (const Clip& c : f.train_clips)
            f.train_latents.push_back(oaae::encode_clip(f.oaae_model, c));
        for (const Clip& c : f.test_clips)
            f.test_latents.push_back(oaae::encode_clip(f.oaae_model, c));
        return f;
    }
};

double mover_iou(MaskHeadModel& head, oaae::OaaeModel& om, const std::vector<Clip>& clips,
                 const std::vector<LatentClip>& latents) {
    double inter = 0.0, uni = 0.0;
    for (size_t i = 0; i < clips.size(); ++i) {
        for (int t = 0; t < clips[i].frames; ++t) {
            auto preds = predict_masks(head, om, latents[i], t);
            const Clip& clip = clips[i];
            for (int k = 0; k < clip.num_instances; ++k) {
                const uint8_t* gt = clip.mask(k, t);
                const MaskPrediction& mp = preds[static_cast<size_t>(k)];
                for (int64_t px = 0; px < clip.hw(); ++px) {
                    bool p = mp.soft[static_cast<size_t>(px)] > 0.5f;
                    bool g = gt[px] != 0;
                    inter += (p && g);
                    uni += (p || g);
                }
            }
        }
    }
    return uni > 0 ? inter / uni : 0.0;
}

}  // namespace

TEST(MaskHead, TrainImprovesIoUAndRoundTrips) {
    Fixture f = Fixture::make();

    MaskTrainConfig tr;
    tr.epochs = 25;
    tr.lr = 5e-3f;
    tr.seed = 7;
    fs::path out = fs::temp_directory_path() / "occluscat_maskhead_run";
    fs::remove_all(out);

    // Untrained baseline IoU on held-out clips.
    MaskHeadConfig cfg;
    cfg.embed_dim = f.oaae_model.cfg.embed_dim;
    cfg.latent_size = f.oaae_model.cfg.latent_size();
    cfg.image_size = f.oaae_model.cfg.image_size;
    cfg.seed = hash_combine(tr.seed, std::string("maskhead"));
    MaskHeadModel untrained(cfg);
    double iou_before = mover_iou(untrained, f.oaae_model, f.test_clips, f.test_latents);

    MaskHeadModel trained =
        train_maskhead(f.train_clips, f.train_latents, f.oaae_model, tr, out, true);
    double iou_after = mover_iou(trained, f.oaae_model, f.test_clips, f.test_latents);
    EXPECT_GT(iou_after, iou_before);

    // Final epoch BCE < first epoch BCE.
    std::ifstream log(out / "loss_log.csv");
    std::string line;
    std::getline(log, line);
    std::vector<double> bce;
    while (std::getline(log, line)) bce.push_back(std::stod(line.substr(line.find(',') + 1)));
    ASSERT_EQ(bce.size(), 25u);
    EXPECT_LT(bce.back(), bce.front());

    // Round trip is bitwise identical.
    MaskHeadModel loaded = load_maskhead(out / "checkpoint");
    for (const auto& [name, p] : trained.params.by_name()) {
        ag::Parameter& q = loaded.params.get(name);
        for (int64_t i = 0; i < p->value.numel(); ++i)
            ASSERT_EQ(p->value.at(i), q.value.at(i)) << name;
    }

    // Evaluation-only contract: training the head never touches OAAE grads.
    for (auto* p : f.oaae_model.params.all())
        for (int64_t i = 0; i < p->grad.numel(); ++i) ASSERT_EQ(p->grad.at(i), 0.0f);

    fs::remove_all(out);
    fs::remove_all(f.data_dir);
    fs::remove_all(fs::temp_directory_path() / "occluscat_maskhead_oaae");
}

TEST(MaskHead, PredictionContract) {
    Fixture f = Fixture::make();
    MaskHeadConfig cfg;
    cfg.embed_dim = f.oaae_model.cfg.embed_dim;
    cfg.latent_size = f.oaae_model.cfg.latent_size();
    cfg.image_size = f.oaae_model.cfg.image_size;
    cfg.seed = 5;
    MaskHeadModel head(cfg);

    auto preds = predict_masks(head, f.oaae_model, f.test_latents[0], 0);
    ASSERT_EQ(preds.size(), 3u);
    for (const MaskPrediction& mp : preds) {
        EXPECT_EQ(mp.height, 32);
        EXPECT_EQ(mp.width, 32);
        for (float v : mp.soft) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
        EXPECT_FALSE(mp.support().empty());
    }

    // Deterministic across repeated calls.
    auto again = predict_masks(head, f.oaae_model, f.test_latents[0], 0);
    for (size_t k = 0; k < preds.size(); ++k) EXPECT_EQ(preds[k].soft, again[k].soft);

    // All-negative logits collapse to the single argmax fallback pixel.
    head.params.get("out.w").value.fill(0.0f);
    head.params.get("out.b").value.fill(-10.0f);
    auto fallback = predict_masks(head, f.oaae_model, f.test_latents[0], 0);
    for (const MaskPrediction& mp : fallback) {
        auto support = mp.support();
        ASSERT_EQ(support.size(), 1u);
        EXPECT_EQ(support[0], mp.fallback_pixel);
    }

    fs::remove_all(f.data_dir);
    fs::remove_all(fs::temp_directory_path() / "occluscat_maskhead_oaae");
}
