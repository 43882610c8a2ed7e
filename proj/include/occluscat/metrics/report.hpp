#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "occluscat/clip.hpp"
#include "occluscat/metrics/ofd.hpp"
#include "occluscat/metrics/ot.hpp"
#include "occluscat/metrics/psnr_ssim.hpp"
#include "occluscat/oaae/pipeline.hpp"

namespace occluscat::metrics {

using nlohmann::json;

struct MetricSeries {
    std::vector<double> values;

    double mean() const {
        double s = 0.0;
        for (double v : values) s += v;
        return values.empty() ? 0.0 : s / static_cast<double>(values.size());
    }
    // Sample standard deviation (n-1).
    double stddev() const {
        if (values.size() < 2) return 0.0;
        double mu = mean(), s = 0.0;
        for (double v : values) s += (v - mu) * (v - mu);
        return std::sqrt(s / static_cast<double>(values.size() - 1));
    }
    double stderror() const {
        return values.empty() ? 0.0 : stddev() / std::sqrt(static_cast<double>(values.size()));
    }
};

struct MetricRow {
    std::string clip_id;
    std::string metric;
    int frame;  // absolute frame index in the clip; OFD rows use the step's target frame
    double value;
};

struct MetricReport {
    std::string variant;
    json parameters;  // flow params, emd config, alignment metadata
    std::vector<MetricRow> rows;
    int emd_skipped_empty_gt = 0;

    std::map<std::string, MetricSeries> series() const {
        std::map<std::string, MetricSeries> out;
        for (const MetricRow& r : rows) out[r.metric].values.push_back(r.value);
        return out;
    }

    void write_csv(std::ostream& os) const {
        os << "clip_id,metric,frame,value\n";
        for (const MetricRow& r : rows)
            os << r.clip_id << "," << r.metric << "," << r.frame << "," << r.value << "\n";
    }

    json summary() const {
        json metrics = json::object();
        for (const auto& [name, s] : series()) {
            metrics[name] = json{{"mean", s.mean()},
                                 {"stderr", s.stderror()},
                                 {"stddev", s.stddev()},
                                 {"n", s.values.size()}};
        }
        return json{{"variant", variant},
                    {"parameters", parameters},
                    {"metrics", metrics},
                    {"emd_skipped_empty_gt", emd_skipped_empty_gt}};
    }

    void merge(const MetricReport& other) {
        rows.insert(rows.end(), other.rows.begin(), other.rows.end());
        emd_skipped_empty_gt += other.emd_skipped_empty_gt;
    }
};

struct EvalConfig {
    // Which instance EMD is computed on; -1 averages over all non-background
    // instances with nonempty ground truth.
    int emd_instance = 2;
    EmdConfig emd;
    FarnebackParams flow;
    uint64_t seed = 0;

    json to_json() const {
        return json{{"emd_instance", emd_instance},
                    {"emd_normalize", emd.normalize},
                    {"emd_max_support", emd.max_support},
                    {"flow", flow.to_json()}};
    }
};

// Planar [3,H,W] copy of one clip frame.
inline std::vector<float> clip_frame_planar(const Clip& clip, int t) {
    const int64_t hw = clip.hw();
    std::vector<float> out(static_cast<size_t>(3) * hw);
    const float* rgb = clip.rgb_frame(t);
    for (int64_t i = 0; i < hw; ++i)
        for (int ch = 0; ch < 3; ++ch) out[static_cast<size_t>(ch * hw + i)] = rgb[i * 3 + ch];
    return out;
}

// Per-clip evaluation of a predicted horizon against ground truth.
// pred_rgb: planar [3,H,W] frames for t = context .. context+M-1.
// pred_supports: binarized (fallback-completed) mask support per predicted
// frame per instance.
inline MetricReport evaluate_prediction_clip(
    const Clip& gt, int context, const std::vector<std::vector<float>>& pred_rgb,
    const std::vector<std::vector<PixelSet>>& pred_supports, const EvalConfig& cfg,
    const oaae::PerceptualExtractor& extractor) {
    const int M = static_cast<int>(pred_rgb.size());
    check(context >= 1 && context + M <= gt.frames,
          "evaluate_prediction_clip: misaligned frame ranges");
    check(pred_supports.size() == pred_rgb.size(),
          "evaluate_prediction_clip: mask/frames mismatch");
    const int H = gt.height, W = gt.width;
    MetricReport rep;
    rep.parameters = cfg.to_json();

    std::vector<std::vector<float>> pred_gray, gt_gray;
    for (int s = 0; s < M; ++s) {
        int t = context + s;
        std::vector<float> gt_planar = clip_frame_planar(gt, t);
        const std::vector<float>& pr = pred_rgb[static_cast<size_t>(s)];
        check(static_cast<int64_t>(pr.size()) == 3 * gt.hw(),
              "evaluate_prediction_clip: bad prediction shape");
        rep.rows.push_back({gt.clip_id, "psnr", t, psnr(pr.data(), gt_planar.data(), 3, H, W)});
        rep.rows.push_back({gt.clip_id, "ssim", t, ssim(pr.data(), gt_planar.data(), 3, H, W)});
        {
            ag::Tape tape;
            ag::Id pa = tape.input(
                Tensor::from({1, 3, H, W}, std::vector<float>(pr.begin(), pr.end())));
            ag::Id pb = tape.input(Tensor::from({1, 3, H, W}, std::move(gt_planar)));
            rep.rows.push_back(
                {gt.clip_id, "perceptual", t,
                 static_cast<double>(tape.val(oaae::perceptual_loss(tape, pa, pb, extractor))
                                         .at(0))});
        }
        pred_gray.push_back(rgb_to_gray255(pr.data(), H, W));
        std::vector<float> gp = clip_frame_planar(gt, t);
        gt_gray.push_back(rgb_to_gray255(gp.data(), H, W));

        // EMD on the configured instance(s); frames whose ground-truth mask
        // is empty are skipped and counted.
        auto emd_for_instance = [&](int k) -> std::pair<bool, double> {
            PixelSet gt_support = mask_support(gt.mask(k, t), H, W);
            if (gt_support.empty()) return {false, 0.0};
            const PixelSet& pred_support =
                pred_supports[static_cast<size_t>(s)][static_cast<size_t>(k)];
            EmdConfig ec = cfg.emd;
            ec.seed = hash_combine(cfg.emd.seed, gt.clip_id + ":" + std::to_string(t) + ":" +
                                                     std::to_string(k));
            return {true, emd_masks(pred_support, gt_support, H, W, ec)};
        };
        if (cfg.emd_instance >= 0) {
            auto [ok, v] = emd_for_instance(cfg.emd_instance);
            if (ok)
                rep.rows.push_back({gt.clip_id, "emd", t, v});
            else
                ++rep.emd_skipped_empty_gt;
        } else {
            double sum = 0.0;
            int cnt = 0;
            for (int k = 0; k < gt.num_instances; ++k) {
                if (gt.classes[static_cast<size_t>(k)] == 0) continue;  // background
                auto [ok, v] = emd_for_instance(k);
                if (ok) {
                    sum += v;
                    ++cnt;
                }
            }
            if (cnt > 0)
                rep.rows.push_back({gt.clip_id, "emd", t, sum / cnt});
            else
                ++rep.emd_skipped_empty_gt;
        }
    }

    std::vector<float> last_ctx_planar = clip_frame_planar(gt, context - 1);
    std::vector<float> last_ctx_gray = rgb_to_gray255(last_ctx_planar.data(), H, W);
    std::vector<double> ofd_steps =
        ofd_per_step(pred_gray, gt_gray, last_ctx_gray, H, W, cfg.flow);
    for (int s = 0; s < M; ++s)
        rep.rows.push_back({gt.clip_id, "ofd", context + s, ofd_steps[static_cast<size_t>(s)]});
    return rep;
}

// Appendix-style autoencoder study: encode and decode every frame (no
// prediction) and report appearance metrics on the RGB channels.
inline MetricReport evaluate_reconstruction(const Clip& clip, oaae::OaaeModel& model) {
    check(clip.num_instances == model.cfg.num_instances,
          "evaluate_reconstruction: instance count mismatch");
    MetricReport rep;
    rep.variant = model.cfg.variant.name();
    LatentClip lc = oaae::encode_clip(model, clip);
    Tensor decoded = oaae::decode_latent_frames(model, lc.indices, 0, clip.frames);
    const int H = clip.height, W = clip.width;
    const int C = model.cfg.variant.channels();
    const int64_t hw = clip.hw();
    for (int t = 0; t < clip.frames; ++t) {
        std::vector<float> pred(static_cast<size_t>(3) * hw);
        const float* frame = decoded.data() + static_cast<int64_t>(t) * C * hw;
        for (int64_t i = 0; i < 3 * hw; ++i)
            pred[static_cast<size_t>(i)] = std::clamp(frame[i], 0.0f, 1.0f);
        std::vector<float> gt_planar = clip_frame_planar(clip, t);
        rep.rows.push_back(
            {clip.clip_id, "psnr", t, psnr(pred.data(), gt_planar.data(), 3, H, W)});
        rep.rows.push_back(
            {clip.clip_id, "ssim", t, ssim(pred.data(), gt_planar.data(), 3, H, W)});
        ag::Tape tape;
        ag::Id pa = tape.input(Tensor::from({1, 3, H, W}, std::move(pred)));
        ag::Id pb = tape.input(Tensor::from({1, 3, H, W}, std::move(gt_planar)));
        rep.rows.push_back(
            {clip.clip_id, "perceptual", t,
             static_cast<double>(
                 tape.val(oaae::perceptual_loss(tape, pa, pb, model.perceptual)).at(0))});
    }
    return rep;
}

// Uncalibrated perceptual distance over the pluggable extractor.
inline double perceptual_distance(const std::vector<float>& rgb_a,
                                  const std::vector<float>& rgb_b, int height, int width,
                                  const oaae::PerceptualExtractor& extractor) {
    check(rgb_a.size() == rgb_b.size() &&
              rgb_a.size() == static_cast<size_t>(3) * height * width,
          "perceptual_distance: shape mismatch");
    ag::Tape tape;
    ag::Id a = tape.input(Tensor::from({1, 3, height, width},
                                       std::vector<float>(rgb_a.begin(), rgb_a.end())));
    ag::Id b = tape.input(Tensor::from({1, 3, height, width},
                                       std::vector<float>(rgb_b.begin(), rgb_b.end())));
    return static_cast<double>(tape.val(oaae::perceptual_loss(tape, a, b, extractor)).at(0));
}

}  // namespace occluscat::metrics
