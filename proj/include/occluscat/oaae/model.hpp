#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "occluscat/core/attention.hpp"
#include "occluscat/core/conv.hpp"
#include "occluscat/core/ops.hpp"
#include "occluscat/core/params.hpp"
#include "occluscat/core/layers.hpp"
#include "occluscat/modality/decompose.hpp"

namespace occluscat::oaae {

using nlohmann::json;
using modality::VariantConfig;

struct OaaeConfig {
    VariantConfig variant;
    int num_classes = 2;
    int num_instances = 3;
    std::vector<int> instance_classes = {0, 1, 1};  // fixed instance order
    int image_size = 64;
    int codebook_size = 256;  // K
    int embed_dim = 64;       // D
    std::array<int, 4> enc_widths = {24, 32, 48, 64};
    std::array<int, 4> dec_widths = {64, 48, 32, 24};
    uint64_t seed = 0;

    int latent_size() const { return image_size / 8; }  // three stride-2 stages
    int latent_cells() const { return latent_size() * latent_size(); }
    int composed_depth() const { return num_instances * embed_dim; }

    json to_json() const {
        return json{{"variant", variant.name()},
                    {"num_classes", num_classes},
                    {"num_instances", num_instances},
                    {"instance_classes", instance_classes},
                    {"image_size", image_size},
                    {"codebook_size", codebook_size},
                    {"embed_dim", embed_dim},
                    {"enc_widths", enc_widths},
                    {"dec_widths", dec_widths},
                    {"seed", seed}};
    }

    static OaaeConfig from_json(const json& j) {
        OaaeConfig c;
        c.variant = VariantConfig::from_name(j.at("variant").get<std::string>());
        c.num_classes = j.at("num_classes").get<int>();
        c.num_instances = j.at("num_instances").get<int>();
        c.instance_classes = j.at("instance_classes").get<std::vector<int>>();
        c.image_size = j.at("image_size").get<int>();
        c.codebook_size = j.at("codebook_size").get<int>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.enc_widths = j.at("enc_widths").get<std::array<int, 4>>();
        c.dec_widths = j.at("dec_widths").get<std::array<int, 4>>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }
};



// Residual frame encoder for one semantic class: three stride-2 stages map
// (C, S, S) to (D, S/8, S/8).
struct ClassEncoder {
    nn::ConvGN stem;
    std::array<nn::ConvGN, 3> down;
    std::array<nn::ResUnit, 3> res;
    ag::Parameter* head_w = nullptr;
    ag::Parameter* head_b = nullptr;

    ag::Id forward(ag::Tape& t, ag::Id x) const {
        ag::Id h = stem.forward(t, x);
        for (int i = 0; i < 3; ++i) {
            h = down[i].forward(t, h);
            h = res[i].forward(t, h);
        }
        return ag::conv2d(t, h, t.leaf(*head_w), t.leaf(*head_b), 1, 0);
    }
};

// Joint decoder: composed latent (I*D, s, s) back to the full modality stack.
struct JointDecoder {
    nn::ConvGN stem;
    nn::ResUnit stem_res;
    std::array<nn::ConvGN, 3> up;
    std::array<nn::ResUnit, 2> res;
    ag::Parameter* out_w = nullptr;
    ag::Parameter* out_b = nullptr;

    ag::Id forward(ag::Tape& t, ag::Id z) const {
        ag::Id h = stem.forward(t, z);
        h = stem_res.forward(t, h);
        h = up[0].forward(t, h);
        h = res[0].forward(t, h);
        h = up[1].forward(t, h);
        h = res[1].forward(t, h);
        h = up[2].forward(t, h);
        return ag::conv2d(t, h, t.leaf(*out_w), t.leaf(*out_b), 1, 1);
    }
};

// Fixed, seed-initialized multi-scale feature extractor standing in for a
// pretrained perceptual backbone; weights are constants, never trained.
struct PerceptualExtractor {
    std::vector<Tensor> weights;  // conv stack, stride 2 each
    std::vector<Tensor> biases;

    static PerceptualExtractor build(uint64_t seed) {
        PerceptualExtractor e;
        Rng rng(hash_combine(seed, std::string("perceptual")));
        std::array<std::array<int, 2>, 3> io = {{{3, 12}, {12, 24}, {24, 32}}};
        for (auto [cin, cout] : io) {
            e.weights.push_back(ag::he_init({cout, cin, 3, 3}, rng));
            e.biases.push_back(Tensor::zeros({cout}));
        }
        return e;
    }

    int layers() const { return static_cast<int>(weights.size()); }

    // Feature maps after each stride-2 conv (ReLU in between).
    std::vector<ag::Id> features(ag::Tape& t, ag::Id rgb) const {
        std::vector<ag::Id> out;
        ag::Id h = rgb;
        for (size_t l = 0; l < weights.size(); ++l) {
            if (l > 0) h = ag::relu(t, h);
            h = ag::conv2d(t, h, t.input(weights[l]), t.input(biases[l]), 2, 1);
            out.push_back(h);
        }
        return out;
    }
};

// Nearest codebook row per cell (squared Euclidean), ties to the lowest
// index. cells: [N, D]; codebook: [K, D].
inline std::vector<int> quantize_indices(const Tensor& cells, const Tensor& codebook) {
    check(cells.ndim() == 2 && codebook.ndim() == 2, "quantize: expect 2D");
    check(cells.dim(1) == codebook.dim(1), "quantize: dim mismatch");
    int n = cells.dim(0), k = codebook.dim(0), d = cells.dim(1);
    std::vector<float> dots(static_cast<size_t>(n) * k);
    gemm(cells.data(), codebook.data(), dots.data(), n, d, k, false, true);
    std::vector<double> cb_norm(k, 0.0);
    for (int j = 0; j < k; ++j) {
        const float* row = codebook.data() + static_cast<int64_t>(j) * d;
        for (int i = 0; i < d; ++i) cb_norm[j] += static_cast<double>(row[i]) * row[i];
    }
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) {
        const float* dot = dots.data() + static_cast<int64_t>(i) * k;
        int best = 0;
        double best_d = cb_norm[0] - 2.0 * dot[0];
        for (int j = 1; j < k; ++j) {
            double dist = cb_norm[j] - 2.0 * dot[j];
            if (dist < best_d) {
                best_d = dist;
                best = j;
            }
        }
        idx[i] = best;
    }
    return idx;
}

// Quantized rows for an index grid, as a plain tensor (inference path).
inline Tensor gather_codebook(const Tensor& codebook, const std::vector<int>& idx) {
    int d = codebook.dim(1);
    Tensor out({static_cast<int>(idx.size()), d});
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + i * d, codebook.data() + static_cast<int64_t>(idx[i]) * d,
                    static_cast<size_t>(d) * sizeof(float));
    return out;
}

class OaaeModel {
  public:
    OaaeConfig cfg;
    ag::ParamRegistry params;
    std::vector<ClassEncoder> encoders;     // per class
    JointDecoder decoder;
    std::vector<ag::Parameter*> codebooks;  // per class, [K, D]
    PerceptualExtractor perceptual;

    explicit OaaeModel(const OaaeConfig& config) : cfg(config) {
        Rng rng(cfg.seed);
        const auto& ew = cfg.enc_widths;
        for (int c = 0; c < cfg.num_classes; ++c) {
            std::string base = "enc" + std::to_string(c);
            ClassEncoder enc;
            enc.stem = nn::make_conv_gn(params, rng, base + ".stem",
                                            cfg.variant.channels(), ew[0], 3, 1, 1);
            for (int i = 0; i < 3; ++i) {
                enc.down[i] = nn::make_conv_gn(
                    params, rng, base + ".down" + std::to_string(i), ew[i], ew[i + 1], 3, 2, 1);
                enc.res[i].conv = nn::make_conv_gn(
                    params, rng, base + ".res" + std::to_string(i), ew[i + 1], ew[i + 1], 3, 1,
                    1);
            }
            enc.head_w =
                &params.add(base + ".head.w",
                            ag::he_init({cfg.embed_dim, ew[3], 1, 1}, rng, /*gain=*/0.5f));
            enc.head_b = &params.add(base + ".head.b", Tensor::zeros({cfg.embed_dim}));
            encoders.push_back(enc);
            codebooks.push_back(&params.add(
                "codebook" + std::to_string(c),
                Tensor::randn({cfg.codebook_size, cfg.embed_dim}, rng,
                              1.0f / std::sqrt(static_cast<float>(cfg.embed_dim)))));
        }
        const auto& dw = cfg.dec_widths;
        decoder.stem = nn::make_conv_gn(params, rng, "dec.stem", cfg.composed_depth(),
                                            dw[0], 1, 1, 0);
        decoder.stem_res.conv =
            nn::make_conv_gn(params, rng, "dec.stem_res", dw[0], dw[0], 3, 1, 1);
        for (int i = 0; i < 3; ++i)
            decoder.up[i] = nn::make_conv_gn(params, rng, "dec.up" + std::to_string(i),
                                                 dw[i], dw[i + 1], 2, 2, 0,
                                                 /*transposed=*/true);
        for (int i = 0; i < 2; ++i)
            decoder.res[i].conv = nn::make_conv_gn(
                params, rng, "dec.res" + std::to_string(i), dw[i + 1], dw[i + 1], 3, 1, 1);
        decoder.out_w = &params.add(
            "dec.out.w", ag::he_init({cfg.variant.channels(), dw[3], 3, 3}, rng, 0.5f));
        decoder.out_b = &params.add("dec.out.b", Tensor::zeros({cfg.variant.channels()}));
        perceptual = PerceptualExtractor::build(cfg.seed);
    }

    // Continuous latent grid for a batch of same-class instance stacks.
    ag::Id encode_instance(ag::Tape& t, ag::Id stacks, int class_id) const {
        check(class_id >= 0 && class_id < cfg.num_classes, "encode_instance: unknown class");
        check(t.val(stacks).dim(1) == cfg.variant.channels(),
              "encode_instance: channel count does not match variant");
        return encoders[static_cast<size_t>(class_id)].forward(t, stacks);
    }

    ag::Id decode_frames(ag::Tape& t, ag::Id composed) const {
        check(t.val(composed).dim(1) == cfg.composed_depth(),
              "decode_frames: latent depth mismatch");
        return decoder.forward(t, composed);
    }
};

// Splits a composed per-frame latent [cells, I*D] back into per-instance
// grids (the inverse of concatenation along the embedding axis).
inline std::vector<Tensor> decompose_latent(const Tensor& z, int instances, int embed_dim) {
    check(z.ndim() == 2 && z.dim(1) == instances * embed_dim, "decompose_latent: bad shape");
    int cells = z.dim(0);
    std::vector<Tensor> out;
    for (int k = 0; k < instances; ++k) {
        Tensor part({cells, embed_dim});
        for (int i = 0; i < cells; ++i)
            std::memcpy(part.data() + static_cast<int64_t>(i) * embed_dim,
                        z.data() + static_cast<int64_t>(i) * instances * embed_dim +
                            k * embed_dim,
                        static_cast<size_t>(embed_dim) * sizeof(float));
        out.push_back(std::move(part));
    }
    return out;
}

}  // namespace occluscat::oaae
