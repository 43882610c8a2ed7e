#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "occluscat/core/attention.hpp"
#include "occluscat/core/conv.hpp"
#include "occluscat/core/ops.hpp"
#include "occluscat/core/params.hpp"
#include "occluscat/latent.hpp"

namespace occluscat::predictor {

using nlohmann::json;

struct PredictorConfig {
    int num_classes = 2;
    int num_instances = 3;
    std::vector<int> instance_classes = {0, 1, 1};
    int codebook_size = 256;  // K
    int latent_h = 8, latent_w = 8;
    int d_model = 128;
    int heads = 4;
    int blocks_per_class = 4;
    int mlp_ratio = 3;
    int max_frames = 32;
    uint64_t seed = 0;

    int cells() const { return latent_h * latent_w; }

    json to_json() const {
        return json{{"num_classes", num_classes},
                    {"num_instances", num_instances},
                    {"instance_classes", instance_classes},
                    {"codebook_size", codebook_size},
                    {"latent_h", latent_h},
                    {"latent_w", latent_w},
                    {"d_model", d_model},
                    {"heads", heads},
                    {"blocks_per_class", blocks_per_class},
                    {"mlp_ratio", mlp_ratio},
                    {"max_frames", max_frames},
                    {"seed", seed}};
    }

    static PredictorConfig from_json(const json& j) {
        PredictorConfig c;
        c.num_classes = j.at("num_classes").get<int>();
        c.num_instances = j.at("num_instances").get<int>();
        c.instance_classes = j.at("instance_classes").get<std::vector<int>>();
        c.codebook_size = j.at("codebook_size").get<int>();
        c.latent_h = j.at("latent_h").get<int>();
        c.latent_w = j.at("latent_w").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.heads = j.at("heads").get<int>();
        c.blocks_per_class = j.at("blocks_per_class").get<int>();
        c.mlp_ratio = j.at("mlp_ratio").get<int>();
        c.max_frames = j.at("max_frames").get<int>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }
};

namespace detail {

struct LayerNormP {
    ag::Parameter* gamma = nullptr;
    ag::Parameter* beta = nullptr;
    ag::Id forward(ag::Tape& t, ag::Id x) const {
        return ag::layer_norm(t, x, t.leaf(*gamma), t.leaf(*beta));
    }
};

inline LayerNormP make_ln(ag::ParamRegistry& reg, const std::string& name, int d) {
    return {&reg.add(name + ".gamma", Tensor::full({d}, 1.0f)),
            &reg.add(name + ".beta", Tensor::zeros({d}))};
}

struct AttentionProj {
    ag::Parameter *wq = nullptr, *bq = nullptr;
    ag::Parameter *wk = nullptr, *bk = nullptr;
    ag::Parameter *wv = nullptr, *bv = nullptr;
    ag::Parameter *wo = nullptr, *bo = nullptr;  // absent for cross-attention
};

inline AttentionProj make_proj(ag::ParamRegistry& reg, Rng& rng, const std::string& name,
                               int d, bool with_out) {
    AttentionProj p;
    p.wq = &reg.add(name + ".wq", ag::he_init({d, d}, rng, 0.5f));
    p.bq = &reg.add(name + ".bq", Tensor::zeros({d}));
    p.wk = &reg.add(name + ".wk", ag::he_init({d, d}, rng, 0.5f));
    p.bk = &reg.add(name + ".bk", Tensor::zeros({d}));
    p.wv = &reg.add(name + ".wv", ag::he_init({d, d}, rng, 0.5f));
    p.bv = &reg.add(name + ".bv", Tensor::zeros({d}));
    if (with_out) {
        p.wo = &reg.add(name + ".wo", ag::he_init({d, d}, rng, 0.25f));
        p.bo = &reg.add(name + ".bo", Tensor::zeros({d}));
    }
    return p;
}

struct Block {
    LayerNormP ln_spatial, ln_temporal, ln_cross, ln_mlp;
    AttentionProj sa_spatial, sa_temporal, cross;
    ag::Parameter* cross_reduce_w = nullptr;
    ag::Parameter* cross_reduce_b = nullptr;
    ag::Parameter *mlp_w1 = nullptr, *mlp_b1 = nullptr;
    ag::Parameter *mlp_w2 = nullptr, *mlp_b2 = nullptr;
};

}  // namespace detail

// Class-attended latent transformer: per-class blocks of factorized
// (spatial, then causal temporal) self-attention, same-frame cross-attention
// over the other instances with concatenate-and-reduce, and an MLP.
class PredictorModel {
  public:
    PredictorConfig cfg;
    ag::ParamRegistry params;

    explicit PredictorModel(const PredictorConfig& config) : cfg(config) {
        check(cfg.d_model % cfg.heads == 0, "predictor: width not divisible by heads");
        Rng rng(cfg.seed);
        const int d = cfg.d_model;
        for (int c = 0; c < cfg.num_classes; ++c) {
            std::string base = "cls" + std::to_string(c);
            token_embed_.push_back(&params.add(
                base + ".token_embed",
                Tensor::randn({cfg.codebook_size, d}, rng, 0.02f)));
            std::vector<detail::Block> blocks;
            for (int b = 0; b < cfg.blocks_per_class; ++b) {
                std::string bb = base + ".block" + std::to_string(b);
                detail::Block blk;
                blk.ln_spatial = detail::make_ln(params, bb + ".ln_sp", d);
                blk.ln_temporal = detail::make_ln(params, bb + ".ln_t", d);
                blk.ln_cross = detail::make_ln(params, bb + ".ln_x", d);
                blk.ln_mlp = detail::make_ln(params, bb + ".ln_mlp", d);
                blk.sa_spatial = detail::make_proj(params, rng, bb + ".sa_sp", d, true);
                blk.sa_temporal = detail::make_proj(params, rng, bb + ".sa_t", d, true);
                blk.cross = detail::make_proj(params, rng, bb + ".ca", d, false);
                int partners = std::max(1, cfg.num_instances - 1);
                blk.cross_reduce_w = &params.add(bb + ".ca_reduce.w",
                                                 ag::he_init({d, partners * d}, rng, 0.25f));
                blk.cross_reduce_b = &params.add(bb + ".ca_reduce.b", Tensor::zeros({d}));
                blk.mlp_w1 =
                    &params.add(bb + ".mlp.w1", ag::he_init({cfg.mlp_ratio * d, d}, rng));
                blk.mlp_b1 = &params.add(bb + ".mlp.b1", Tensor::zeros({cfg.mlp_ratio * d}));
                blk.mlp_w2 = &params.add(bb + ".mlp.w2",
                                         ag::he_init({d, cfg.mlp_ratio * d}, rng, 0.25f));
                blk.mlp_b2 = &params.add(bb + ".mlp.b2", Tensor::zeros({d}));
                blocks.push_back(blk);
            }
            blocks_.push_back(std::move(blocks));
            head_ln_.push_back(detail::make_ln(params, base + ".head_ln", d));
            head_w_.push_back(
                &params.add(base + ".head.w", ag::he_init({cfg.codebook_size, d}, rng, 0.1f)));
            head_b_.push_back(&params.add(base + ".head.b", Tensor::zeros({cfg.codebook_size})));
        }
        // Learned additive positions for (t, h', w'), shared across classes.
        pos_time_ = &params.add("pos.time", Tensor::randn({cfg.max_frames, d}, rng, 0.02f));
        pos_row_ = &params.add("pos.row", Tensor::randn({cfg.latent_h, d}, rng, 0.02f));
        pos_col_ = &params.add("pos.col", Tensor::randn({cfg.latent_w, d}, rng, 0.02f));
    }

    // Token features for one instance's index grids: [T, S, d].
    ag::Id embed_tokens(ag::Tape& t, const std::vector<std::vector<int>>& grids,
                        int class_id) const {
        int T = static_cast<int>(grids.size());
        check(T <= cfg.max_frames, "predictor: sequence longer than max_frames");
        int S = cfg.cells();
        std::vector<int> flat;
        flat.reserve(static_cast<size_t>(T) * S);
        std::vector<int> tpos, rpos, cpos;
        for (int f = 0; f < T; ++f) {
            check(static_cast<int>(grids[static_cast<size_t>(f)].size()) == S,
                  "predictor: grid cell count mismatch");
            for (int i = 0; i < S; ++i) {
                int idx = grids[static_cast<size_t>(f)][static_cast<size_t>(i)];
                check(idx >= 0 && idx < cfg.codebook_size, "predictor: index out of range");
                flat.push_back(idx);
                tpos.push_back(f);
                rpos.push_back(i / cfg.latent_w);
                cpos.push_back(i % cfg.latent_w);
            }
        }
        ag::Id tok = ag::gather_rows(t, t.leaf(*token_embed_[static_cast<size_t>(class_id)]),
                                     flat);
        ag::Id pt = ag::gather_rows(t, t.leaf(*pos_time_), tpos);
        ag::Id pr = ag::gather_rows(t, t.leaf(*pos_row_), rpos);
        ag::Id pc = ag::gather_rows(t, t.leaf(*pos_col_), cpos);
        ag::Id sum = ag::add(t, ag::add(t, tok, pt), ag::add(t, pr, pc));
        return ag::reshape(t, sum, {T, S, cfg.d_model});
    }

    // Per-instance logits [T, S, K]; the entry at frame f parameterizes the
    // categorical over frame f+1's index at the same cell.
    std::vector<ag::Id> forward(ag::Tape& t, const std::vector<ag::Id>& tokens) const {
        check(static_cast<int>(tokens.size()) == cfg.num_instances,
              "predictor: instance count mismatch");
        std::vector<ag::Id> x = tokens;
        for (int b = 0; b < cfg.blocks_per_class; ++b) {
            // Self-attention sub-layers run per instance.
            std::vector<ag::Id> after_self(x.size());
            for (int k = 0; k < cfg.num_instances; ++k) {
                const detail::Block& blk =
                    blocks_[static_cast<size_t>(cfg.instance_classes[static_cast<size_t>(k)])]
                           [static_cast<size_t>(b)];
                ag::Id h = x[static_cast<size_t>(k)];
                h = ag::add(t, h, self_attend_spatial(t, blk, h));
                h = ag::add(t, h, self_attend_temporal(t, blk, h));
                after_self[static_cast<size_t>(k)] = h;
            }
            // Cross-attention reads the partners' post-self-attention state.
            std::vector<ag::Id> after_cross(x.size());
            for (int k = 0; k < cfg.num_instances; ++k) {
                const detail::Block& blk =
                    blocks_[static_cast<size_t>(cfg.instance_classes[static_cast<size_t>(k)])]
                           [static_cast<size_t>(b)];
                ag::Id h = after_self[static_cast<size_t>(k)];
                if (cfg.num_instances > 1)
                    h = ag::add(t, h, cross_attend(t, blk, after_self, k));
                const detail::Block& mblk = blk;
                ag::Id m = mblk.ln_mlp.forward(t, h);
                m = ag::linear(t, m, t.leaf(*mblk.mlp_w1), t.leaf(*mblk.mlp_b1));
                m = ag::gelu(t, m);
                m = ag::linear(t, m, t.leaf(*mblk.mlp_w2), t.leaf(*mblk.mlp_b2));
                after_cross[static_cast<size_t>(k)] = ag::add(t, h, m);
            }
            x = after_cross;
        }
        std::vector<ag::Id> logits;
        for (int k = 0; k < cfg.num_instances; ++k) {
            int c = cfg.instance_classes[static_cast<size_t>(k)];
            ag::Id h = head_ln_[static_cast<size_t>(c)].forward(t, x[static_cast<size_t>(k)]);
            logits.push_back(ag::linear(t, h, t.leaf(*head_w_[static_cast<size_t>(c)]),
                                        t.leaf(*head_b_[static_cast<size_t>(c)])));
        }
        return logits;
    }

  private:
    ag::Id project(ag::Tape& t, ag::Id x, ag::Parameter* w, ag::Parameter* b) const {
        return ag::linear(t, x, t.leaf(*w), t.leaf(*b));
    }

    // Attention over cells within each frame.
    ag::Id self_attend_spatial(ag::Tape& t, const detail::Block& blk, ag::Id x) const {
        ag::Id n = blk.ln_spatial.forward(t, x);
        ag::Id q = ag::split_heads(t, project(t, n, blk.sa_spatial.wq, blk.sa_spatial.bq),
                                   cfg.heads);
        ag::Id k = ag::split_heads(t, project(t, n, blk.sa_spatial.wk, blk.sa_spatial.bk),
                                   cfg.heads);
        ag::Id v = ag::split_heads(t, project(t, n, blk.sa_spatial.wv, blk.sa_spatial.bv),
                                   cfg.heads);
        ag::Id o = ag::merge_heads(t, ag::attention(t, q, k, v, /*causal=*/false), cfg.heads);
        return project(t, o, blk.sa_spatial.wo, blk.sa_spatial.bo);
    }

    // Strictly causal attention across frames at a fixed cell.
    ag::Id self_attend_temporal(ag::Tape& t, const detail::Block& blk, ag::Id x) const {
        ag::Id n = blk.ln_temporal.forward(t, x);
        ag::Id nt = ag::transpose01(t, n);  // [S, T, d]
        ag::Id q = ag::split_heads(t, project(t, nt, blk.sa_temporal.wq, blk.sa_temporal.bq),
                                   cfg.heads);
        ag::Id k = ag::split_heads(t, project(t, nt, blk.sa_temporal.wk, blk.sa_temporal.bk),
                                   cfg.heads);
        ag::Id v = ag::split_heads(t, project(t, nt, blk.sa_temporal.wv, blk.sa_temporal.bv),
                                   cfg.heads);
        ag::Id o = ag::merge_heads(t, ag::attention(t, q, k, v, /*causal=*/true), cfg.heads);
        return ag::transpose01(t, o);
    }

    // Same-frame attention against each other instance; the concatenated
    // (I-1)-wide result is reduced back to width d by a learned linear map.
    ag::Id cross_attend(ag::Tape& t, const detail::Block& blk, const std::vector<ag::Id>& all,
                        int k) const {
        ag::Id nq = blk.ln_cross.forward(t, all[static_cast<size_t>(k)]);
        ag::Id q = ag::split_heads(t, project(t, nq, blk.cross.wq, blk.cross.bq), cfg.heads);
        std::vector<ag::Id> partner_outputs;
        for (int i = 0; i < cfg.num_instances; ++i) {
            if (i == k) continue;
            ag::Id ni = blk.ln_cross.forward(t, all[static_cast<size_t>(i)]);
            ag::Id kk = ag::split_heads(t, project(t, ni, blk.cross.wk, blk.cross.bk),
                                        cfg.heads);
            ag::Id vv = ag::split_heads(t, project(t, ni, blk.cross.wv, blk.cross.bv),
                                        cfg.heads);
            partner_outputs.push_back(
                ag::merge_heads(t, ag::attention(t, q, kk, vv, /*causal=*/false), cfg.heads));
        }
        ag::Id cat = partner_outputs.size() == 1 ? partner_outputs[0]
                                                 : ag::concat_lastdim(t, partner_outputs);
        return ag::linear(t, cat, t.leaf(*blk.cross_reduce_w), t.leaf(*blk.cross_reduce_b));
    }

    std::vector<ag::Parameter*> token_embed_;            // per class [K, d]
    std::vector<std::vector<detail::Block>> blocks_;     // per class
    std::vector<detail::LayerNormP> head_ln_;            // per class
    std::vector<ag::Parameter*> head_w_, head_b_;        // per class
    ag::Parameter* pos_time_ = nullptr;
    ag::Parameter* pos_row_ = nullptr;
    ag::Parameter* pos_col_ = nullptr;
};

}  // namespace occluscat::predictor
