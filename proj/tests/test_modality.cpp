#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "occluscat/modality/decompose.hpp"
#include "occluscat/modality/ingest.hpp"
#include "occluscat/modality/pointflow.hpp"
#include "occluscat/synthgen/dataset.hpp"

using namespace occluscat;
using namespace occluscat::modality;
namespace fs = std::filesystem;

namespace {

// Independent Eq. 2 re-evaluation: straight-line reading of the formula with
// the documented collision rules, structured completely differently from the
// production rasterizer (per-cell point lists instead of streaming
// accumulators).
std::vector<float> reference_point_flow(const PointTrackSet& tracks, int H, int W, int T) {
    std::vector<float> out(static_cast<size_t>(T) * H * W * 3, 0.0f);
    auto cell_of = [&](double v, int limit) {
        int i = static_cast<int>(std::floor(v + 0.5));
        return std::min(std::max(i, 0), limit - 1);
    };
    for (int t = 0; t < T; ++t) {
        std::map<std::pair<int, int>, std::vector<std::array<double, 3>>> cells;
        for (const PointTrack& p : tracks.points) {
            int r = cell_of(p.pos[t][0], H), c = cell_of(p.pos[t][1], W);
            double dh = t == 0 ? 0.0 : p.pos[t][0] - p.pos[t - 1][0];
            double dw = t == 0 ? 0.0 : p.pos[t][1] - p.pos[t - 1][1];
            cells[{r, c}].push_back({dh, dw, static_cast<double>(p.vis[t])});
        }
        for (const auto& [rc, pts] : cells) {
            bool any_visible = false;
            for (const auto& e : pts) any_visible = any_visible || e[2] > 0.5;
            double sh = 0.0, sw = 0.0;
            int n = 0;
            for (const auto& e : pts) {
                if (any_visible && e[2] <= 0.5) continue;
                sh += e[0];
                sw += e[1];
                ++n;
            }
            float* cell =
                out.data() + ((static_cast<int64_t>(t) * H + rc.first) * W + rc.second) * 3;
            cell[0] = static_cast<float>(sh / n);
            cell[1] = static_cast<float>(sw / n);
            cell[2] = any_visible ? 1.0f : 0.0f;
        }
    }
    return out;
}

PointTrackSet random_tracks(uint64_t seed, int H, int W, int T, int n_points,
                            bool collision_free = false) {
    Rng rng(seed);
    PointTrackSet set;
    set.frames = T;
    for (int i = 0; i < n_points; ++i) {
        PointTrack p;
        p.object_id = static_cast<int>(rng.uniform_int(0, 2));
        double h = rng.uniform(2.0, H - 3.0);
        double w = rng.uniform(2.0, W - 3.0);
        if (collision_free) {
            // Confine each point to its own 8x8 block with tiny motion.
            int bi = i % (H / 8), bj = (i / (H / 8)) % (W / 8);
            h = bi * 8.0 + 2.0 + rng.uniform(0.0, 1.0);
            w = bj * 8.0 + 2.0 + rng.uniform(0.0, 1.0);
        }
        double vh = rng.uniform(-1.0, 1.0) * (collision_free ? 0.15 : 2.0);
        double vw = rng.uniform(-1.0, 1.0) * (collision_free ? 0.15 : 2.0);
        for (int t = 0; t < T; ++t) {
            p.pos.push_back({h + t * vh, w + t * vw});
            p.vis.push_back(t == 0 ? 1 : (rng.uniform() < 0.8 ? 1 : 0));
        }
        set.points.push_back(std::move(p));
    }
    return set;
}

}  // namespace

TEST(PointFlow, DirectSubstitutionExample) {
    PointTrackSet tracks;
    tracks.frames = 2;
    PointTrack p;
    p.object_id = 0;
    p.pos = {{10.0, 10.0}, {12.0, 13.0}};
    p.vis = {1, 1};
    tracks.points.push_back(p);
    PointFlowGrid g = compute_point_flow(tracks, 32, 32, 2);
    const float* c0 = g.cell(0, 10, 10);
    EXPECT_EQ(c0[0], 0.0f);
    EXPECT_EQ(c0[1], 0.0f);
    EXPECT_EQ(c0[2], 1.0f);
    const float* c1 = g.cell(1, 12, 13);
    EXPECT_EQ(c1[0], 2.0f);
    EXPECT_EQ(c1[1], 3.0f);
    EXPECT_EQ(c1[2], 1.0f);
    EXPECT_FALSE(g.occupied(1, 10, 10));
}

TEST(PointFlow, StationaryPointHoldsIdentity) {
    PointTrackSet tracks;
    tracks.frames = 5;
    PointTrack p;
    p.pos.assign(5, {7.0, 9.0});
    p.vis.assign(5, 1);
    tracks.points.push_back(p);
    PointFlowGrid g = compute_point_flow(tracks, 16, 16, 5);
    for (int t = 0; t < 5; ++t) {
        const float* c = g.cell(t, 7, 9);
        EXPECT_EQ(c[0], 0.0f);
        EXPECT_EQ(c[1], 0.0f);
        EXPECT_EQ(c[2], 1.0f);
    }
}

TEST(PointFlow, MatchesIndependentReEvaluationExactly) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        int H = 24, W = 20, T = 6;
        PointTrackSet tracks = random_tracks(seed, H, W, T, 30);
        PointFlowGrid g = compute_point_flow(tracks, H, W, T);
        std::vector<float> ref = reference_point_flow(tracks, H, W, T);
        ASSERT_EQ(g.values.size(), ref.size());
        for (size_t i = 0; i < ref.size(); ++i)
            ASSERT_EQ(g.values[i], ref[i]) << "seed=" << seed << " i=" << i;
    }
}

TEST(PointFlow, TelescopingAlongVisibleTrajectory) {
    int H = 64, W = 64, T = 10;
    PointTrackSet tracks = random_tracks(3, H, W, T, 40, /*collision_free=*/true);
    for (PointTrack& p : tracks.points) p.vis.assign(T, 1);
    PointFlowGrid g = compute_point_flow(tracks, H, W, T);
    for (const PointTrack& p : tracks.points) {
        double sum_h = 0.0, sum_w = 0.0;
        for (int t = 1; t < T; ++t) {
            int r = static_cast<int>(std::floor(p.pos[t][0] + 0.5));
            int c = static_cast<int>(std::floor(p.pos[t][1] + 0.5));
            const float* cell = g.cell(t, r, c);
            sum_h += cell[0];
            sum_w += cell[1];
        }
        EXPECT_NEAR(sum_h, p.pos[T - 1][0] - p.pos[0][0], 1e-6);
        EXPECT_NEAR(sum_w, p.pos[T - 1][1] - p.pos[0][1], 1e-6);
    }
}

TEST(PointFlow, OccupancyBoundedByPointCount) {
    PointTrackSet tracks = random_tracks(9, 16, 16, 4, 50);
    PointFlowGrid g = compute_point_flow(tracks, 16, 16, 4);
    for (int t = 0; t < 4; ++t) EXPECT_LE(g.occupied_count(t), 50);
}

TEST(PointFlow, CollisionVisibleWinsAndTiesAverage) {
    PointTrackSet tracks;
    tracks.frames = 2;
    auto mk = [&](double h1, double w1, uint8_t vis1, double h0 = 5.0, double w0 = 5.0) {
        PointTrack p;
        p.pos = {{h0, w0}, {h1, w1}};
        p.vis = {1, vis1};
        tracks.points.push_back(p);
    };
    // Two visible points land on cell (8,8) with different displacements.
    mk(8.1, 8.2, 1, 5.1, 5.2);  // d = (3.0, 3.0)
    mk(7.9, 7.8, 1, 6.9, 6.8);  // d = (1.0, 1.0)
    // One invisible point also lands there; it must be ignored.
    mk(8.3, 7.6, 0, 0.3, 0.6);
    PointFlowGrid g = compute_point_flow(tracks, 16, 16, 2);
    const float* c = g.cell(1, 8, 8);
    EXPECT_NEAR(c[0], 2.0f, 1e-6);
    EXPECT_NEAR(c[1], 2.0f, 1e-6);
    EXPECT_EQ(c[2], 1.0f);

    // All-invisible collision: average, visibility 0.
    PointTrackSet inv;
    inv.frames = 2;
    auto mk2 = [&](double d) {
        PointTrack p;
        p.pos = {{2.0, 2.0}, {4.0 - d, 4.0}};
        p.vis = {1, 0};
        inv.points.push_back(p);
    };
    mk2(0.2);  // lands 3.8 -> cell 4, dh = 1.8
    mk2(-0.2);  // lands 4.2 -> cell 4, dh = 2.2
    PointFlowGrid g2 = compute_point_flow(inv, 8, 8, 2);
    const float* c2 = g2.cell(1, 4, 4);
    EXPECT_NEAR(c2[0], 2.0f, 1e-6);
    EXPECT_EQ(c2[2], 0.0f);
}

TEST(PointFlow, OutOfFramePositionsClampToBorder) {
    PointTrackSet tracks;
    tracks.frames = 2;
    PointTrack p;
    p.pos = {{3.0, 3.0}, {-2.0, 100.0}};
    p.vis = {1, 0};
    tracks.points.push_back(p);
    PointFlowGrid g = compute_point_flow(tracks, 8, 8, 2);
    EXPECT_TRUE(g.occupied(1, 0, 7));
}

TEST(PointFlow, FrameCountMismatchIsContractError) {
    PointTrackSet tracks = random_tracks(1, 8, 8, 4, 3);
    EXPECT_THROW(compute_point_flow(tracks, 8, 8, 5), ContractError);
}

TEST(Decompose, AdditivityAndOcclusionBehaviour) {
    synth::ClipSpec spec;
    spec.background_color = {20.0f / 255, 20.0f / 255, 20.0f / 255};
    spec.occluder.size = 10.0;
    spec.occluder.color = {200.0f / 255, 40.0f / 255, 40.0f / 255};
    spec.mover.size = 4.0;
    spec.mover.color = {40.0f / 255, 200.0f / 255, 40.0f / 255};
    spec.mover_h0 = 32.0;
    spec.mover_w0 = 10.0;
    spec.mover_vh = 0.0;
    spec.mover_vw = 2.0;
    Clip clip = synth::generate_clip(spec);

    int t_occ = -1;
    for (int t = 0; t < clip.frames; ++t)
        if (clip.mask_area(synth::kInstMover, t) == 0) {
            t_occ = t;
            break;
        }
    ASSERT_GE(t_occ, 0);

    InstanceSet set = decompose_instances(clip, t_occ, true, true);
    ASSERT_EQ(set.instances.size(), 3u);

    // Sum of masked instances reconstructs the frame exactly.
    const float* frame = clip.rgb_frame(t_occ);
    const int64_t hw = clip.hw();
    for (int64_t i = 0; i < hw; ++i)
        for (int ch = 0; ch < 3; ++ch) {
            float sum = 0.0f;
            for (const InstanceEntry& e : set.instances) sum += e.rgb[ch * hw + i];
            EXPECT_EQ(sum, frame[i * 3 + ch]);
        }

    // Fully occluded mover: zero RGB but nonzero identity-assigned point-flow.
    const InstanceEntry& mover = set.instances[synth::kInstMover];
    float rgb_sum = 0.0f, flow_sum = 0.0f;
    for (float v : mover.rgb) rgb_sum += std::abs(v);
    for (float v : mover.pointflow) flow_sum += std::abs(v);
    EXPECT_EQ(rgb_sum, 0.0f);
    EXPECT_GT(flow_sum, 0.0f);

    // Mask-containment policy hands those occluded points to the occluder.
    PointFlowGrid full = compute_point_flow(clip.tracks, clip.height, clip.width, clip.frames);
    InstanceSet by_mask = decompose_instances(clip, t_occ, true, true,
                                              PointAssignPolicy::MaskContainment, &full);
    float mover_mask_flow = 0.0f;
    for (float v : by_mask.instances[synth::kInstMover].pointflow)
        mover_mask_flow += std::abs(v);
    EXPECT_EQ(mover_mask_flow, 0.0f);
}

TEST(Decompose, AssembleChannelCounts) {
    int H = 8, W = 8;
    InstanceEntry e;
    e.rgb.assign(3 * H * W, 0.5f);
    e.mask.assign(H * W, 1);
    e.depth.assign(H * W, 0.25f);
    e.pointflow.assign(3 * H * W, 0.1f);
    EXPECT_EQ(assemble_channels(e, H, W, VariantConfig::from_name("SCAT")).channels, 3);
    EXPECT_EQ(assemble_channels(e, H, W, VariantConfig::from_name("SCAT-D")).channels, 4);
    EXPECT_EQ(assemble_channels(e, H, W, VariantConfig::from_name("SCAT-P")).channels, 6);
    EXPECT_EQ(assemble_channels(e, H, W, VariantConfig::from_name("SCAT-PD")).channels, 7);
    // Channel order: RGB, depth, then flow.
    ModalityStack pd = assemble_channels(e, H, W, {true, true});
    EXPECT_EQ(pd.values[0], 0.5f);
    EXPECT_EQ(pd.values[3 * H * W], 0.25f);
    EXPECT_EQ(pd.values[4 * H * W], 0.1f);

    InstanceEntry missing = e;
    missing.pointflow.clear();
    EXPECT_THROW(assemble_channels(missing, H, W, VariantConfig::from_name("SCAT-P")),
                 ContractError);
}

TEST(Decompose, NormalizeDepthRules) {
    std::vector<float> raw = {2.0f, 4.0f, 6.0f};
    std::vector<float> out = normalize_depth(raw, 2.0f, 6.0f);
    EXPECT_FLOAT_EQ(out[0], 0.0f);
    EXPECT_FLOAT_EQ(out[1], 0.5f);
    EXPECT_FLOAT_EQ(out[2], 1.0f);
    std::vector<float> constant = {3.0f, 3.0f};
    for (float v : normalize_depth(constant, 3.0f, 3.0f)) EXPECT_EQ(v, 0.0f);
    std::vector<float> unit = {0.0f, 0.25f, 1.0f};
    EXPECT_EQ(normalize_depth(unit, 0.0f, 1.0f), unit);
    EXPECT_THROW(normalize_depth(raw, 6.0f, 2.0f), ContractError);
}

TEST(Ingest, RoundTripEqualsSource) {
    synth::ClipSpec spec;
    spec.background_color = {20.0f / 255, 20.0f / 255, 20.0f / 255};
    spec.occluder.color = {210.0f / 255, 60.0f / 255, 60.0f / 255};
    spec.mover.color = {60.0f / 255, 210.0f / 255, 60.0f / 255};
    spec.mover_h0 = 32.0;
    spec.mover_w0 = 10.0;
    spec.mover_vw = 2.0;
    spec.mover_vh = 0.0;
    spec.occluder.size = 10.0;
    spec.mover.size = 4.0;
    Clip clip = synth::generate_clip(spec);
    clip.clip_id = "ingest_src";
    fs::path dir = fs::temp_directory_path() / "occluscat_ingest";
    fs::remove_all(dir);
    harness::save_clip(clip, dir);
    IngestReport rep;
    Clip back = ingest_external(dir, &rep);
    EXPECT_EQ(back.rgb, clip.rgb);
    EXPECT_EQ(back.masks, clip.masks);
    EXPECT_TRUE(rep.has_depth);
    EXPECT_TRUE(rep.has_tracks);
    EXPECT_EQ(rep.overlap_pixels, 0);
    EXPECT_EQ(rep.residual_pixels, 0);
    fs::remove_all(dir);
}

TEST(Ingest, RepairsOverlapsAndResiduals) {
    synth::ClipSpec spec;
    spec.mover_h0 = 32.0;
    spec.mover_w0 = 10.0;
    spec.mover_vw = 2.0;
    spec.occluder.size = 10.0;
    spec.mover.size = 4.0;
    Clip clip = synth::generate_clip(spec);
    clip.clip_id = "ingest_leaky";
    fs::path dir = fs::temp_directory_path() / "occluscat_ingest_leaky";
    fs::remove_all(dir);
    harness::save_clip(clip, dir);

    // Corrupt frame 0: make instance 1's mask overlap background and punch a
    // hole nobody covers.
    int H = clip.height, W = clip.width;
    std::vector<uint8_t> m0(static_cast<size_t>(H) * W), m1(m0.size());
    for (int64_t i = 0; i < clip.hw(); ++i) {
        m0[i] = clip.mask(0, 0)[i] ? 255 : 0;
        m1[i] = clip.mask(1, 0)[i] ? 255 : 0;
    }
    m1[0] = 255;  // overlaps background's pixel 0
    // Hole: remove pixel 1 from whichever instance owns it.
    for (auto* m : {&m0, &m1}) (*m)[1] = 0;
    bool hole = clip.mask(2, 0)[1] == 0;  // only a real hole if mover doesn't own it
    harness::write_png_gray8((dir / "masks/inst_0" / harness::frame_name(0)).string(), H, W,
                             m0.data());
    harness::write_png_gray8((dir / "masks/inst_1" / harness::frame_name(0)).string(), H, W,
                             m1.data());

    IngestReport rep;
    Clip back = ingest_external(dir, &rep);
    EXPECT_GE(rep.overlap_pixels, 1);
    if (hole) EXPECT_GE(rep.residual_pixels, 1);
    // Partition restored: lowest id wins overlaps, background absorbs holes.
    EXPECT_EQ(back.mask(0, 0)[0], 1);
    for (int64_t i = 0; i < back.hw(); ++i) {
        int cover = 0;
        for (int k = 0; k < back.num_instances; ++k) cover += back.mask(k, 0)[i];
        ASSERT_EQ(cover, 1);
    }
    fs::remove_all(dir);
}

TEST(Ingest, MissingTracksRestrictsVariants) {
    synth::ClipSpec spec;
    spec.mover_h0 = 32.0;
    spec.mover_w0 = 10.0;
    spec.mover_vw = 2.0;
    spec.occluder.size = 10.0;
    spec.mover.size = 4.0;
    Clip clip = synth::generate_clip(spec);
    clip.clip_id = "ingest_notracks";
    fs::path dir = fs::temp_directory_path() / "occluscat_ingest_notracks";
    fs::remove_all(dir);
    harness::save_clip(clip, dir);
    fs::remove(dir / "tracks.json");

    IngestReport rep;
    Clip back = ingest_external(dir, &rep);
    EXPECT_FALSE(rep.has_tracks);
    EXPECT_THROW(decompose_instances(back, 0, false, true), ContractError);
    // RGB-only decomposition still works.
    InstanceSet set = decompose_instances(back, 0, false, false);
    EXPECT_EQ(set.instances.size(), 3u);

    fs::remove_all(dir / "rgb");
    EXPECT_THROW(ingest_external(dir), IoError);
    fs::remove_all(dir);
}
