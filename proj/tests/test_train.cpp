#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ivgen/codec.hpp"
#include "ivgen/conditioning.hpp"
#include "ivgen/model_io.hpp"
#include "ivgen/train.hpp"

using ivgen::Rng;
using ivgen::Tensor;
using ivgen::diffusion::Denoiser;
using ivgen::diffusion::DenoiserConfig;
using ivgen::diffusion::NoiseSchedule;
using ivgen::diffusion::ScheduleConfig;

namespace mask = ivgen::mask;
namespace scene = ivgen::scene;
namespace codec = ivgen::codec;
namespace pipeline = ivgen::pipeline;
namespace train = ivgen::train;
namespace model = ivgen::model;

namespace {

DenoiserConfig tiny_config(int in_ch = 2, int out_ch = 2) {
    DenoiserConfig cfg;
    cfg.in_channels = in_ch;
    cfg.out_channels = out_ch;
    cfg.num_frames = 2;
    cfg.base_width = 2;
    cfg.width_mult = {1};
    cfg.blocks_per_level = 1;
    cfg.temb_dim = 4;
    cfg.groups = 1;
    cfg.heads = 1;
    return cfg;
}

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape != b.shape) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != b.data[i]) return false;
    return true;
}

bool params_equal(const Denoiser<float>& a, const Denoiser<float>& b) {
    if (a.params().size() != b.params().size()) return false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        if (a.params()[i].name != b.params()[i].name) return false;
        if (!bitwise_equal(a.params()[i].value, b.params()[i].value)) return false;
    }
    return true;
}

// Unconditioned latent clips from a fixed generator: two memorizable samples.
std::vector<train::TrainSample> toy_data(const DenoiserConfig& cfg, int n, unsigned long long seed) {
    Rng rng = ivgen::make_rng(seed);
    std::vector<train::TrainSample> data;
    for (int i = 0; i < n; ++i) {
        train::TrainSample s;
        s.x0 = Tensor<float>::randn({cfg.num_frames, 4, 4, cfg.out_channels}, rng);
        data.push_back(std::move(s));
    }
    return data;
}

mask::SegmentationMap two_role_map(int h, int w, int ar0, int ar1, int or0, int or1) {
    mask::SegmentationMap seg(h, w);
    for (int r = ar0; r <= ar1; ++r)
        for (int c = 0; c < w; ++c) seg.set(r, c, mask::Role::actor);
    for (int r = or0; r <= or1; ++r)
        for (int c = 0; c < w; ++c) seg.set(r, c, mask::Role::object);
    return seg;
}

scene::Clip demo_clip(unsigned long long seed) {
    scene::SceneSpec spec;
    return scene::generate_clip(spec, {scene::Verb::push, scene::ShapeKind::rectangle}, seed);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conditioning layouts
// ---------------------------------------------------------------------------

TEST_CASE("verb-conditioned layout replicates image and mask latents", "[conditioning]") {
    codec::CodecConfig cc;
    codec::AnalyticCodec cod(cc);
    const auto vocab = pipeline::ActionVocabulary::scene_verbs();
    REQUIRE(vocab.size() == 5);

    scene::Clip clip = demo_clip(11);
    const mask::Image8& I = clip.frames[0];
    const mask::SegmentationMap& M = clip.seg_maps[0];
    const int N = 8;

    const auto b = pipeline::build_tt_condition(cod, I, M, "pull", vocab, N);
    CHECK(b.layout_tag == pipeline::LayoutTag::tt_gen);
    REQUIRE(b.context_rows == std::vector<int>{1});

    const Tensor<float> f_i = cod.encode_frame(I);
    const Tensor<float> f_m = cod.encode_frame(mask::encode_colors(M));
    const int h = f_i.dim(0), w = f_i.dim(1), cz = f_i.dim(2);
    REQUIRE(b.per_frame_latents.shape == std::vector<int>{N, h, w, 2 * cz});

    for (int n = 0; n < N; ++n)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < cz; ++ch) {
                    REQUIRE(b.per_frame_latents.at(n, r, c, ch) == f_i.at(r, c, ch));
                    REQUIRE(b.per_frame_latents.at(n, r, c, cz + ch) == f_m.at(r, c, ch));
                }

    SECTION("every slot is bitwise identical to slot 0") {
        for (int n = 1; n < N; ++n)
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    for (int ch = 0; ch < 2 * cz; ++ch)
                        REQUIRE(b.per_frame_latents.at(n, r, c, ch) ==
                                b.per_frame_latents.at(0, r, c, ch));
    }

    SECTION("unknown verbs are rejected") {
        CHECK_THROWS_AS(pipeline::build_tt_condition(cod, I, M, "juggle", vocab, N),
                        std::invalid_argument);
    }

    SECTION("dimension mismatch is rejected") {
        mask::SegmentationMap small(8, 8);
        CHECK_THROWS_AS(pipeline::build_tt_condition(cod, I, small, "push", vocab, N),
                        std::invalid_argument);
        CHECK_THROWS_AS(pipeline::build_tt_condition(cod, I, M, "push", vocab, 0),
                        std::invalid_argument);
    }

    SECTION("an all-background mask conditions on the encoded black image") {
        mask::SegmentationMap empty_map(I.height, I.width);
        const auto eb = pipeline::build_tt_condition(cod, I, empty_map, "push", vocab, 2);
        const Tensor<float> black = cod.encode_frame(mask::Image8(I.height, I.width));
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < cz; ++ch)
                    REQUIRE(eb.per_frame_latents.at(0, r, c, cz + ch) == black.at(r, c, ch));
    }

    pipeline::validate_bundle(b, N, cz);
    CHECK_THROWS_AS(pipeline::validate_bundle(b, N + 1, cz), std::invalid_argument);
    CHECK_THROWS_AS(pipeline::validate_bundle(b, N, cz + 1), std::invalid_argument);
}

TEST_CASE("position-conditioned layout fills boundary slots and zeros the middle", "[conditioning]") {
    codec::CodecConfig cc;
    codec::AnalyticCodec cod(cc);
    scene::Clip clip = demo_clip(12);
    const mask::Image8& I = clip.frames[0];
    const mask::SegmentationMap& M = clip.seg_maps[0];
    const mask::BinaryMask& P = clip.target_position_mask;
    REQUIRE_FALSE(P.empty());

    const int N = 8;
    const auto b = pipeline::build_pt_condition(cod, I, M, P, N);
    CHECK(b.layout_tag == pipeline::LayoutTag::pt_gen);
    CHECK(b.context_rows.empty());

    const Tensor<float> f_i = cod.encode_frame(I);
    const int h = f_i.dim(0), w = f_i.dim(1), cz = f_i.dim(2);
    REQUIRE(b.per_frame_latents.shape == std::vector<int>{N, h, w, 2 * cz});

    // image block: replicated everywhere
    for (int n = 0; n < N; ++n)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < cz; ++ch)
                    REQUIRE(b.per_frame_latents.at(n, r, c, ch) == f_i.at(r, c, ch));

    // boundary slots: independent re-encodes of the rendered masks
    mask::ColorCodec colors;
    const mask::BinaryMask m0 = M.role_mask(mask::Role::object);
    mask::Image8 first_img(I.height, I.width), last_img(I.height, I.width);
    for (int r = 0; r < I.height; ++r)
        for (int c = 0; c < I.width; ++c) {
            if (m0.at(r, c)) first_img.set(r, c, colors.object_color);
            if (P.at(r, c)) last_img.set(r, c, colors.object_color);
        }
    const Tensor<float> f_first = cod.encode_frame(first_img);
    const Tensor<float> f_last = cod.encode_frame(last_img);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < cz; ++ch) {
                REQUIRE(b.per_frame_latents.at(0, r, c, cz + ch) == f_first.at(r, c, ch));
                REQUIRE(b.per_frame_latents.at(N - 1, r, c, cz + ch) == f_last.at(r, c, ch));
            }

    // middle slots: exact zeros
    for (int n = 1; n < N - 1; ++n)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < cz; ++ch)
                    REQUIRE(b.per_frame_latents.at(n, r, c, cz + ch) == 0.0f);

    SECTION("N = 2 leaves no middle") {
        const auto b2 = pipeline::build_pt_condition(cod, I, M, P, 2);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < cz; ++ch) {
                    REQUIRE(b2.per_frame_latents.at(0, r, c, cz + ch) == f_first.at(r, c, ch));
                    REQUIRE(b2.per_frame_latents.at(1, r, c, cz + ch) == f_last.at(r, c, ch));
                }
    }

    SECTION("a stationary target makes both boundary slots identical") {
        const auto bs = pipeline::build_pt_condition(cod, I, M, m0, N);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < cz; ++ch)
                    REQUIRE(bs.per_frame_latents.at(0, r, c, cz + ch) ==
                            bs.per_frame_latents.at(N - 1, r, c, cz + ch));
    }

    SECTION("argument validation") {
        CHECK_THROWS_AS(pipeline::build_pt_condition(cod, I, M, P, 1), std::invalid_argument);
        CHECK_THROWS_AS(pipeline::build_pt_condition(cod, I, M, mask::BinaryMask(I.height, I.width), N),
                        std::invalid_argument);
        CHECK_THROWS_AS(pipeline::build_pt_condition(cod, I, M, mask::BinaryMask(8, 8), N),
                        std::invalid_argument);
    }
}

TEST_CASE("video-stage layout carries the per-frame trajectory", "[conditioning]") {
    codec::CodecConfig cc;
    codec::AnalyticCodec cod(cc);
    scene::Clip clip = demo_clip(13);
    const mask::Image8& I = clip.frames[0];
    const pipeline::Trajectory traj = pipeline::trajectory_of(clip);
    const int N = traj.length();

    const auto b = pipeline::build_stage2_condition(cod, I, traj);
    CHECK(b.layout_tag == pipeline::LayoutTag::stage2);
    CHECK(b.context_rows.empty());

    const Tensor<float> f_i = cod.encode_frame(I);
    const int h = f_i.dim(0), w = f_i.dim(1), cz = f_i.dim(2);
    REQUIRE(b.per_frame_latents.shape == std::vector<int>{N, h, w, 2 * cz});
    for (int n = 0; n < N; ++n) {
        const Tensor<float> f_s = cod.encode_frame(mask::encode_colors(traj.seg_maps[static_cast<std::size_t>(n)]));
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < cz; ++ch) {
                    REQUIRE(b.per_frame_latents.at(n, r, c, ch) == f_i.at(r, c, ch));
                    REQUIRE(b.per_frame_latents.at(n, r, c, cz + ch) == f_s.at(r, c, ch));
                }
    }

    SECTION("disabled augmentation reproduces the plain bundle bitwise") {
        pipeline::AugmentConfig aug;
        aug.p = 0.0;
        Rng rng = ivgen::make_rng(5);
        const auto ba = pipeline::build_stage2_condition(cod, I, traj, aug, rng);
        CHECK(bitwise_equal(ba.per_frame_latents, b.per_frame_latents));
    }

    SECTION("augmentation is a pure function of the generator state") {
        pipeline::AugmentConfig aug;
        Rng r1 = ivgen::make_rng(77), r2 = ivgen::make_rng(77), r3 = ivgen::make_rng(78);
        pipeline::MorphStats s1, s2;
        const auto b1 = pipeline::build_stage2_condition(cod, I, traj, aug, r1, &s1);
        const auto b2 = pipeline::build_stage2_condition(cod, I, traj, aug, r2, &s2);
        const auto b3 = pipeline::build_stage2_condition(cod, I, traj, aug, r3);
        CHECK(bitwise_equal(b1.per_frame_latents, b2.per_frame_latents));
        CHECK(s1.considered == s2.considered);
        CHECK(s1.morphed == s2.morphed);
        CHECK_FALSE(bitwise_equal(b1.per_frame_latents, b3.per_frame_latents));
    }

    SECTION("p = 1 morphs every nonempty role mask") {
        pipeline::AugmentConfig aug;
        aug.p = 1.0;
        Rng rng = ivgen::make_rng(9);
        pipeline::MorphStats st;
        (void)pipeline::build_stage2_condition(cod, I, traj, aug, rng, &st);
        CHECK(st.considered > 0);
        CHECK(st.morphed == st.considered);
    }

    SECTION("image / trajectory dimension mismatch is rejected") {
        mask::Image8 small(8, 8);
        CHECK_THROWS_AS(pipeline::build_stage2_condition(cod, small, traj), std::invalid_argument);
    }
}

TEST_CASE("trajectory morphing hits the configured rate on nonempty masks", "[conditioning]") {
    // 700 synthetic two-role trajectories, 8 frames each: 11200 coin flips.
    pipeline::AugmentConfig aug;
    Rng rng = ivgen::make_rng(42);
    pipeline::MorphStats st;
    for (int i = 0; i < 700; ++i) {
        pipeline::Trajectory t;
        for (int f = 0; f < 8; ++f)
            t.seg_maps.push_back(two_role_map(16, 16, 1 + (i + f) % 4, 5 + (i + f) % 4, 10, 13));
        (void)pipeline::detail::augment_trajectory(t, aug, rng, &st);
    }
    REQUIRE(st.considered == 700 * 8 * 2);
    const double rate = static_cast<double>(st.morphed) / static_cast<double>(st.considered);
    CHECK(rate > 0.19);
    CHECK(rate < 0.21);

    SECTION("empty role masks consume no draws and are not counted") {
        pipeline::Trajectory t;
        t.seg_maps.push_back(mask::SegmentationMap(16, 16));  // all background
        Rng before = ivgen::make_rng(1), after = ivgen::make_rng(1);
        pipeline::MorphStats st2;
        (void)pipeline::detail::augment_trajectory(t, aug, after, &st2);
        CHECK(st2.considered == 0);
        CHECK(st2.morphed == 0);
        CHECK(before() == after());  // generator untouched
    }
}

TEST_CASE("actor-only reduction erases object and part roles", "[conditioning]") {
    scene::Clip clip = demo_clip(21);
    const pipeline::Trajectory full = pipeline::trajectory_of(clip);
    const pipeline::Trajectory reduced = pipeline::actor_only(full);
    REQUIRE(reduced.length() == full.length());
    bool had_object = false;
    for (int n = 0; n < full.length(); ++n) {
        const auto& a = full.seg_maps[static_cast<std::size_t>(n)];
        const auto& b = reduced.seg_maps[static_cast<std::size_t>(n)];
        had_object |= !a.role_mask(mask::Role::object).empty();
        CHECK(b.role_mask(mask::Role::object).empty());
        CHECK(b.role_mask(mask::Role::part).empty());
        CHECK(b.role_mask(mask::Role::actor) == a.role_mask(mask::Role::actor));
    }
    CHECK(had_object);
}

TEST_CASE("area pooling and contact weight maps", "[conditioning]") {
    SECTION("pooling counts set pixels per block") {
        mask::BinaryMask m(8, 8);
        m.at(0, 0) = true;  // block (0,0): 1 of 16
        m.at(1, 1) = true;  // block (0,0): 2 of 16
        for (int r = 4; r < 8; ++r)
            for (int c = 4; c < 8; ++c) m.at(r, c) = true;  // block (1,1): full
        const Tensor<float> p = pipeline::downsample_area(m, 4);
        REQUIRE(p.shape == std::vector<int>{2, 2});
        CHECK(p.at(0, 0) == Catch::Approx(2.0 / 16.0));
        CHECK(p.at(0, 1) == 0.0f);
        CHECK(p.at(1, 0) == 0.0f);
        CHECK(p.at(1, 1) == Catch::Approx(1.0));
        CHECK_THROWS_AS(pipeline::downsample_area(m, 3), std::invalid_argument);
    }

    SECTION("adjacent actor and object produce boundary contact weights") {
        // actor rows 0..3, object rows 4..7: contact lives in rows 3 and 4.
        pipeline::Trajectory t;
        t.seg_maps.push_back(two_role_map(8, 8, 0, 3, 4, 7));
        const Tensor<float> w = pipeline::contact_weights(t, 5.0f, 4);
        REQUIRE(w.shape == std::vector<int>{1, 2, 2});
        // each 4x4 block holds one full contact row: fraction 1/4, weight 1 + 4 * 1/4 = 2
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) CHECK(w.at(0, r, c) == Catch::Approx(2.0));
    }

    SECTION("separated roles give exact unit weights") {
        pipeline::Trajectory t;
        t.seg_maps.push_back(two_role_map(12, 8, 0, 1, 6, 7));  // 4-row gap
        const Tensor<float> w = pipeline::contact_weights(t, 5.0f, 4);
        for (float v : w.data) CHECK(v == 1.0f);
    }

    SECTION("lambda = 1 is the exact all-ones map even with contact") {
        pipeline::Trajectory t;
        t.seg_maps.push_back(two_role_map(8, 8, 0, 3, 4, 7));
        const Tensor<float> w = pipeline::contact_weights(t, 1.0f, 4);
        for (float v : w.data) CHECK(v == 1.0f);
    }

    SECTION("part pixels join the object side of the contact") {
        mask::SegmentationMap seg(8, 8);
        for (int c = 0; c < 8; ++c) {
            seg.set(3, c, mask::Role::actor);
            seg.set(4, c, mask::Role::part);  // only the part touches the actor
            seg.set(6, c, mask::Role::object);
        }
        pipeline::Trajectory t;
        t.seg_maps.push_back(seg);
        const Tensor<float> w = pipeline::contact_weights(t, 5.0f, 4);
        bool any_above_one = false;
        for (float v : w.data) any_above_one |= v > 1.0f;
        CHECK(any_above_one);
    }
}

TEST_CASE("latent trajectory encoding round-trips through a lossless configuration", "[conditioning]") {
    codec::CodecConfig cc;
    cc.factor = 1;
    cc.c_z = 3;
    codec::AnalyticCodec cod(cc);  // per-pixel mean rows span everything: exact
    scene::Clip clip = demo_clip(31);
    const pipeline::Trajectory traj = pipeline::trajectory_of(clip);

    const Tensor<float> lat = pipeline::encode_trajectory(cod, traj);
    REQUIRE(lat.shape == std::vector<int>{traj.length(), traj.height(), traj.width(), 3});
    const pipeline::Trajectory rec = pipeline::decode_trajectory(cod, lat);
    REQUIRE(rec.length() == traj.length());
    for (int n = 0; n < traj.length(); ++n)
        CHECK(rec.seg_maps[static_cast<std::size_t>(n)].roles ==
              traj.seg_maps[static_cast<std::size_t>(n)].roles);
}

TEST_CASE("frame batch encoding matches per-frame encoding", "[conditioning]") {
    codec::CodecConfig cc;
    codec::AnalyticCodec cod(cc);
    scene::Clip clip = demo_clip(32);
    const Tensor<float> lat = pipeline::encode_frames(cod, clip.frames);
    REQUIRE(lat.dim(0) == clip.num_frames());
    for (int n = 0; n < clip.num_frames(); ++n) {
        const Tensor<float> one = cod.encode_frame(clip.frames[static_cast<std::size_t>(n)]);
        for (int r = 0; r < one.dim(0); ++r)
            for (int c = 0; c < one.dim(1); ++c)
                for (int ch = 0; ch < one.dim(2); ++ch)
                    REQUIRE(lat.at(n, r, c, ch) == one.at(r, c, ch));
    }
    CHECK_THROWS_AS(pipeline::encode_frames(cod, {}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TEST_CASE("training halves the smoothed loss on a memorizable problem", "[train]") {
    const DenoiserConfig cfg = tiny_config();
    Denoiser<float> model(cfg, 7);
    ivgen::nn::AdamWConfig<float> oc;
    oc.lr = 1e-2f;
    ivgen::nn::AdamW<float> opt(model.params(), oc);
    NoiseSchedule<float> sched(ScheduleConfig{});

    train::TrainConfig tc;
    tc.num_steps = 250;
    tc.batch_size = 4;
    tc.smooth_window = 5;
    Rng rng = ivgen::make_rng(100);
    const auto data = toy_data(cfg, 2, 200);
    const auto stats = train::train_steps(model, opt, data, sched, tc, rng);

    REQUIRE(stats.steps == 250);
    REQUIRE(stats.losses.size() == 250);
    CAPTURE(stats.initial_loss, stats.final_loss);
    CHECK(stats.final_loss <= 0.5 * stats.initial_loss);
    CHECK(opt.step_count() == 250);
}

TEST_CASE("unit weight maps train bit-identically to disabled weighting", "[train]") {
    const DenoiserConfig cfg = tiny_config();
    NoiseSchedule<float> sched(ScheduleConfig{});
    ivgen::nn::AdamWConfig<float> oc;
    oc.lr = 3e-3f;

    auto run = [&](bool explicit_ones) {
        Denoiser<float> model(cfg, 7);
        ivgen::nn::AdamW<float> opt(model.params(), oc);
        auto data = toy_data(cfg, 2, 200);
        if (explicit_ones)
            for (auto& s : data)
                s.weight = Tensor<float>({s.x0.dim(0), s.x0.dim(1), s.x0.dim(2)}, 1.0f);
        train::TrainConfig tc;
        tc.num_steps = 20;
        tc.batch_size = 2;
        Rng rng = ivgen::make_rng(300);
        (void)train::train_steps(model, opt, data, sched, tc, rng);
        return model;
    };

    const Denoiser<float> a = run(false);
    const Denoiser<float> b = run(true);
    CHECK(params_equal(a, b));
}

TEST_CASE("results are independent of the worker thread count", "[train]") {
    const DenoiserConfig cfg = tiny_config();
    NoiseSchedule<float> sched(ScheduleConfig{});

    auto run = [&](int threads) {
        Denoiser<float> model(cfg, 7);
        ivgen::nn::AdamW<float> opt(model.params(), {});
        train::TrainConfig tc;
        tc.num_steps = 8;
        tc.batch_size = 4;
        tc.threads = threads;
        Rng rng = ivgen::make_rng(400);
        const auto data = toy_data(cfg, 3, 500);
        const auto stats = train::train_steps(model, opt, data, sched, tc, rng);
        return std::pair<Denoiser<float>, std::vector<double>>(std::move(model), stats.losses);
    };

    const auto [m1, l1] = run(1);
    const auto [m2, l2] = run(2);
    const auto [m4, l4] = run(4);
    CHECK(params_equal(m1, m2));
    CHECK(params_equal(m1, m4));
    CHECK(l1 == l2);
    CHECK(l1 == l4);
}

TEST_CASE("frozen temporal attention stays bitwise fixed while the rest trains", "[train]") {
    const DenoiserConfig cfg = tiny_config();
    Denoiser<float> model(cfg, 7);
    model.freeze_temporal_attention(true);
    std::vector<std::pair<std::string, Tensor<float>>> before;
    for (std::size_t i = 0; i < model.params().size(); ++i)
        before.emplace_back(model.params()[i].name, model.params()[i].value);

    ivgen::nn::AdamW<float> opt(model.params(), {});
    NoiseSchedule<float> sched(ScheduleConfig{});
    train::TrainConfig tc;
    tc.num_steps = 10;
    tc.batch_size = 2;
    Rng rng = ivgen::make_rng(600);
    (void)train::train_steps(model, opt, toy_data(cfg, 2, 700), sched, tc, rng);

    int frozen_seen = 0, moved = 0;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const bool is_tattn = before[i].first.find(".tattn.") != std::string::npos;
        if (is_tattn) {
            ++frozen_seen;
            CHECK(bitwise_equal(model.params()[i].value, before[i].second));
        } else if (!bitwise_equal(model.params()[i].value, before[i].second)) {
            ++moved;
        }
    }
    CHECK(frozen_seen > 0);
    CHECK(moved > 0);
}

TEST_CASE("non-finite losses abort training", "[train]") {
    const DenoiserConfig cfg = tiny_config();
    Denoiser<float> model(cfg, 7);
    ivgen::nn::AdamW<float> opt(model.params(), {});
    NoiseSchedule<float> sched(ScheduleConfig{});
    auto data = toy_data(cfg, 1, 1);
    data[0].x0.data[3] = std::numeric_limits<float>::quiet_NaN();
    train::TrainConfig tc;
    tc.num_steps = 1;
    tc.batch_size = 1;
    Rng rng = ivgen::make_rng(1);
    CHECK_THROWS_AS(train::train_steps(model, opt, data, sched, tc, rng), std::runtime_error);
}

TEST_CASE("training rejects malformed samples up front", "[train]") {
    const DenoiserConfig cfg = tiny_config(4, 2);  // two condition channels expected
    Denoiser<float> model(cfg, 7);
    ivgen::nn::AdamW<float> opt(model.params(), {});
    NoiseSchedule<float> sched(ScheduleConfig{});
    train::TrainConfig tc;
    tc.num_steps = 1;
    tc.batch_size = 1;

    auto expect_reject = [&](train::TrainSample s) {
        Rng rng = ivgen::make_rng(2);
        std::vector<train::TrainSample> data;
        data.push_back(std::move(s));
        CHECK_THROWS_AS(train::train_steps(model, opt, data, sched, tc, rng),
                        std::invalid_argument);
    };

    Rng mk = ivgen::make_rng(3);
    train::TrainSample good;
    good.x0 = Tensor<float>::randn({cfg.num_frames, 4, 4, 2}, mk);
    good.cond = Tensor<float>::randn({cfg.num_frames, 4, 4, 2}, mk);

    {
        train::TrainSample s = good;
        s.cond = Tensor<float>();  // missing condition channels
        expect_reject(std::move(s));
    }
    {
        train::TrainSample s = good;
        s.x0 = Tensor<float>::randn({cfg.num_frames, 4, 4, 3}, mk);  // wrong latent depth
        expect_reject(std::move(s));
    }
    {
        train::TrainSample s = good;
        s.cond = Tensor<float>::randn({cfg.num_frames, 8, 8, 2}, mk);  // misaligned grid
        expect_reject(std::move(s));
    }
    {
        train::TrainSample s = good;
        s.context_rows = {0};  // model has no context path
        expect_reject(std::move(s));
    }
    {
        train::TrainSample s = good;
        s.weight = Tensor<float>({cfg.num_frames, 4, 3}, 1.0f);  // misshapen weights
        expect_reject(std::move(s));
    }
    {
        Rng rng = ivgen::make_rng(4);
        CHECK_THROWS_AS(train::train_steps(model, opt, {}, sched, tc, rng),
                        std::invalid_argument);
    }
}

TEST_CASE("the training log is a parseable step record", "[train]") {
    const DenoiserConfig cfg = tiny_config();
    Denoiser<float> model(cfg, 7);
    ivgen::nn::AdamW<float> opt(model.params(), {});
    NoiseSchedule<float> sched(ScheduleConfig{});
    const auto log_path = std::filesystem::temp_directory_path() / "ivgen_train_log_test.csv";
    train::TrainConfig tc;
    tc.num_steps = 5;
    tc.batch_size = 2;
    tc.log_csv = log_path;
    Rng rng = ivgen::make_rng(800);
    const auto stats = train::train_steps(model, opt, toy_data(cfg, 2, 900), sched, tc, rng);

    std::ifstream in(log_path);
    REQUIRE(in.good());
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "step,loss,lr,elapsed_s");
    int rows = 0;
    while (std::getline(in, line)) {
        std::istringstream fields(line);
        std::string step_s, loss_s, lr_s, el_s;
        REQUIRE(std::getline(fields, step_s, ','));
        REQUIRE(std::getline(fields, loss_s, ','));
        REQUIRE(std::getline(fields, lr_s, ','));
        REQUIRE(std::getline(fields, el_s, ','));
        CHECK(std::stoi(step_s) == rows);
        CHECK(std::stod(loss_s) == Catch::Approx(stats.losses[static_cast<std::size_t>(rows)]));
        CHECK(std::stod(lr_s) > 0.0);
        CHECK(std::stod(el_s) >= 0.0);
        ++rows;
    }
    CHECK(rows == 5);
    std::filesystem::remove(log_path);
}

// ---------------------------------------------------------------------------
// Model checkpointing
// ---------------------------------------------------------------------------

TEST_CASE("denoiser checkpoints round-trip weights, config, and frozen state", "[model_io]") {
    DenoiserConfig cfg = tiny_config();
    cfg.context_vocab = 5;
    cfg.context_dim = 3;
    Denoiser<float> m(cfg, 9);
    m.freeze_temporal_attention(true);
    NoiseSchedule<float> sched(ScheduleConfig{});

    const auto path = std::filesystem::temp_directory_path() / "ivgen_model_io_test.ckpt";
    model::save_denoiser(m, sched, "tt_gen", path);
    const auto loaded = model::load_denoiser(path);

    CHECK(loaded.meta.variant == "tt_gen");
    CHECK(loaded.meta.config.in_channels == cfg.in_channels);
    CHECK(loaded.meta.config.context_vocab == 5);
    CHECK(loaded.meta.schedule.num_steps == sched.config().num_steps);
    CHECK(params_equal(m, loaded.model));
    CHECK(model::param_hash(loaded.model.params()) == model::param_hash(m.params()));

    int frozen = 0;
    for (std::size_t i = 0; i < loaded.model.params().size(); ++i)
        frozen += loaded.model.params()[i].frozen ? 1 : 0;
    CHECK(frozen > 0);
    for (std::size_t i = 0; i < loaded.model.params().size(); ++i)
        CHECK(loaded.model.params()[i].frozen == m.params()[i].frozen);

    SECTION("checkpoints without optimizer or generator state say so") {
        CHECK_THROWS_AS(loaded.make_optimizer(), std::runtime_error);
        CHECK_THROWS_AS(loaded.make_rng_resume(), std::runtime_error);
    }

    SECTION("a tampered schedule table is rejected") {
        ivgen::checkpoint::Container ck = ivgen::checkpoint::load(path);
        for (auto& e : ck.entries)
            if (e.name == "schedule.beta") e.tensor.data[10] += 1e-3f;
        const auto bad = std::filesystem::temp_directory_path() / "ivgen_model_io_bad.ckpt";
        ivgen::checkpoint::save(ck, bad);
        CHECK_THROWS_AS(model::load_denoiser(bad), std::runtime_error);
        std::filesystem::remove(bad);
    }

    std::filesystem::remove(path);
}

TEST_CASE("the parameter hash tracks every weight", "[model_io]") {
    const DenoiserConfig cfg = tiny_config();
    Denoiser<float> a(cfg, 9), b(cfg, 9), c(cfg, 10);
    CHECK(model::param_hash(a.params()) == model::param_hash(b.params()));
    CHECK(model::param_hash(a.params()) != model::param_hash(c.params()));
    b.params()[0].value.data[0] += 1e-6f;
    CHECK(model::param_hash(a.params()) != model::param_hash(b.params()));
}

TEST_CASE("generator state strings restore the exact draw sequence", "[model_io]") {
    Rng rng = ivgen::make_rng(123);
    for (int i = 0; i < 7; ++i) (void)rng();
    const std::string state = model::rng_state_string(rng);
    Rng back = model::rng_from_state(state);
    for (int i = 0; i < 10; ++i) CHECK(rng() == back());
    CHECK_THROWS_AS(model::rng_from_state("not a generator"), std::runtime_error);
}

TEST_CASE("a saved run resumes bit-identically to an uninterrupted one", "[model_io]") {
    const DenoiserConfig cfg = tiny_config();
    NoiseSchedule<float> sched(ScheduleConfig{});
    const auto data = toy_data(cfg, 2, 1000);
    train::TrainConfig tc;
    tc.num_steps = 5;
    tc.batch_size = 2;

    // uninterrupted: 10 steps straight through
    Denoiser<float> ref(cfg, 11);
    ivgen::nn::AdamW<float> ref_opt(ref.params(), {});
    Rng ref_rng = ivgen::make_rng(2000);
    (void)train::train_steps(ref, ref_opt, data, sched, tc, ref_rng);
    (void)train::train_steps(ref, ref_opt, data, sched, tc, ref_rng);

    // checkpointed: 5 steps, save everything, reload, 5 more
    Denoiser<float> m(cfg, 11);
    ivgen::nn::AdamW<float> opt(m.params(), {});
    Rng rng = ivgen::make_rng(2000);
    (void)train::train_steps(m, opt, data, sched, tc, rng);
    const auto path = std::filesystem::temp_directory_path() / "ivgen_resume_test.ckpt";
    model::save_denoiser(m, sched, "stage2", path, &opt, &rng);

    auto loaded = model::load_denoiser(path);
    auto opt2 = loaded.make_optimizer();
    Rng rng2 = loaded.make_rng_resume();
    CHECK(opt2.step_count() == 5);
    (void)train::train_steps(loaded.model, opt2, data, sched, tc, rng2);

    CHECK(params_equal(ref, loaded.model));
    std::filesystem::remove(path);
}
