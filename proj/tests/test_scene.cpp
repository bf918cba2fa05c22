#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "ivgen/curation.hpp"
#include "ivgen/dataset.hpp"
#include "ivgen/scene.hpp"

using namespace ivgen;
namespace fs = std::filesystem;

namespace {

// independent mask-moment centroid, not the library's
std::pair<double, double> moment_centroid(const mask::BinaryMask& m) {
    double sr = 0, sc = 0;
    long n = 0;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c)) {
                sr += r;
                sc += c;
                ++n;
            }
    REQUIRE(n > 0);
    return {sr / n, sc / n};
}

scene::SceneSpec desk_spec() {
    scene::SceneSpec s;
    s.height = 64;
    s.width = 96;
    s.num_frames = 8;
    s.num_distractors = 3;
    return s;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("zero velocity freezes the whole scene", "[scene]") {
    scene::SceneSpec spec = desk_spec();
    spec.velocity_min = spec.velocity_max = 0.0;
    const scene::Clip clip =
        scene::generate_clip(spec, {scene::Verb::push, scene::ShapeKind::disc}, 11);
    for (int t = 1; t < clip.num_frames(); ++t)
        for (int r = 0; r < clip.height(); ++r)
            for (int c = 0; c < clip.width(); ++c)
                REQUIRE(clip.seg_maps[static_cast<std::size_t>(t)].at(r, c) ==
                        clip.seg_maps[0].at(r, c));
}

TEST_CASE("pick_place ends with the object on its target", "[scene]") {
    const scene::Clip clip = scene::generate_clip(
        desk_spec(), {scene::Verb::pick_place, scene::ShapeKind::rectangle}, 7);
    const mask::BinaryMask final_obj = clip.seg_maps.back().role_mask(mask::Role::object);
    CHECK(mask::iou(final_obj, clip.target_position_mask) == 1.0);

    // centroid inside the target's bounding box
    auto [cr, cc] = moment_centroid(final_obj);
    int r0 = 1 << 28, c0 = 1 << 28, r1 = -1, c1 = -1;
    for (int r = 0; r < clip.height(); ++r)
        for (int c = 0; c < clip.width(); ++c)
            if (clip.target_position_mask.at(r, c)) {
                r0 = std::min(r0, r);
                c0 = std::min(c0, c);
                r1 = std::max(r1, r);
                c1 = std::max(c1, c);
            }
    CHECK(cr >= r0);
    CHECK(cr <= r1);
    CHECK(cc >= c0);
    CHECK(cc <= c1);
}

TEST_CASE("post-contact centroid deltas equal the commanded velocity", "[scene]") {
    const scene::SceneSpec spec = desk_spec();
    const scene::SceneLayout layout =
        scene::plan_scene(spec, {scene::Verb::push, scene::ShapeKind::disc}, 3);
    const scene::Clip clip = scene::render_clip(layout, "probe");
    for (int t = layout.contact_frame; t + 1 < clip.num_frames(); ++t) {
        auto [r0, c0] =
            moment_centroid(clip.seg_maps[static_cast<std::size_t>(t)].role_mask(mask::Role::object));
        auto [r1, c1] = moment_centroid(
            clip.seg_maps[static_cast<std::size_t>(t + 1)].role_mask(mask::Role::object));
        CHECK(r1 - r0 == Catch::Approx(layout.velocity[0]).margin(1e-9));
        CHECK(c1 - c0 == Catch::Approx(layout.velocity[1]).margin(1e-9));
    }
    // and no displacement before contact
    for (int t = 0; t + 1 <= layout.contact_frame; ++t)
        REQUIRE(clip.seg_maps[static_cast<std::size_t>(t)].role_mask(mask::Role::object) ==
                clip.seg_maps[static_cast<std::size_t>(t + 1)].role_mask(mask::Role::object));
}

TEST_CASE("clip invariants hold across seeds and verbs", "[scene]") {
    const scene::SceneSpec spec = desk_spec();
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const scene::ActionLabel action{
            spec.action_set[static_cast<std::size_t>(seed % spec.action_set.size())],
            spec.object_shape_set[static_cast<std::size_t>(seed % spec.object_shape_set.size())]};
        const scene::Clip clip = scene::generate_clip(spec, action, seed);
        REQUIRE(clip.num_frames() == spec.num_frames);
        const std::size_t area0 = clip.seg_maps[0].role_mask(mask::Role::object).area();
        for (int t = 0; t < clip.num_frames(); ++t) {
            const auto& seg = clip.seg_maps[static_cast<std::size_t>(t)];
            const auto actor = seg.role_mask(mask::Role::actor);
            const auto object = seg.role_mask(mask::Role::object);
            REQUIRE_FALSE(actor.empty());
            REQUIRE_FALSE(object.empty());
            REQUIRE(mask::mask_and(actor, object).empty());
            REQUIRE(object.area() == area0);  // rigid translation
        }
        REQUIRE(clip.seg_maps.back().role_mask(mask::Role::object) ==
                clip.target_position_mask);
    }
}

TEST_CASE("contact happens by the planned frame", "[scene]") {
    const scene::SceneSpec spec = desk_spec();
    for (std::uint64_t seed = 20; seed < 26; ++seed) {
        const scene::SceneLayout layout =
            scene::plan_scene(spec, {scene::Verb::push, scene::ShapeKind::rectangle}, seed);
        REQUIRE(layout.contact_frame >= 1);
        REQUIRE(layout.contact_frame <= spec.num_frames / 2);
        const auto& a = layout.actor.masks[static_cast<std::size_t>(layout.contact_frame)];
        const auto& o = layout.object.masks[static_cast<std::size_t>(layout.contact_frame)];
        CHECK_FALSE(mask::mask_and(mask::dilate(a, 3), o).empty());
    }
}

TEST_CASE("laptop lid emits a disjoint articulated part", "[scene]") {
    scene::SceneSpec spec = desk_spec();
    spec.object_shape_set.push_back(scene::ShapeKind::laptop_lid);
    const scene::Clip clip =
        scene::generate_clip(spec, {scene::Verb::push, scene::ShapeKind::laptop_lid}, 5);
    bool part_seen = false;
    for (const auto& seg : clip.seg_maps) {
        const auto part = seg.role_mask(mask::Role::part);
        part_seen = part_seen || !part.empty();
        REQUIRE(mask::mask_and(part, seg.role_mask(mask::Role::actor)).empty());
        REQUIRE(mask::mask_and(part, seg.role_mask(mask::Role::object)).empty());
    }
    CHECK(part_seen);
}

TEST_CASE("generation is deterministic", "[scene]") {
    const scene::SceneSpec spec = desk_spec();
    const scene::ActionLabel action{scene::Verb::pull, scene::ShapeKind::l_shape};
    const scene::Clip a = scene::generate_clip(spec, action, 99);
    const scene::Clip b = scene::generate_clip(spec, action, 99);
    REQUIRE(a.num_frames() == b.num_frames());
    for (int t = 0; t < a.num_frames(); ++t) {
        REQUIRE(a.frames[static_cast<std::size_t>(t)] == b.frames[static_cast<std::size_t>(t)]);
        REQUIRE(a.seg_maps[static_cast<std::size_t>(t)] == b.seg_maps[static_cast<std::size_t>(t)]);
    }
}

TEST_CASE("impossible placements raise a placement error", "[scene]") {
    scene::SceneSpec spec;
    spec.height = 16;
    spec.width = 16;
    spec.num_frames = 8;
    spec.num_distractors = 30;
    spec.actor_size_min = 12;
    spec.actor_size_max = 14;
    CHECK_THROWS_AS(scene::generate_clip(spec, {scene::Verb::push, scene::ShapeKind::rectangle}, 1),
                    scene::PlacementError);
}

TEST_CASE("verb outside the action set is rejected", "[scene]") {
    scene::SceneSpec spec = desk_spec();
    spec.action_set = {scene::Verb::push};
    CHECK_THROWS_AS(scene::generate_clip(spec, {scene::Verb::pull, scene::ShapeKind::disc}, 1),
                    std::invalid_argument);
}

TEST_CASE("dataset writes the documented clip format", "[dataset]") {
    const fs::path dir = fresh_dir("ivgen_ds_one");
    scene::SceneSpec spec = desk_spec();
    spec.num_distractors = 2;
    const dataset::Manifest m = dataset::generate_dataset(spec, 1, 42, dir);
    REQUIRE(m.entries.size() == 1);
    const fs::path clip_dir = dir / m.entries[0].path;
    for (int t = 0; t < spec.num_frames; ++t) {
        CHECK(fs::exists(clip_dir / dataset::frame_name(t)));
        CHECK(fs::exists(clip_dir / dataset::mask_name(t)));
    }
    CHECK(fs::exists(clip_dir / "meta.json"));
    CHECK(fs::exists(dir / "manifest.jsonl"));

    const scene::Clip back = dataset::load_clip(clip_dir);
    CHECK(back.clip_id == m.entries[0].clip_id);
    CHECK(back.action.verb == m.entries[0].action.verb);
    CHECK(back.action.object_kind == m.entries[0].action.object_kind);
    REQUIRE(back.num_frames() == spec.num_frames);
    CHECK(back.seg_maps.back().role_mask(mask::Role::object) == back.target_position_mask);
    fs::remove_all(dir);
}

TEST_CASE("clip save/load round trips exactly", "[dataset]") {
    const fs::path dir = fresh_dir("ivgen_ds_round");
    const scene::Clip clip =
        scene::generate_clip(desk_spec(), {scene::Verb::pick_up, scene::ShapeKind::disc}, 17);
    dataset::save_clip(clip, dir / "clip_x");
    const scene::Clip back = dataset::load_clip(dir / "clip_x");
    REQUIRE(back.num_frames() == clip.num_frames());
    for (int t = 0; t < clip.num_frames(); ++t) {
        CHECK(back.frames[static_cast<std::size_t>(t)] == clip.frames[static_cast<std::size_t>(t)]);
        CHECK(back.seg_maps[static_cast<std::size_t>(t)] ==
              clip.seg_maps[static_cast<std::size_t>(t)]);
    }
    CHECK(back.target_position_mask == clip.target_position_mask);
    fs::remove_all(dir);
}

TEST_CASE("dataset generation is byte-deterministic", "[dataset]") {
    scene::SceneSpec spec;
    spec.height = 32;
    spec.width = 48;
    spec.num_frames = 4;
    spec.num_distractors = 1;
    const fs::path d1 = fresh_dir("ivgen_ds_det1");
    const fs::path d2 = fresh_dir("ivgen_ds_det2");
    dataset::generate_dataset(spec, 3, 5, d1);
    dataset::generate_dataset(spec, 3, 5, d2);
    CHECK(slurp(d1 / "manifest.jsonl") == slurp(d2 / "manifest.jsonl"));
    CHECK(slurp(d1 / "clip_000001" / "frame_002.png") ==
          slurp(d2 / "clip_000001" / "frame_002.png"));
    CHECK(slurp(d1 / "clip_000002" / "mask_000.png") ==
          slurp(d2 / "clip_000002" / "mask_000.png"));
    CHECK(slurp(d1 / "clip_000000" / "meta.json") == slurp(d2 / "clip_000000" / "meta.json"));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("verb frequencies stay near uniform", "[dataset]") {
    scene::SceneSpec spec;
    spec.height = 32;
    spec.width = 48;
    spec.num_frames = 4;
    spec.num_distractors = 0;
    spec.action_set = {scene::Verb::push, scene::Verb::pick_place};
    const fs::path dir = fresh_dir("ivgen_ds_freq");
    const dataset::Manifest m = dataset::generate_dataset(spec, 100, 9, dir);
    std::map<scene::Verb, int> counts;
    for (const auto& e : m.entries) ++counts[e.action.verb];
    REQUIRE(m.entries.size() == 100);
    CHECK(counts[scene::Verb::push] >= 35);
    CHECK(counts[scene::Verb::push] <= 65);
    CHECK(counts[scene::Verb::pick_place] >= 35);
    CHECK(counts[scene::Verb::pick_place] <= 65);

    // prompts in the manifest use the literal template
    bool saw_push = false;
    for (const auto& e : m.entries)
        if (e.action.verb == scene::Verb::push && e.action.object_kind == scene::ShapeKind::disc) {
            CHECK(e.prompt == "a hand pushing an disc");
            saw_push = true;
        }
    CHECK(saw_push);
    fs::remove_all(dir);
}
