#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivgen/mask.hpp"
#include "ivgen/png_io.hpp"
#include "ivgen/rng.hpp"
#include "ivgen/scene.hpp"

namespace ivgen::dataset {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// a hand {verbing} an {object}
inline std::string make_prompt(scene::Verb verb, scene::ShapeKind kind) {
    return std::string("a hand ") + scene::verb_gerund(verb) + " an " + scene::shape_name(kind);
}

struct ManifestEntry {
    std::string clip_id;
    std::string path;  // relative to the manifest's directory
    scene::ActionLabel action;
    std::string prompt;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
};

inline json mask_to_json(const mask::BinaryMask& m) {
    json rows = json::array();
    for (const auto& row : mask::rle_encode(m)) {
        json r = json::array();
        for (auto [start, len] : row) r.push_back(json::array({start, len}));
        rows.push_back(std::move(r));
    }
    return json{{"height", m.height}, {"width", m.width}, {"rows", std::move(rows)}};
}

inline mask::BinaryMask mask_from_json(const json& j) {
    mask::RleRows rle;
    for (const auto& row : j.at("rows")) {
        std::vector<std::pair<int, int>> r;
        for (const auto& run : row) r.emplace_back(run.at(0).get<int>(), run.at(1).get<int>());
        rle.push_back(std::move(r));
    }
    return mask::rle_decode(rle, j.at("height").get<int>(), j.at("width").get<int>());
}

inline std::string frame_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d.png", t);
    return buf;
}

inline std::string mask_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "mask_%03d.png", t);
    return buf;
}

inline void save_clip(const scene::Clip& clip, const fs::path& dir) {
    fs::create_directories(dir);
    const mask::ColorCodec codec;
    for (int t = 0; t < clip.num_frames(); ++t) {
        png_io::write_png_rgb8(dir / frame_name(t), clip.frames[static_cast<std::size_t>(t)]);
        png_io::write_png_rgb8(
            dir / mask_name(t),
            mask::encode_colors(clip.seg_maps[static_cast<std::size_t>(t)], codec));
    }
    json meta{{"clip_id", clip.clip_id},
              {"verb", scene::verb_name(clip.action.verb)},
              {"object_kind", scene::shape_name(clip.action.object_kind)},
              {"prompt", make_prompt(clip.action.verb, clip.action.object_kind)},
              {"num_frames", clip.num_frames()},
              {"target_position_mask", mask_to_json(clip.target_position_mask)}};
    std::ofstream out(dir / "meta.json");
    out << meta.dump(2) << "\n";
    if (!out) throw std::runtime_error("save_clip: failed to write " + (dir / "meta.json").string());
}

inline scene::Clip load_clip(const fs::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw std::runtime_error("load_clip: missing " + (dir / "meta.json").string());
    json meta = json::parse(in);

    scene::Clip clip;
    clip.clip_id = meta.at("clip_id").get<std::string>();
    clip.action.verb = scene::verb_from_name(meta.at("verb").get<std::string>());
    clip.action.object_kind = scene::shape_from_name(meta.at("object_kind").get<std::string>());
    clip.target_position_mask = mask_from_json(meta.at("target_position_mask"));

    const int n = meta.at("num_frames").get<int>();
    const mask::ColorCodec codec;
    for (int t = 0; t < n; ++t) {
        clip.frames.push_back(png_io::read_png_rgb8(dir / frame_name(t)));
        clip.seg_maps.push_back(
            mask::decode_colors(png_io::read_png_rgb8(dir / mask_name(t)), codec));
    }
    return clip;
}

inline void write_manifest(const Manifest& m, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + path.string());
    for (const auto& e : m.entries) {
        json line{{"clip_id", e.clip_id},
                  {"path", e.path},
                  {"verb", scene::verb_name(e.action.verb)},
                  {"object_kind", scene::shape_name(e.action.object_kind)},
                  {"prompt", e.prompt}};
        out << line.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write_manifest: failed writing " + path.string());
}

inline Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + path.string());
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ManifestEntry e;
        e.clip_id = j.at("clip_id").get<std::string>();
        e.path = j.at("path").get<std::string>();
        e.action.verb = scene::verb_from_name(j.at("verb").get<std::string>());
        e.action.object_kind = scene::shape_from_name(j.at("object_kind").get<std::string>());
        e.prompt = j.at("prompt").get<std::string>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

// In-memory generation: same sampling order as generate_dataset, no
// filesystem traffic. Pure function of (spec, count, seed).
inline std::vector<scene::Clip> generate_clips(const scene::SceneSpec& spec, int count,
                                               std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("generate_clips: count must be >= 1");
    Rng action_rng = make_rng(derive_seed(derive_seed(spec.rng_seed, seed), 0x9e3779b97f4a7c15ull));
    std::vector<scene::Clip> clips;
    clips.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const scene::ActionLabel action = scene::sample_action(spec, action_rng);
        scene::Clip clip = scene::generate_clip(spec, action,
                                                derive_seed(seed, static_cast<std::uint64_t>(i)));
        char buf[32];
        std::snprintf(buf, sizeof(buf), "clip_%06d", i);
        clip.clip_id = buf;
        clips.push_back(std::move(clip));
    }
    return clips;
}

// Generates `count` clips under out_dir (clip_<id>/ each) plus manifest.jsonl.
inline Manifest generate_dataset(const scene::SceneSpec& spec, int count, std::uint64_t seed,
                                 const fs::path& out_dir) {
    fs::create_directories(out_dir);
    Manifest m;
    for (scene::Clip& clip : generate_clips(spec, count, seed)) {
        save_clip(clip, out_dir / clip.clip_id);
        m.entries.push_back({clip.clip_id, clip.clip_id, clip.action,
                             make_prompt(clip.action.verb, clip.action.object_kind)});
    }
    write_manifest(m, out_dir / "manifest.jsonl");
    return m;
}

}  // namespace ivgen::dataset
