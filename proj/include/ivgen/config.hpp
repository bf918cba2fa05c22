#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivgen/codec.hpp"
#include "ivgen/conditioning.hpp"
#include "ivgen/denoiser.hpp"
#include "ivgen/scene.hpp"
#include "ivgen/schedule.hpp"

namespace ivgen::config {

struct TrainParams {
    double lr = 1e-5;
    double weight_decay = 0.0;
    int batch_size = 8;
    int num_steps = 2000;
    int threads = 1;
    int smooth_window = 10;
};

struct AugmentParams {
    bool enabled = true;
    double p = 0.2;
    std::vector<int> kernels = {3, 5, 7};
};

struct LossParams {
    bool contact = true;
    double lambda = 5.0;
    int kernel = 3;
};

struct SamplerParams {
    int steps = 50;
};

struct SeedParams {
    std::uint64_t data = 1;
    std::uint64_t model = 2;
    std::uint64_t train = 3;
    std::uint64_t sample = 4;
    std::uint64_t extractor = 7;
};

struct PathParams {
    std::string out = "out";
    std::string cache;             // defaults from the cache-dir env var
    std::string codec_checkpoint;  // required for a learned codec
};

// Ablation switches for the conditioning and loss machinery: `control` drops
// the conditioning concat entirely, `object_mask` blanks object/part roles
// from trajectories, `random_de` gates mask augmentation, `contact_loss`
// gates the contact-weighted objective.
struct AblationParams {
    std::string control = "concat";  // concat | none
    bool object_mask = true;
    bool random_de = true;
    bool contact_loss = true;
};

// Denoiser shape for one stage; channel counts derive from the codec.
struct StageParams {
    std::string variant;  // stage 1: tt_gen | pt_gen; ignored for stage 2
    int base_width = 32;
    std::vector<int> width_mult = {1, 2, 3};
    int blocks_per_level = 2;
    int temb_dim = 128;
    int groups = 8;
    int heads = 4;
    int spatial_attn_min_level = 1;
    int context_dim = 64;  // verb-token width; used by tt_gen only
};

struct ExperimentConfig {
    scene::SceneSpec scene;
    codec::CodecConfig codec;
    int codec_hidden = 64;  // learned-codec bottleneck width
    diffusion::ScheduleConfig schedule;
    StageParams stage1;
    StageParams stage2;
    TrainParams train;
    AugmentParams augment;
    LossParams loss;
    SamplerParams sampler;
    SeedParams seeds;
    PathParams paths;
    AblationParams ablation;

    diffusion::DenoiserConfig stage1_denoiser() const {
        return derive_denoiser(stage1, stage1.variant == "tt_gen");
    }
    diffusion::DenoiserConfig stage2_denoiser() const { return derive_denoiser(stage2, false); }

    std::vector<std::string> violations() const;
    void validate() const;

private:
    diffusion::DenoiserConfig derive_denoiser(const StageParams& sp, bool verb_context) const {
        diffusion::DenoiserConfig d;
        d.out_channels = codec.c_z;
        d.in_channels = 3 * codec.c_z;  // latent state + image block + mask block
        d.num_frames = scene.num_frames;
        d.base_width = sp.base_width;
        d.width_mult = sp.width_mult;
        d.blocks_per_level = sp.blocks_per_level;
        d.temb_dim = sp.temb_dim;
        d.groups = sp.groups;
        d.heads = sp.heads;
        d.spatial_attn_min_level = sp.spatial_attn_min_level;
        if (verb_context) {
            d.context_vocab =
                static_cast<int>(pipeline::ActionVocabulary::scene_verbs().size());
            d.context_dim = sp.context_dim;
        }
        return d;
    }
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : std::runtime_error(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const { return violations_; }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["error"] = "config_validation";
        j["violations"] = violations_;
        return j;
    }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "invalid configuration:";
        for (const auto& m : v) s += "\n  - " + m;
        return s;
    }
    std::vector<std::string> violations_;
};

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

// Published training regime: reference learning hyperparameters on the
// default scene and a 4-channel latent space.
inline ExperimentConfig paper_defaults() {
    ExperimentConfig c;
    c.train.lr = 1e-5;
    c.train.batch_size = 8;
    c.train.num_steps = 30000;
    c.stage1.variant = "tt_gen";
    return c;
}

// Desk-scale configuration: the same geometry with a wider latent space,
// larger and faster objects, and a practical learning rate, sized so the
// conditioned model separates cleanly from copy-first-frame baselines.
inline ExperimentConfig desk_defaults() {
    ExperimentConfig c = paper_defaults();
    c.scene.object_size_min = 5;
    c.scene.object_size_max = 8;
    c.scene.velocity_min = 2.0;
    c.scene.velocity_max = 3.0;
    c.codec.c_z = 20;
    c.train.lr = 3e-4;
    c.train.num_steps = 2000;
    return c;
}

// ---------------------------------------------------------------------------
// Strict JSON parsing
// ---------------------------------------------------------------------------

namespace detail {

// Reads known keys from one JSON object, recording type errors and leftover
// (unknown) keys as violations instead of stopping at the first problem.
class Section {
public:
    Section(const nlohmann::json& j, std::string prefix, std::vector<std::string>& out)
        : j_(j), prefix_(std::move(prefix)), out_(out) {}

    template <typename T>
    void get(const char* key, T& dst) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        consumed_.insert(key);
        try {
            it->get_to(dst);
        } catch (const nlohmann::json::exception&) {
            out_.push_back(prefix_ + "." + key + ": wrong type, got " + it->dump());
        }
    }

    void finish() {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!consumed_.count(it.key()))
                out_.push_back(prefix_ + "." + it.key() + ": unknown key");
    }

private:
    const nlohmann::json& j_;
    std::string prefix_;
    std::vector<std::string>& out_;
    std::set<std::string> consumed_;
};

inline void parse_names(const nlohmann::json& j, const std::string& where,
                        std::vector<std::string>& out, std::vector<std::string>& violations) {
    try {
        j.get_to(out);
    } catch (const nlohmann::json::exception&) {
        violations.push_back(where + ": expected an array of strings");
    }
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json shapes = nlohmann::ordered_json::array();
    for (auto k : c.scene.object_shape_set) shapes.push_back(scene::shape_name(k));
    nlohmann::ordered_json actions = nlohmann::ordered_json::array();
    for (auto v : c.scene.action_set) actions.push_back(scene::verb_name(v));
    j["scene"] = {{"height", c.scene.height},
                  {"width", c.scene.width},
                  {"num_frames", c.scene.num_frames},
                  {"num_distractors", c.scene.num_distractors},
                  {"object_shapes", shapes},
                  {"actions", actions},
                  {"rng_seed", c.scene.rng_seed},
                  {"velocity_min", c.scene.velocity_min},
                  {"velocity_max", c.scene.velocity_max},
                  {"actor_size_min", c.scene.actor_size_min},
                  {"actor_size_max", c.scene.actor_size_max},
                  {"object_size_min", c.scene.object_size_min},
                  {"object_size_max", c.scene.object_size_max},
                  {"latent_factor", c.scene.latent_factor}};
    j["codec"] = {{"mode", c.codec.mode == codec::CodecConfig::Mode::analytic ? "analytic"
                                                                              : "learned"},
                  {"factor", c.codec.factor},
                  {"c_z", c.codec.c_z},
                  {"projection_seed", c.codec.projection_seed},
                  {"hidden", c.codec_hidden}};
    j["schedule"] = {{"num_steps", c.schedule.num_steps},
                     {"beta_start", c.schedule.beta_start},
                     {"beta_end", c.schedule.beta_end}};
    auto stage_json = [](const StageParams& s, bool with_variant) {
        nlohmann::ordered_json js;
        if (with_variant) js["variant"] = s.variant;
        js["base_width"] = s.base_width;
        js["width_mult"] = s.width_mult;
        js["blocks_per_level"] = s.blocks_per_level;
        js["temb_dim"] = s.temb_dim;
        js["groups"] = s.groups;
        js["heads"] = s.heads;
        js["spatial_attn_min_level"] = s.spatial_attn_min_level;
        if (with_variant) js["context_dim"] = s.context_dim;
        return js;
    };
    j["stage1"] = stage_json(c.stage1, true);
    j["stage2"] = stage_json(c.stage2, false);
    j["train"] = {{"lr", c.train.lr},
                  {"weight_decay", c.train.weight_decay},
                  {"batch_size", c.train.batch_size},
                  {"num_steps", c.train.num_steps},
                  {"threads", c.train.threads},
                  {"smooth_window", c.train.smooth_window}};
    j["augment"] = {{"enabled", c.augment.enabled}, {"p", c.augment.p},
                    {"kernels", c.augment.kernels}};
    j["loss"] = {{"contact", c.loss.contact},
                 {"lambda", c.loss.lambda},
                 {"kernel", c.loss.kernel}};
    j["sampler"] = {{"steps", c.sampler.steps}};
    j["seeds"] = {{"data", c.seeds.data},
                  {"model", c.seeds.model},
                  {"train", c.seeds.train},
                  {"sample", c.seeds.sample},
                  {"extractor", c.seeds.extractor}};
    j["paths"] = {{"out", c.paths.out},
                  {"cache", c.paths.cache},
                  {"codec_checkpoint", c.paths.codec_checkpoint}};
    j["ablation"] = {{"control", c.ablation.control},
                     {"object_mask", c.ablation.object_mask},
                     {"random_de", c.ablation.random_de},
                     {"contact_loss", c.ablation.contact_loss}};
    return j;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
    return detail::fnv1a(to_json(c).dump());
}

// Builds a config from JSON: an optional "profile" key picks the base
// (paper_defaults unless told otherwise) and the remaining sections override
// it field by field. Unknown keys, type errors, and constraint violations are
// all collected and reported together.
inline ExperimentConfig from_json(const nlohmann::json& root) {
    std::vector<std::string> v;
    if (!root.is_object()) throw ConfigError({"top level: expected a JSON object"});

    ExperimentConfig c;
    {
        auto it = root.find("profile");
        if (it != root.end()) {
            const std::string p = it->is_string() ? it->get<std::string>() : it->dump();
            if (p == "paper_defaults")
                c = paper_defaults();
            else if (p == "desk_defaults")
                c = desk_defaults();
            else
                v.push_back("profile: unknown profile " + p);
        } else {
            c = paper_defaults();
        }
    }

    static const std::set<std::string> sections = {
        "profile", "scene",   "codec", "schedule", "stage1", "stage2", "train",
        "augment", "loss",    "sampler", "seeds",  "paths",  "ablation"};
    for (auto it = root.begin(); it != root.end(); ++it)
        if (!sections.count(it.key())) v.push_back(it.key() + ": unknown key");

    auto section = [&](const char* name) -> const nlohmann::json* {
        auto it = root.find(name);
        if (it == root.end()) return nullptr;
        if (!it->is_object()) {
            v.push_back(std::string(name) + ": expected an object");
            return nullptr;
        }
        return &*it;
    };

    if (const auto* js = section("scene")) {
        detail::Section s(*js, "scene", v);
        s.get("height", c.scene.height);
        s.get("width", c.scene.width);
        s.get("num_frames", c.scene.num_frames);
        s.get("num_distractors", c.scene.num_distractors);
        s.get("rng_seed", c.scene.rng_seed);
        s.get("velocity_min", c.scene.velocity_min);
        s.get("velocity_max", c.scene.velocity_max);
        s.get("actor_size_min", c.scene.actor_size_min);
        s.get("actor_size_max", c.scene.actor_size_max);
        s.get("object_size_min", c.scene.object_size_min);
        s.get("object_size_max", c.scene.object_size_max);
        s.get("latent_factor", c.scene.latent_factor);
        if (js->contains("object_shapes")) {
            std::vector<std::string> names;
            detail::parse_names(js->at("object_shapes"), "scene.object_shapes", names, v);
            std::vector<scene::ShapeKind> kinds;
            for (const auto& n : names) {
                try {
                    kinds.push_back(scene::shape_from_name(n));
                } catch (const std::exception&) {
                    v.push_back("scene.object_shapes: unknown shape " + n);
                }
            }
            if (!names.empty()) c.scene.object_shape_set = kinds;
        }
        if (js->contains("actions")) {
            std::vector<std::string> names;
            detail::parse_names(js->at("actions"), "scene.actions", names, v);
            std::vector<scene::Verb> verbs;
            for (const auto& n : names) {
                try {
                    verbs.push_back(scene::verb_from_name(n));
                } catch (const std::exception&) {
                    v.push_back("scene.actions: unknown verb " + n);
                }
            }
            if (!names.empty()) c.scene.action_set = verbs;
        }
        static const std::set<std::string> known = {
            "height",         "width",           "num_frames",     "num_distractors",
            "rng_seed",       "velocity_min",    "velocity_max",   "actor_size_min",
            "actor_size_max", "object_size_min", "object_size_max", "latent_factor",
            "object_shapes",  "actions"};
        for (auto it = js->begin(); it != js->end(); ++it)
            if (!known.count(it.key())) v.push_back("scene." + it.key() + ": unknown key");
    }

    if (const auto* js = section("codec")) {
        detail::Section s(*js, "codec", v);
        std::string mode = c.codec.mode == codec::CodecConfig::Mode::analytic ? "analytic"
                                                                              : "learned";
        s.get("mode", mode);
        if (mode == "analytic")
            c.codec.mode = codec::CodecConfig::Mode::analytic;
        else if (mode == "learned")
            c.codec.mode = codec::CodecConfig::Mode::learned;
        else
            v.push_back("codec.mode: expected analytic or learned, got " + mode);
        s.get("factor", c.codec.factor);
        s.get("c_z", c.codec.c_z);
        s.get("projection_seed", c.codec.projection_seed);
        s.get("hidden", c.codec_hidden);
        s.finish();
    }

    if (const auto* js = section("schedule")) {
        detail::Section s(*js, "schedule", v);
        s.get("num_steps", c.schedule.num_steps);
        s.get("beta_start", c.schedule.beta_start);
        s.get("beta_end", c.schedule.beta_end);
        s.finish();
    }

    auto parse_stage = [&](const char* name, StageParams& sp, bool with_variant) {
        if (const auto* js = section(name)) {
            detail::Section s(*js, name, v);
            if (with_variant) {
                s.get("variant", sp.variant);
                s.get("context_dim", sp.context_dim);
            }
            s.get("base_width", sp.base_width);
            s.get("width_mult", sp.width_mult);
            s.get("blocks_per_level", sp.blocks_per_level);
            s.get("temb_dim", sp.temb_dim);
            s.get("groups", sp.groups);
            s.get("heads", sp.heads);
            s.get("spatial_attn_min_level", sp.spatial_attn_min_level);
            s.finish();
        }
    };
    parse_stage("stage1", c.stage1, true);
    parse_stage("stage2", c.stage2, false);

    if (const auto* js = section("train")) {
        detail::Section s(*js, "train", v);
        s.get("lr", c.train.lr);
        s.get("weight_decay", c.train.weight_decay);
        s.get("batch_size", c.train.batch_size);
        s.get("num_steps", c.train.num_steps);
        s.get("threads", c.train.threads);
        s.get("smooth_window", c.train.smooth_window);
        s.finish();
    }

    if (const auto* js = section("augment")) {
        detail::Section s(*js, "augment", v);
        s.get("enabled", c.augment.enabled);
        s.get("p", c.augment.p);
        s.get("kernels", c.augment.kernels);
        s.finish();
    }

    if (const auto* js = section("loss")) {
        detail::Section s(*js, "loss", v);
        s.get("contact", c.loss.contact);
        s.get("lambda", c.loss.lambda);
        s.get("kernel", c.loss.kernel);
        s.finish();
    }

    if (const auto* js = section("sampler")) {
        detail::Section s(*js, "sampler", v);
        s.get("steps", c.sampler.steps);
        s.finish();
    }

    if (const auto* js = section("seeds")) {
        detail::Section s(*js, "seeds", v);
        s.get("data", c.seeds.data);
        s.get("model", c.seeds.model);
        s.get("train", c.seeds.train);
        s.get("sample", c.seeds.sample);
        s.get("extractor", c.seeds.extractor);
        s.finish();
    }

    if (const auto* js = section("paths")) {
        detail::Section s(*js, "paths", v);
        s.get("out", c.paths.out);
        s.get("cache", c.paths.cache);
        s.get("codec_checkpoint", c.paths.codec_checkpoint);
        s.finish();
    }

    if (const auto* js = section("ablation")) {
        detail::Section s(*js, "ablation", v);
        s.get("control", c.ablation.control);
        s.get("object_mask", c.ablation.object_mask);
        s.get("random_de", c.ablation.random_de);
        s.get("contact_loss", c.ablation.contact_loss);
        s.finish();
    }

    auto more = c.violations();
    v.insert(v.end(), more.begin(), more.end());
    if (!v.empty()) throw ConfigError(std::move(v));
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError({"cannot open config file " + file.string()});
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({"config file " + file.string() + ": " + e.what()});
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline std::vector<std::string> ExperimentConfig::violations() const {
    std::vector<std::string> v;

    if (scene.height < 16 || scene.width < 16)
        v.push_back("scene: height and width must be >= 16");
    if (scene.latent_factor < 1 || scene.height % scene.latent_factor != 0 ||
        scene.width % scene.latent_factor != 0)
        v.push_back("scene: height and width must be divisible by the latent factor");
    if (scene.num_frames < 2) v.push_back("scene: num_frames must be >= 2");
    if (scene.num_distractors < 0) v.push_back("scene: num_distractors must be >= 0");
    if (scene.velocity_min < 0 || scene.velocity_max < scene.velocity_min)
        v.push_back("scene: invalid velocity range");
    if (scene.actor_size_min < 4 || scene.actor_size_max < scene.actor_size_min)
        v.push_back("scene: invalid actor size range");
    if (scene.object_size_min < 2 || scene.object_size_max < scene.object_size_min)
        v.push_back("scene: invalid object size range");
    if (scene.object_shape_set.empty() || scene.action_set.empty())
        v.push_back("scene: shape set and action set must be nonempty");

    if (codec.factor < 1 || (codec.factor & (codec.factor - 1)) != 0)
        v.push_back("codec: factor must be a power of two >= 1");
    if (codec.c_z < 1) v.push_back("codec: c_z must be >= 1");
    if (codec.c_z > 3 * codec.factor * codec.factor)
        v.push_back("codec: c_z cannot exceed 3 * factor^2");
    if (codec.factor != scene.latent_factor)
        v.push_back("codec: factor must equal scene.latent_factor");
    if (codec_hidden < 1) v.push_back("codec: hidden must be >= 1");
    if (codec.mode == codec::CodecConfig::Mode::learned && paths.codec_checkpoint.empty())
        v.push_back("codec: a learned codec needs paths.codec_checkpoint");

    if (schedule.num_steps < 1) v.push_back("schedule: num_steps must be positive");
    if (!(schedule.beta_start > 0.0) || !(schedule.beta_end < 1.0) ||
        schedule.beta_start > schedule.beta_end)
        v.push_back("schedule: need 0 < beta_start <= beta_end < 1");

    if (stage1.variant != "tt_gen" && stage1.variant != "pt_gen")
        v.push_back("stage1: variant must be tt_gen or pt_gen");
    for (const auto* sp : {&stage1, &stage2}) {
        const char* name = sp == &stage1 ? "stage1" : "stage2";
        if (sp->base_width < 1 || sp->width_mult.empty())
            v.push_back(std::string(name) + ": empty width schedule");
        if (sp->blocks_per_level < 1)
            v.push_back(std::string(name) + ": blocks_per_level must be positive");
        if (sp->temb_dim < 2 || sp->temb_dim % 2 != 0)
            v.push_back(std::string(name) + ": temb_dim must be even and >= 2");
    }
    if (stage1.variant == "tt_gen" && stage1.context_dim < 1)
        v.push_back("stage1: context_dim must be positive for tt_gen");

    // the derived denoisers carry further divisibility constraints
    for (int stage : {1, 2}) {
        try {
            (stage == 1 ? stage1_denoiser() : stage2_denoiser()).validate();
        } catch (const std::invalid_argument& e) {
            v.push_back("stage" + std::to_string(stage) + ": " + e.what());
        }
    }

    if (!(train.lr > 0.0)) v.push_back("train: lr must be positive");
    if (train.weight_decay < 0.0) v.push_back("train: weight_decay must be >= 0");
    if (train.batch_size < 1) v.push_back("train: batch_size must be >= 1");
    if (train.num_steps < 1) v.push_back("train: num_steps must be >= 1");
    if (train.threads < 1) v.push_back("train: threads must be >= 1");
    if (train.smooth_window < 1) v.push_back("train: smooth_window must be >= 1");

    if (!(augment.p >= 0.0 && augment.p <= 1.0)) v.push_back("augment: p must be in [0, 1]");
    if (augment.kernels.empty()) v.push_back("augment: kernel set must be nonempty");
    for (int k : augment.kernels)
        if (k < 1 || k % 2 == 0) v.push_back("augment: kernels must be odd and positive");

    if (loss.lambda < 0.0) v.push_back("loss: lambda must be >= 0");
    if (loss.kernel < 1 || loss.kernel % 2 == 0)
        v.push_back("loss: kernel must be odd and positive");

    if (sampler.steps < 1) v.push_back("sampler: steps must be >= 1");

    if (paths.out.empty()) v.push_back("paths: out must be nonempty");

    if (ablation.control != "concat" && ablation.control != "none")
        v.push_back("ablation: control must be concat or none");

    return v;
}

inline void ExperimentConfig::validate() const {
    auto v = violations();
    if (!v.empty()) throw ConfigError(std::move(v));
}

}  // namespace ivgen::config
