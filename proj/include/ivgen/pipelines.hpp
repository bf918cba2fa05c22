#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivgen/conditioning.hpp"
#include "ivgen/denoiser.hpp"
#include "ivgen/diffusion.hpp"
#include "ivgen/model_io.hpp"
#include "ivgen/png_io.hpp"

namespace ivgen::pipeline {

// A denoiser bound to its noise schedule and the conditioning layout it was
// trained for. Non-owning; the referenced objects must outlive the view.
struct StageModel {
    const diffusion::Denoiser<float>* model = nullptr;
    const diffusion::NoiseSchedule<float>* schedule = nullptr;
    LayoutTag layout = LayoutTag::stage2;

    void validate() const {
        if (model == nullptr || schedule == nullptr)
            throw std::invalid_argument("StageModel: missing model or schedule");
    }
};

// Runs the deterministic sampler with the denoiser conditioned on `bundle`:
// each predictor call concatenates the current latent state with the bundle's
// per-frame channels and evaluates the network in inference mode.
inline Tensor<float> sample_latents(const diffusion::Denoiser<float>& model,
                                    const diffusion::NoiseSchedule<float>& sched,
                                    const ConditioningBundle& bundle, int steps,
                                    unsigned long long seed) {
    const auto& cfg = model.config();
    const int cond_ch = cfg.in_channels - cfg.out_channels;
    if (cond_ch <= 0 || cond_ch % 2 != 0)
        throw std::invalid_argument("sample_latents: model channel layout " +
                                    std::to_string(cfg.in_channels) + "->" +
                                    std::to_string(cfg.out_channels) +
                                    " leaves no room for a conditioning block");
    validate_bundle(bundle, cfg.num_frames, cond_ch / 2);
    const auto& lat = bundle.per_frame_latents;
    const std::vector<int> shape = {cfg.num_frames, lat.dim(1), lat.dim(2), cfg.out_channels};
    auto predict = [&](const Tensor<float>& x_t, int t) {
        autodiff::Graph<float> g;
        auto P = nn::bind_params(model.params(), g, false);
        const int x = g.add_leaf(concat_channels(x_t, lat));
        const int out = model.forward(g, P, x, static_cast<float>(t), bundle.context_rows);
        return g.val(out);
    };
    return diffusion::ddim_sample<float>(shape, predict, sched, steps, seed);
}

// Samples a trajectory from an action- or position-conditioned bundle and
// quantizes the decoded frames back to segmentation maps.
inline Trajectory generate_trajectory(const diffusion::Denoiser<float>& model,
                                      const diffusion::NoiseSchedule<float>& sched,
                                      const codec::ICodec& cod, const ConditioningBundle& bundle,
                                      int steps, unsigned long long seed) {
    if (bundle.layout_tag != LayoutTag::tt_gen && bundle.layout_tag != LayoutTag::pt_gen)
        throw std::invalid_argument(std::string("generate_trajectory: bundle layout ") +
                                    layout_name(bundle.layout_tag) +
                                    " is not a trajectory layout");
    return decode_trajectory(cod, sample_latents(model, sched, bundle, steps, seed));
}

namespace detail {

inline std::vector<mask::Image8> video_to_images(const Tensor<float>& video) {
    std::vector<mask::Image8> frames;
    Tensor<float> frame({video.dim(1), video.dim(2), video.dim(3)});
    for (int n = 0; n < video.dim(0); ++n) {
        std::copy_n(video.data.begin() + static_cast<std::ptrdiff_t>(n) * frame.numel(),
                    frame.numel(), frame.data.begin());
        frames.push_back(codec::tensor_to_image(frame));
    }
    return frames;
}

}  // namespace detail

// Renders the interaction video for a first frame steered by a trajectory.
// Conditioning is built without mask augmentation; augmentation is a training
// regularizer only.
inline std::vector<mask::Image8> generate_video(const diffusion::Denoiser<float>& model,
                                                const diffusion::NoiseSchedule<float>& sched,
                                                const codec::ICodec& cod, const mask::Image8& I,
                                                const Trajectory& S, int steps,
                                                unsigned long long seed) {
    const ConditioningBundle bundle = build_stage2_condition(cod, I, S);
    const Tensor<float> lat = sample_latents(model, sched, bundle, steps, seed);
    return detail::video_to_images(cod.decode_video(lat));
}

// ---------------------------------------------------------------------------
// Two-stage driver
// ---------------------------------------------------------------------------

struct TwoStageRequest {
    mask::Image8 image;            // first frame
    mask::SegmentationMap seg;     // its segmentation
    std::string verb;              // action condition; leave empty when unused
    mask::BinaryMask position;     // target-position condition; leave empty when unused
    int steps = 50;
    unsigned long long trajectory_seed = 1;
    unsigned long long video_seed = 2;
};

struct TwoStageResult {
    Trajectory trajectory;
    std::vector<mask::Image8> frames;
    std::uint64_t trajectory_model_hash = 0;
    std::uint64_t video_model_hash = 0;
};

inline nlohmann::ordered_json artifact_provenance(const std::string& kind,
                                                  std::uint64_t model_hash,
                                                  unsigned long long seed, int steps,
                                                  const nlohmann::ordered_json& condition) {
    nlohmann::ordered_json j;
    j["kind"] = kind;
    j["model_hash"] = model_hash;
    j["seed"] = seed;
    j["steps"] = steps;
    j["condition"] = condition;
    return j;
}

namespace detail {

inline void write_json(const std::filesystem::path& file, const nlohmann::ordered_json& j) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << j.dump(2) << "\n";
}

inline void write_frame_sequence(const std::filesystem::path& dir, const char* prefix,
                                 const std::vector<mask::Image8>& frames) {
    char name[32];
    for (std::size_t n = 0; n < frames.size(); ++n) {
        std::snprintf(name, sizeof name, "%s_%03d.png", prefix, static_cast<int>(n));
        png_io::write_png_rgb8(dir / name, frames[n]);
    }
}

}  // namespace detail

// Persists a sampled trajectory as color-coded frames traj_000.png, ... plus
// traj_provenance.json describing how it was produced.
inline void write_trajectory_artifact(const std::filesystem::path& dir, const Trajectory& traj,
                                      const nlohmann::ordered_json& provenance) {
    std::filesystem::create_directories(dir);
    std::vector<mask::Image8> frames;
    for (const auto& s : traj.seg_maps) frames.push_back(mask::encode_colors(s));
    detail::write_frame_sequence(dir, "traj", frames);
    detail::write_json(dir / "traj_provenance.json", provenance);
}

// Persists rendered video frames as gen_000.png, ... plus gen_provenance.json.
inline void write_video_artifact(const std::filesystem::path& dir,
                                 const std::vector<mask::Image8>& frames,
                                 const nlohmann::ordered_json& provenance) {
    std::filesystem::create_directories(dir);
    detail::write_frame_sequence(dir, "gen", frames);
    detail::write_json(dir / "gen_provenance.json", provenance);
}

// Chains trajectory generation into video generation. Exactly one of
// `req.verb` / `req.position` selects the first-stage condition, and it must
// match the layout the first-stage model was trained for. When `out_dir` is
// given, both artifacts are persisted there; reruns with identical inputs
// produce byte-identical files.
inline TwoStageResult run_two_stage(const StageModel& stage1, const StageModel& stage2,
                                    const codec::ICodec& cod, const ActionVocabulary& vocab,
                                    const TwoStageRequest& req,
                                    const std::optional<std::filesystem::path>& out_dir = {}) {
    stage1.validate();
    stage2.validate();
    const bool has_verb = !req.verb.empty();
    const bool has_pos = !req.position.empty();
    if (has_verb == has_pos)
        throw std::invalid_argument(
            "run_two_stage: provide exactly one of verb / target position");
    if (has_verb && stage1.layout != LayoutTag::tt_gen)
        throw std::invalid_argument(std::string("run_two_stage: verb condition into a ") +
                                    layout_name(stage1.layout) + " model");
    if (has_pos && stage1.layout != LayoutTag::pt_gen)
        throw std::invalid_argument(
            std::string("run_two_stage: target-position condition into a ") +
            layout_name(stage1.layout) + " model");
    if (stage2.layout != LayoutTag::stage2)
        throw std::invalid_argument(std::string("run_two_stage: second stage is a ") +
                                    layout_name(stage2.layout) + " model");

    const int N = stage1.model->config().num_frames;
    const ConditioningBundle bundle =
        has_verb ? build_tt_condition(cod, req.image, req.seg, req.verb, vocab, N)
                 : build_pt_condition(cod, req.image, req.seg, req.position, N);

    TwoStageResult res;
    res.trajectory = generate_trajectory(*stage1.model, *stage1.schedule, cod, bundle, req.steps,
                                         req.trajectory_seed);
    res.frames = generate_video(*stage2.model, *stage2.schedule, cod, req.image, res.trajectory,
                                req.steps, req.video_seed);
    res.trajectory_model_hash = model::param_hash(stage1.model->params());
    res.video_model_hash = model::param_hash(stage2.model->params());

    if (out_dir) {
        nlohmann::ordered_json cond;
        cond["layout"] = layout_name(stage1.layout);
        if (has_verb) cond["verb"] = req.verb;
        if (has_pos) cond["position_file"] = "target_position.png";
        write_trajectory_artifact(*out_dir,
                                  res.trajectory,
                                  artifact_provenance("trajectory", res.trajectory_model_hash,
                                                      req.trajectory_seed, req.steps, cond));
        if (has_pos) {
            mask::SegmentationMap pm(req.position.height, req.position.width);
            for (std::size_t i = 0; i < pm.roles.size(); ++i)
                if (req.position.bits[i])
                    pm.roles[i] = static_cast<std::uint8_t>(mask::Role::object);
            png_io::write_png_rgb8(*out_dir / "target_position.png", mask::encode_colors(pm));
        }
        nlohmann::ordered_json vcond;
        vcond["layout"] = "stage2";
        vcond["trajectory"] = "traj_provenance.json";
        write_video_artifact(*out_dir, res.frames,
                             artifact_provenance("video", res.video_model_hash, req.video_seed,
                                                 req.steps, vcond));
    }
    return res;
}

}  // namespace ivgen::pipeline
