#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivgen/codec.hpp"
#include "ivgen/conditioning.hpp"
#include "ivgen/config.hpp"
#include "ivgen/curation.hpp"
#include "ivgen/dataset.hpp"
#include "ivgen/learned_codec.hpp"
#include "ivgen/metrics.hpp"
#include "ivgen/model_io.hpp"
#include "ivgen/pipelines.hpp"
#include "ivgen/train.hpp"

namespace ivgen::cli {

namespace fs = std::filesystem;

// Runtime failure with a machine-readable rendering; config problems use
// config::ConfigError instead.
class RunError : public std::runtime_error {
public:
    explicit RunError(const std::string& msg) : std::runtime_error(msg) {}

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["error"] = "runtime";
        j["message"] = what();
        return j;
    }
};

namespace detail {

inline void write_json(const fs::path& file, const nlohmann::ordered_json& j) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw RunError("cannot write " + file.string());
    out << j.dump(2) << "\n";
    if (!out) throw RunError("failed writing " + file.string());
}

// Every artifact starts from the same provenance header: the full config,
// verbatim, plus its hash, so any output can be re-derived bit for bit.
inline nlohmann::ordered_json provenance(const std::string& kind,
                                         const config::ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["kind"] = kind;
    j["config_hash"] = config::config_hash(cfg);
    j["config"] = config::to_json(cfg);
    return j;
}

inline std::unique_ptr<codec::ICodec> make_codec(const config::ExperimentConfig& cfg) {
    if (cfg.codec.mode == codec::CodecConfig::Mode::analytic)
        return std::make_unique<codec::AnalyticCodec>(cfg.codec);
    std::unique_ptr<codec::LearnedCodec> lc;
    try {
        lc = codec::load_learned_codec(cfg.paths.codec_checkpoint);
    } catch (const std::exception& e) {
        throw RunError(std::string("learned codec: ") + e.what());
    }
    if (lc->config().factor != cfg.codec.factor || lc->config().c_z != cfg.codec.c_z)
        throw RunError("learned codec checkpoint geometry does not match the config");
    return lc;
}

inline Tensor<float> stack_frames(const std::vector<mask::Image8>& frames) {
    if (frames.empty()) throw RunError("clip has no frames");
    const int n = static_cast<int>(frames.size());
    Tensor<float> video({n, frames[0].height, frames[0].width, 3});
    for (int t = 0; t < n; ++t) {
        const Tensor<float> f = codec::image_to_tensor(frames[static_cast<std::size_t>(t)]);
        std::copy(f.data.begin(), f.data.end(),
                  video.data.begin() + static_cast<std::ptrdiff_t>(t) * f.numel());
    }
    return video;
}

inline int stage_index(const std::string& stage) {
    if (stage == "stage1") return 1;
    if (stage == "stage2") return 2;
    throw RunError("stage must be stage1 or stage2, got " + stage);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth: procedural dataset generation
// ---------------------------------------------------------------------------

inline dataset::Manifest cmd_synth(const config::ExperimentConfig& cfg, int count,
                                   const fs::path& out_dir) {
    cfg.validate();
    if (count < 1) throw RunError("synth: count must be >= 1");
    const dataset::Manifest m = dataset::generate_dataset(cfg.scene, count, cfg.seeds.data, out_dir);
    auto prov = detail::provenance("dataset", cfg);
    prov["count"] = count;
    prov["seed"] = cfg.seeds.data;
    prov["manifest"] = "manifest.jsonl";
    detail::write_json(out_dir / "provenance.json", prov);
    return m;
}

// ---------------------------------------------------------------------------
// curate: motion filtering + manipulated-instance identification
// ---------------------------------------------------------------------------

inline std::vector<curation::CuratedEntry> cmd_curate(const config::ExperimentConfig& cfg,
                                                      const fs::path& dataset_dir,
                                                      const fs::path& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    std::vector<curation::CuratedEntry> entries;
    try {
        entries = curation::curate_dataset(dataset_dir, out_dir / "curated.jsonl");
    } catch (const std::exception& e) {
        throw RunError(std::string("curate: ") + e.what());
    }
    int kept = 0;
    for (const auto& e : entries) kept += e.kept ? 1 : 0;
    auto prov = detail::provenance("curation", cfg);
    prov["dataset"] = dataset_dir.string();
    prov["total"] = entries.size();
    prov["kept"] = kept;
    prov["manifest"] = "curated.jsonl";
    detail::write_json(out_dir / "provenance.json", prov);
    return entries;
}

// ---------------------------------------------------------------------------
// train: build conditioned samples and fit one stage
// ---------------------------------------------------------------------------

struct TrainOutcome {
    train::TrainStats stats;
    fs::path checkpoint;
    std::uint64_t model_hash = 0;
    std::string variant;
    int num_clips = 0;
};

namespace detail {

// Assembles the per-clip training sample for one stage, honoring the
// ablation switches. Augmentation randomness is keyed off the data seed and
// the clip index so the sample set is independent of training order.
inline train::TrainSample make_sample(const config::ExperimentConfig& cfg,
                                      const codec::ICodec& cod, const scene::Clip& clip,
                                      int clip_index, const std::string& variant,
                                      const pipeline::ActionVocabulary& vocab) {
    const int N = cfg.scene.num_frames;
    if (clip.num_frames() != N)
        throw RunError("clip " + clip.clip_id + " has " + std::to_string(clip.num_frames()) +
                       " frames, config expects " + std::to_string(N));
    const pipeline::Trajectory traj = pipeline::trajectory_of(clip);
    train::TrainSample s;
    pipeline::ConditioningBundle bundle;
    if (variant == "tt_gen") {
        s.x0 = pipeline::encode_trajectory(cod, traj);
        bundle = pipeline::build_tt_condition(cod, clip.frames.at(0), clip.seg_maps.at(0),
                                              scene::verb_name(clip.action.verb), vocab, N);
    } else if (variant == "pt_gen") {
        s.x0 = pipeline::encode_trajectory(cod, traj);
        bundle = pipeline::build_pt_condition(cod, clip.frames.at(0), clip.seg_maps.at(0),
                                              clip.target_position_mask, N);
    } else if (variant == "stage2") {
        s.x0 = cod.encode_video(stack_frames(clip.frames));
        const pipeline::Trajectory cond_traj =
            cfg.ablation.object_mask ? traj : pipeline::actor_only(traj);
        if (cfg.augment.enabled && cfg.ablation.random_de) {
            pipeline::AugmentConfig aug;
            aug.p = cfg.augment.p;
            aug.kernels = cfg.augment.kernels;
            Rng rng = make_rng(derive_seed(derive_seed(cfg.seeds.data, 0xde00ull),
                                           static_cast<std::uint64_t>(clip_index)));
            bundle = pipeline::build_stage2_condition(cod, clip.frames.at(0), cond_traj, aug, rng);
        } else {
            bundle = pipeline::build_stage2_condition(cod, clip.frames.at(0), cond_traj);
        }
        if (cfg.loss.contact && cfg.ablation.contact_loss)
            s.weight = pipeline::contact_weights(traj, static_cast<float>(cfg.loss.lambda),
                                                 cfg.codec.factor, cfg.loss.kernel);
    } else {
        throw RunError("unknown variant " + variant);
    }
    s.cond = bundle.per_frame_latents;
    s.context_rows = bundle.context_rows;
    if (cfg.ablation.control == "none")
        std::fill(s.cond.data.begin(), s.cond.data.end(), 0.0f);
    return s;
}

}  // namespace detail

inline TrainOutcome cmd_train(const config::ExperimentConfig& cfg, const std::string& stage,
                              const fs::path& dataset_dir, const fs::path& manifest_path,
                              const fs::path& out_dir) {
    cfg.validate();
    const int idx = detail::stage_index(stage);
    const std::string variant = idx == 1 ? cfg.stage1.variant : "stage2";
    const diffusion::DenoiserConfig dcfg =
        idx == 1 ? cfg.stage1_denoiser() : cfg.stage2_denoiser();

    // resolve the clip list: a curated manifest keeps only its surviving
    // clips, otherwise the raw dataset manifest is used as-is
    std::vector<std::string> clip_paths;
    try {
        if (!manifest_path.empty()) {
            for (const auto& e : curation::read_curated_manifest(manifest_path))
                if (e.kept) clip_paths.push_back(e.path);
        } else {
            for (const auto& e : dataset::read_manifest(dataset_dir / "manifest.jsonl").entries)
                clip_paths.push_back(e.path);
        }
    } catch (const std::exception& e) {
        throw RunError(std::string("train: ") + e.what());
    }
    if (clip_paths.empty()) throw RunError("train: no clips to train on");

    const auto cod = detail::make_codec(cfg);
    const auto vocab = pipeline::ActionVocabulary::scene_verbs();
    std::vector<train::TrainSample> samples;
    samples.reserve(clip_paths.size());
    for (std::size_t i = 0; i < clip_paths.size(); ++i) {
        scene::Clip clip;
        try {
            clip = dataset::load_clip(dataset_dir / clip_paths[i]);
        } catch (const std::exception& e) {
            throw RunError(std::string("train: ") + e.what());
        }
        samples.push_back(detail::make_sample(cfg, *cod, clip, static_cast<int>(i), variant, vocab));
    }

    diffusion::Denoiser<float> model(dcfg, derive_seed(cfg.seeds.model,
                                                       static_cast<std::uint64_t>(idx)));
    nn::AdamWConfig<float> oc;
    oc.lr = static_cast<float>(cfg.train.lr);
    oc.weight_decay = static_cast<float>(cfg.train.weight_decay);
    nn::AdamW<float> opt(model.params(), oc);
    diffusion::NoiseSchedule<float> sched(cfg.schedule);
    Rng rng = make_rng(derive_seed(cfg.seeds.train, static_cast<std::uint64_t>(idx)));

    fs::create_directories(out_dir);
    train::TrainConfig tc;
    tc.num_steps = cfg.train.num_steps;
    tc.batch_size = cfg.train.batch_size;
    tc.threads = cfg.train.threads;
    tc.smooth_window = cfg.train.smooth_window;
    tc.log_csv = out_dir / "train_log.csv";
    const train::TrainStats stats = train::train_steps(model, opt, samples, sched, tc, rng);

    TrainOutcome out;
    out.stats = stats;
    out.checkpoint = out_dir / "model.ckpt";
    out.variant = variant;
    out.num_clips = static_cast<int>(samples.size());
    model::save_denoiser(model, sched, variant, out.checkpoint, &opt, &rng);
    out.model_hash = model::param_hash(model.params());

    nlohmann::ordered_json sj;
    sj["steps"] = stats.steps;
    sj["initial_loss"] = stats.initial_loss;
    sj["final_loss"] = stats.final_loss;
    detail::write_json(out_dir / "stats.json", sj);

    auto prov = detail::provenance("training", cfg);
    prov["stage"] = stage;
    prov["variant"] = variant;
    prov["model_hash"] = out.model_hash;
    prov["dataset"] = dataset_dir.string();
    prov["manifest"] = manifest_path.empty() ? std::string("manifest.jsonl")
                                             : manifest_path.string();
    prov["num_clips"] = out.num_clips;
    detail::write_json(out_dir / "provenance.json", prov);
    return out;
}

// ---------------------------------------------------------------------------
// generate: two-stage conditional sampling from checkpoints
// ---------------------------------------------------------------------------

struct GenerateRequest {
    fs::path stage1_checkpoint;
    fs::path stage2_checkpoint;
    fs::path clip_dir;      // source of the first frame + segmentation
    std::string verb;       // exactly one of verb / position_png
    fs::path position_png;
    int steps = 0;          // 0 = config sampler steps
    std::uint64_t seed = 0; // 0 = config sample seed
};

inline pipeline::TwoStageResult cmd_generate(const config::ExperimentConfig& cfg,
                                             const GenerateRequest& req,
                                             const fs::path& out_dir) {
    cfg.validate();
    std::optional<model::LoadedDenoiser> s1, s2;
    try {
        s1 = model::load_denoiser(req.stage1_checkpoint);
        s2 = model::load_denoiser(req.stage2_checkpoint);
    } catch (const std::exception& e) {
        throw RunError(std::string("generate: ") + e.what());
    }
    pipeline::StageModel m1{&s1->model, &s1->schedule, pipeline::layout_from_name(s1->meta.variant)};
    pipeline::StageModel m2{&s2->model, &s2->schedule, pipeline::layout_from_name(s2->meta.variant)};

    scene::Clip clip;
    try {
        clip = dataset::load_clip(req.clip_dir);
    } catch (const std::exception& e) {
        throw RunError(std::string("generate: ") + e.what());
    }

    pipeline::TwoStageRequest r;
    r.image = clip.frames.at(0);
    r.seg = clip.seg_maps.at(0);
    r.verb = req.verb;
    if (!req.position_png.empty()) {
        mask::Image8 img;
        try {
            img = png_io::read_png_rgb8(req.position_png);
        } catch (const std::exception& e) {
            throw RunError(std::string("generate: ") + e.what());
        }
        r.position = mask::decode_colors(img).role_mask(mask::Role::object);
        if (r.position.area() == 0)
            throw RunError("generate: position image holds no object-colored pixels");
    }
    r.steps = req.steps > 0 ? req.steps : cfg.sampler.steps;
    const std::uint64_t seed = req.seed != 0 ? req.seed : cfg.seeds.sample;
    r.trajectory_seed = derive_seed(seed, 1);
    r.video_seed = derive_seed(seed, 2);

    const auto cod = detail::make_codec(cfg);
    const auto vocab = pipeline::ActionVocabulary::scene_verbs();
    pipeline::TwoStageResult res;
    try {
        res = pipeline::run_two_stage(m1, m2, *cod, vocab, r, out_dir);
    } catch (const std::invalid_argument& e) {
        throw RunError(std::string("generate: ") + e.what());
    }

    auto prov = detail::provenance("generation", cfg);
    prov["stage1_checkpoint"] = req.stage1_checkpoint.string();
    prov["stage2_checkpoint"] = req.stage2_checkpoint.string();
    prov["stage1_model_hash"] = res.trajectory_model_hash;
    prov["stage2_model_hash"] = res.video_model_hash;
    prov["input_clip"] = clip.clip_id;
    prov["steps"] = r.steps;
    prov["seed"] = seed;
    if (!req.verb.empty()) prov["verb"] = req.verb;
    if (!req.position_png.empty()) prov["position_png"] = req.position_png.string();
    detail::write_json(out_dir / "provenance.json", prov);
    return res;
}

// ---------------------------------------------------------------------------
// eval: paired-clip metrics + distribution distance
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<mask::Image8> read_frame_sequence(const fs::path& dir) {
    std::vector<mask::Image8> frames;
    for (const char* pat : {"gen_%03d.png", "frame_%03d.png"}) {
        frames.clear();
        for (int t = 0;; ++t) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), pat, t);
            const fs::path p = dir / buf;
            if (!fs::exists(p)) break;
            frames.push_back(png_io::read_png_rgb8(p));
        }
        if (!frames.empty()) return frames;
    }
    throw RunError("no frames (gen_*.png or frame_*.png) in " + dir.string());
}

inline std::optional<pipeline::Trajectory> read_trajectory(const fs::path& dir) {
    for (const char* pat : {"traj_%03d.png", "mask_%03d.png"}) {
        pipeline::Trajectory traj;
        for (int t = 0;; ++t) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), pat, t);
            const fs::path p = dir / buf;
            if (!fs::exists(p)) break;
            traj.seg_maps.push_back(mask::decode_colors(png_io::read_png_rgb8(p)));
        }
        if (traj.length() > 0) return traj;
    }
    return std::nullopt;
}

inline std::vector<std::string> clip_subdirs(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw RunError("not a directory: " + dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace detail

inline metrics::EvalReport cmd_eval(const config::ExperimentConfig& cfg,
                                    const fs::path& generated_dir, const fs::path& reference_dir,
                                    const fs::path& out_dir) {
    cfg.validate();
    const auto gen_names = detail::clip_subdirs(generated_dir);
    const auto ref_names = detail::clip_subdirs(reference_dir);
    std::vector<std::string> paired;
    std::set_intersection(gen_names.begin(), gen_names.end(), ref_names.begin(),
                          ref_names.end(), std::back_inserter(paired));
    if (paired.size() < 2)
        throw RunError("eval: need at least two paired clip directories, found " +
                       std::to_string(paired.size()));

    metrics::EvalReport report;
    report.config_hash = config::config_hash(cfg);
    report.extractor_seed = cfg.seeds.extractor;
    std::vector<std::vector<mask::Image8>> gen_clips, ref_clips;
    for (const auto& name : paired) {
        auto gen = detail::read_frame_sequence(generated_dir / name);
        auto ref = detail::read_frame_sequence(reference_dir / name);
        if (gen.size() != ref.size())
            throw RunError("eval: clip " + name + " has " + std::to_string(gen.size()) +
                           " generated frames vs " + std::to_string(ref.size()) + " reference");
        metrics::ClipEval row;
        row.clip_id = name;
        row.psnr = metrics::psnr(gen, ref);
        row.ssim = metrics::ssim(gen, ref);
        const auto gt = detail::read_trajectory(generated_dir / name);
        const auto rt = detail::read_trajectory(reference_dir / name);
        if (gt && rt && gt->length() == rt->length())
            row.traj_iou = metrics::trajectory_iou(*gt, *rt, mask::Role::object);
        report.rows.push_back(std::move(row));
        gen_clips.push_back(std::move(gen));
        ref_clips.push_back(std::move(ref));
    }
    report.frechet = metrics::frechet_proxy(gen_clips, ref_clips, cfg.seeds.extractor);
    report.recompute_aggregates();

    fs::create_directories(out_dir);
    report.write(out_dir / "report.json", out_dir / "report.csv");
    auto prov = detail::provenance("evaluation", cfg);
    prov["generated"] = generated_dir.string();
    prov["reference"] = reference_dir.string();
    prov["clips"] = paired;
    detail::write_json(out_dir / "provenance.json", prov);
    return report;
}

// ---------------------------------------------------------------------------
// guarded entry point: exceptions become machine-readable stderr + exit code
// ---------------------------------------------------------------------------

template <typename Fn>
int run_guarded(Fn&& fn, std::ostream& err = std::cerr) {
    try {
        std::forward<Fn>(fn)();
        return 0;
    } catch (const config::ConfigError& e) {
        err << e.to_json().dump() << "\n";
        return 2;
    } catch (const RunError& e) {
        err << e.to_json().dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        nlohmann::ordered_json j;
        j["error"] = "runtime";
        j["message"] = e.what();
        err << j.dump() << "\n";
        return 1;
    }
}

}  // namespace ivgen::cli
