// Command-line frontend for the mask-conditioned interaction-video pipeline:
// synthesize a procedural dataset, curate it, train the two stages, run
// conditional generation from checkpoints, and score generated clips.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ivgen/cli.hpp"

namespace cli = ivgen::cli;
namespace config = ivgen::config;

namespace {

struct CommonOpts {
    std::string profile = "desk_defaults";
    std::string config_file;
    std::uint64_t seed = 0;  // 0 = keep the config's seed
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--profile", opts.profile, "Base profile: paper_defaults or desk_defaults")
        ->capture_default_str();
    cmd->add_option("--config", opts.config_file, "JSON config file overriding the profile");
    cmd->add_option("--seed", opts.seed, "Override the command's primary seed (nonzero)");
}

config::ExperimentConfig load(const CommonOpts& opts) {
    config::ExperimentConfig cfg;
    if (!opts.config_file.empty()) {
        cfg = config::load_config(opts.config_file);
    } else if (opts.profile == "paper_defaults") {
        cfg = config::paper_defaults();
    } else if (opts.profile == "desk_defaults") {
        cfg = config::desk_defaults();
    } else {
        throw config::ConfigError({"profile: unknown profile " + opts.profile});
    }
    if (const char* cache = std::getenv("IVGEN_CACHE_DIR"); cache && cfg.paths.cache.empty())
        cfg.paths.cache = cache;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage mask-conditioned interaction-video generation"};
    app.require_subcommand(1);

    CommonOpts common;
    int count = 16;
    std::string out_dir = "out";
    std::string dataset_dir, manifest_path, stage = "stage1";
    cli::GenerateRequest gen;
    std::string generated_dir, reference_dir;
    std::string verb, position_png, stage1_ckpt, stage2_ckpt, clip_dir;
    int steps = 0;

    auto* synth = app.add_subcommand("synth", "Generate a procedural clip dataset");
    add_common(synth, common);
    synth->add_option("--count", count, "Number of clips")->capture_default_str();
    synth->add_option("--out", out_dir, "Output dataset directory")->required();

    auto* curate = app.add_subcommand("curate", "Filter a dataset by motion and tag manipulated instances");
    add_common(curate, common);
    curate->add_option("--dataset", dataset_dir, "Dataset directory")->required();
    curate->add_option("--out", out_dir, "Output directory for the curated manifest")->required();

    auto* train = app.add_subcommand("train", "Train one stage on a dataset");
    add_common(train, common);
    train->add_option("--stage", stage, "stage1 or stage2")->capture_default_str();
    std::string variant_override;
    train->add_option("--variant", variant_override, "Stage-1 variant override: tt_gen or pt_gen");
    train->add_option("--dataset", dataset_dir, "Dataset directory")->required();
    train->add_option("--manifest", manifest_path, "Curated manifest (kept clips only)");
    train->add_option("--out", out_dir, "Output directory for checkpoint and logs")->required();

    auto* generate = app.add_subcommand("generate", "Run two-stage conditional generation");
    add_common(generate, common);
    generate->add_option("--stage1", stage1_ckpt, "Trajectory-stage checkpoint")->required();
    generate->add_option("--stage2", stage2_ckpt, "Video-stage checkpoint")->required();
    generate->add_option("--clip", clip_dir, "Input clip directory (first frame + segmentation)")
        ->required();
    generate->add_option("--verb", verb, "Action verb condition");
    generate->add_option("--position", position_png, "Target-position mask image");
    generate->add_option("--steps", steps, "Sampler steps (0 = config value)");
    generate->add_option("--out", out_dir, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Score generated clips against references");
    add_common(eval, common);
    eval->add_option("--generated", generated_dir, "Directory of generated clip folders")->required();
    eval->add_option("--reference", reference_dir, "Directory of reference clip folders")->required();
    eval->add_option("--out", out_dir, "Output directory for the report")->required();

    auto* dump = app.add_subcommand("config-dump", "Print the resolved config as JSON");
    add_common(dump, common);

    CLI11_PARSE(app, argc, argv);

    return cli::run_guarded([&] {
        config::ExperimentConfig cfg = load(common);
        if (synth->parsed()) {
            if (common.seed != 0) cfg.seeds.data = common.seed;
            cli::cmd_synth(cfg, count, out_dir);
            std::cout << "wrote " << count << " clips to " << out_dir << "\n";
        } else if (curate->parsed()) {
            const auto entries = cli::cmd_curate(cfg, dataset_dir, out_dir);
            int kept = 0;
            for (const auto& e : entries) kept += e.kept ? 1 : 0;
            std::cout << "kept " << kept << " of " << entries.size() << " clips\n";
        } else if (train->parsed()) {
            if (common.seed != 0) cfg.seeds.train = common.seed;
            if (!variant_override.empty()) cfg.stage1.variant = variant_override;
            const auto out = cli::cmd_train(cfg, stage, dataset_dir, manifest_path, out_dir);
            std::cout << "trained " << out.variant << " for " << out.stats.steps
                      << " steps: loss " << out.stats.initial_loss << " -> "
                      << out.stats.final_loss << "; checkpoint " << out.checkpoint.string()
                      << "\n";
        } else if (generate->parsed()) {
            gen.stage1_checkpoint = stage1_ckpt;
            gen.stage2_checkpoint = stage2_ckpt;
            gen.clip_dir = clip_dir;
            gen.verb = verb;
            gen.position_png = position_png;
            gen.steps = steps;
            gen.seed = common.seed;
            const auto res = cli::cmd_generate(cfg, gen, out_dir);
            std::cout << "generated " << res.frames.size() << " frames to " << out_dir << "\n";
        } else if (eval->parsed()) {
            const auto report = cli::cmd_eval(cfg, generated_dir, reference_dir, out_dir);
            std::cout << "evaluated " << report.rows.size() << " clips: mean PSNR "
                      << report.mean_psnr << " dB, mean SSIM " << report.mean_ssim
                      << ", distribution distance " << report.frechet << "\n";
        } else if (dump->parsed()) {
            std::cout << config::to_json(cfg).dump(2) << "\n";
        }
    });
}
