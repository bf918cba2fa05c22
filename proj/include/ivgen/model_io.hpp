#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ivgen/checkpoint.hpp"
#include "ivgen/denoiser.hpp"
#include "ivgen/nn.hpp"
#include "ivgen/rng.hpp"
#include "ivgen/schedule.hpp"

namespace ivgen::model {

// FNV-1a over the raw parameter bytes in store order; identifies a set of
// weights in artifact provenance.
inline std::uint64_t param_hash(const nn::ParamStore<float>& store) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ull;
        }
    };
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& t = store[i].value;
        static_assert(sizeof(float) == 4);
        mix(reinterpret_cast<const unsigned char*>(t.data.data()), t.data.size() * 4);
    }
    return h;
}

inline std::string rng_state_string(const Rng& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

inline Rng rng_from_state(const std::string& state) {
    Rng rng;
    std::istringstream in(state);
    in >> rng;
    if (!in) throw std::runtime_error("rng_from_state: unparseable generator state");
    return rng;
}

// Everything needed to continue or use a training run: model weights and
// config, the noise schedule, the optimizer hyperparameters and moments, and
// the data-order generator state.
struct DenoiserCheckpoint {
    diffusion::DenoiserConfig config;
    diffusion::ScheduleConfig schedule;
    std::string variant;  // tt_gen | pt_gen | stage2
    std::vector<std::string> frozen;
    std::optional<nn::AdamWConfig<float>> opt_config;
    long long opt_step_count = 0;
    std::vector<Tensor<float>> opt_m, opt_v;  // aligned with parameter order
    std::string rng_state;                    // empty when not saved
};

inline void save_denoiser(const diffusion::Denoiser<float>& model, const diffusion::NoiseSchedule<float>& sched,
                          const std::string& variant, const std::filesystem::path& path,
                          const nn::AdamW<float>* opt = nullptr, const Rng* rng = nullptr) {
    const diffusion::DenoiserConfig& cfg = model.config();
    checkpoint::Container ck;
    ck.meta = {{"kind", "denoiser"},
               {"variant", variant},
               {"config",
                {{"in_channels", cfg.in_channels},
                 {"out_channels", cfg.out_channels},
                 {"num_frames", cfg.num_frames},
                 {"base_width", cfg.base_width},
                 {"width_mult", cfg.width_mult},
                 {"blocks_per_level", cfg.blocks_per_level},
                 {"temb_dim", cfg.temb_dim},
                 {"groups", cfg.groups},
                 {"heads", cfg.heads},
                 {"spatial_attn_min_level", cfg.spatial_attn_min_level},
                 {"context_vocab", cfg.context_vocab},
                 {"context_dim", cfg.context_dim}}},
               {"schedule",
                {{"num_steps", sched.config().num_steps},
                 {"beta_start", sched.config().beta_start},
                 {"beta_end", sched.config().beta_end}}},
               {"param_hash", param_hash(model.params())}};

    nlohmann::ordered_json frozen = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < model.params().size(); ++i)
        if (model.params()[i].frozen) frozen.push_back(model.params()[i].name);
    ck.meta["frozen"] = std::move(frozen);

    if (opt) {
        ck.meta["optimizer"] = {{"kind", "adamw"},
                                {"lr", opt->config().lr},
                                {"beta1", opt->config().beta1},
                                {"beta2", opt->config().beta2},
                                {"eps", opt->config().eps},
                                {"weight_decay", opt->config().weight_decay},
                                {"step_count", opt->step_count()}};
    }
    if (rng) ck.meta["rng_state"] = rng_state_string(*rng);

    Tensor<float> beta({sched.config().num_steps});
    for (int t = 0; t < sched.config().num_steps; ++t) beta.data[static_cast<std::size_t>(t)] = sched.beta(t);
    ck.entries.push_back({"schedule.beta", std::move(beta)});

    for (std::size_t i = 0; i < model.params().size(); ++i)
        ck.entries.push_back({model.params()[i].name, model.params()[i].value});
    if (opt) {
        for (std::size_t i = 0; i < model.params().size(); ++i) {
            ck.entries.push_back({"adam.m." + model.params()[i].name, opt->first_moments()[i]});
            ck.entries.push_back({"adam.v." + model.params()[i].name, opt->second_moments()[i]});
        }
    }
    checkpoint::save(ck, path);
}

// Loads the checkpoint metadata and rebuilds the model in place; the returned
// record carries whatever optimizer / generator state the file held.
inline DenoiserCheckpoint read_denoiser_meta(const checkpoint::Container& ck) {
    if (ck.meta.at("kind").get<std::string>() != "denoiser")
        throw std::runtime_error("load_denoiser: not a denoiser checkpoint");
    DenoiserCheckpoint out;
    const auto& c = ck.meta.at("config");
    out.config.in_channels = c.at("in_channels").get<int>();
    out.config.out_channels = c.at("out_channels").get<int>();
    out.config.num_frames = c.at("num_frames").get<int>();
    out.config.base_width = c.at("base_width").get<int>();
    out.config.width_mult = c.at("width_mult").get<std::vector<int>>();
    out.config.blocks_per_level = c.at("blocks_per_level").get<int>();
    out.config.temb_dim = c.at("temb_dim").get<int>();
    out.config.groups = c.at("groups").get<int>();
    out.config.heads = c.at("heads").get<int>();
    out.config.spatial_attn_min_level = c.at("spatial_attn_min_level").get<int>();
    out.config.context_vocab = c.at("context_vocab").get<int>();
    out.config.context_dim = c.at("context_dim").get<int>();
    const auto& s = ck.meta.at("schedule");
    out.schedule.num_steps = s.at("num_steps").get<int>();
    out.schedule.beta_start = s.at("beta_start").get<double>();
    out.schedule.beta_end = s.at("beta_end").get<double>();
    out.variant = ck.meta.at("variant").get<std::string>();
    out.frozen = ck.meta.value("frozen", std::vector<std::string>{});
    if (ck.meta.contains("optimizer")) {
        const auto& o = ck.meta.at("optimizer");
        nn::AdamWConfig<float> oc;
        oc.lr = o.at("lr").get<float>();
        oc.beta1 = o.at("beta1").get<float>();
        oc.beta2 = o.at("beta2").get<float>();
        oc.eps = o.at("eps").get<float>();
        oc.weight_decay = o.at("weight_decay").get<float>();
        out.opt_config = oc;
        out.opt_step_count = o.at("step_count").get<long long>();
    }
    out.rng_state = ck.meta.value("rng_state", std::string{});
    return out;
}

struct LoadedDenoiser {
    diffusion::Denoiser<float> model;
    diffusion::NoiseSchedule<float> schedule;
    DenoiserCheckpoint meta;

    // Optimizer rebuilt from the stored moments; throws when the checkpoint
    // carried none.
    nn::AdamW<float> make_optimizer() const {
        if (!meta.opt_config)
            throw std::runtime_error("checkpoint holds no optimizer state");
        nn::AdamW<float> opt(model.params(), *meta.opt_config);
        opt.first_moments() = meta.opt_m;
        opt.second_moments() = meta.opt_v;
        opt.set_step_count(meta.opt_step_count);
        return opt;
    }

    Rng make_rng_resume() const {
        if (meta.rng_state.empty())
            throw std::runtime_error("checkpoint holds no generator state");
        return rng_from_state(meta.rng_state);
    }
};

inline LoadedDenoiser load_denoiser(const std::filesystem::path& path) {
    const checkpoint::Container ck = checkpoint::load(path);
    DenoiserCheckpoint meta = read_denoiser_meta(ck);

    diffusion::Denoiser<float> model(meta.config, 0);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        auto& p = model.params()[i];
        const Tensor<float>& stored = ck.get(p.name);
        if (stored.shape != p.value.shape)
            throw std::runtime_error("load_denoiser: shape mismatch for " + p.name);
        p.value = stored;
        p.frozen = false;
    }
    for (const auto& name : meta.frozen) model.params().at(name).frozen = true;

    diffusion::NoiseSchedule<float> sched(meta.schedule);
    const Tensor<float>& beta = ck.get("schedule.beta");
    if (beta.numel() != static_cast<std::size_t>(sched.num_steps()))
        throw std::runtime_error("load_denoiser: schedule table length mismatch");
    for (int t = 0; t < sched.num_steps(); ++t)
        if (beta.data[static_cast<std::size_t>(t)] != sched.beta(t))
            throw std::runtime_error("load_denoiser: stored schedule disagrees with config");

    if (meta.opt_config) {
        meta.opt_m.reserve(model.params().size());
        meta.opt_v.reserve(model.params().size());
        for (std::size_t i = 0; i < model.params().size(); ++i) {
            meta.opt_m.push_back(ck.get("adam.m." + model.params()[i].name));
            meta.opt_v.push_back(ck.get("adam.v." + model.params()[i].name));
        }
    }
    return LoadedDenoiser{std::move(model), std::move(sched), std::move(meta)};
}

}  // namespace ivgen::model
