#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ivgen/denoiser.hpp"
#include "ivgen/diffusion.hpp"
#include "ivgen/graph.hpp"
#include "ivgen/nn.hpp"
#include "ivgen/rng.hpp"
#include "ivgen/schedule.hpp"
#include "ivgen/tensor.hpp"

namespace ivgen::train {

// One clip's worth of training data, already in latent space. cond with no
// elements means an unconditioned model; weight with no elements means uniform
// loss weights (the all-ones map runs the identical code path, so enabling
// weighting with lambda = 1 changes nothing, bit for bit).
struct TrainSample {
    Tensor<float> x0;              // (N, h, w, c_z) clean latent video
    Tensor<float> cond;            // (N, h, w, extra) channel-concatenated at the input
    std::vector<int> context_rows;
    Tensor<float> weight;          // (N, h, w) per-site loss weights
};

struct TrainConfig {
    int num_steps = 100;
    int batch_size = 8;
    int threads = 1;               // gradient workers; any value gives identical results
    std::filesystem::path log_csv; // empty disables logging
    int smooth_window = 10;        // trailing window for the reported loss levels
};

struct TrainStats {
    int steps = 0;
    double initial_loss = 0.0;     // mean over the first window of steps
    double final_loss = 0.0;       // mean over the last window of steps
    std::vector<double> losses;    // per-step batch means
};

namespace detail {

inline void validate_sample(const TrainSample& s, const diffusion::DenoiserConfig& cfg, std::size_t idx) {
    const std::string where = "train sample " + std::to_string(idx);
    if (s.x0.ndim() != 4 || s.x0.dim(0) != cfg.num_frames || s.x0.dim(3) != cfg.out_channels)
        throw std::invalid_argument(where + ": x0 shape " + shape_str(s.x0) +
                                    " does not match the model");
    const int cond_ch = s.cond.numel() == 0 ? 0 : s.cond.dim(3);
    if (s.x0.dim(3) + cond_ch != cfg.in_channels)
        throw std::invalid_argument(where + ": condition channels " + std::to_string(cond_ch) +
                                    " do not complete in_channels " +
                                    std::to_string(cfg.in_channels));
    if (s.cond.numel() != 0 &&
        (s.cond.ndim() != 4 || s.cond.dim(0) != s.x0.dim(0) || s.cond.dim(1) != s.x0.dim(1) ||
         s.cond.dim(2) != s.x0.dim(2)))
        throw std::invalid_argument(where + ": condition block " + shape_str(s.cond) +
                                    " does not align with x0 " + shape_str(s.x0));
    if (!s.context_rows.empty() && cfg.context_vocab == 0)
        throw std::invalid_argument(where + ": context rows on a model without a context path");
    for (int r : s.context_rows)
        if (r < 0 || r >= cfg.context_vocab)
            throw std::invalid_argument(where + ": context row out of range");
    if (s.weight.numel() != 0 &&
        (s.weight.ndim() != 3 || s.weight.dim(0) != s.x0.dim(0) ||
         s.weight.dim(1) != s.x0.dim(1) || s.weight.dim(2) != s.x0.dim(2)))
        throw std::invalid_argument(where + ": weight map " + shape_str(s.weight) +
                                    " does not align with x0");
}

struct BatchItem {
    const TrainSample* sample = nullptr;
    int t = 0;
    Tensor<float> eps;
    double loss = 0.0;
    std::vector<Tensor<float>> grads;
};

}  // namespace detail

// Noise-prediction training: per step, draws (sample, timestep, noise) for
// each batch slot from the caller's generator, averages per-sample gradients,
// and takes one optimizer step. The generator is the only source of
// randomness, so (params, optimizer state, generator state) fully determine
// the continuation; gradients are reduced in slot order, making results
// independent of the worker thread count. Aborts on non-finite loss.
inline TrainStats train_steps(diffusion::Denoiser<float>& model, nn::AdamW<float>& opt,
                              const std::vector<TrainSample>& data,
                              const diffusion::NoiseSchedule<float>& sched, const TrainConfig& cfg,
                              Rng& rng) {
    if (data.empty()) throw std::invalid_argument("train_steps: empty dataset");
    if (cfg.num_steps < 0 || cfg.batch_size < 1)
        throw std::invalid_argument("train_steps: bad step or batch count");
    for (std::size_t i = 0; i < data.size(); ++i)
        detail::validate_sample(data[i], model.config(), i);

    std::ofstream log;
    if (!cfg.log_csv.empty()) {
        log.open(cfg.log_csv);
        if (!log)
            throw std::runtime_error("train_steps: cannot open log " + cfg.log_csv.string());
        log << "step,loss,lr,elapsed_s\n";
    }
    const auto t0 = std::chrono::steady_clock::now();

    TrainStats stats;
    const int threads = std::max(1, cfg.threads);
    for (int step = 0; step < cfg.num_steps; ++step) {
        // all draws happen here, on one thread, in slot order
        std::vector<detail::BatchItem> batch(static_cast<std::size_t>(cfg.batch_size));
        for (auto& item : batch) {
            const int idx = uniform_int(rng, 0, static_cast<int>(data.size()) - 1);
            item.sample = &data[static_cast<std::size_t>(idx)];
            item.t = uniform_int(rng, 0, sched.num_steps() - 1);
            item.eps = Tensor<float>::randn(item.sample->x0.shape, rng);
        }

        auto work = [&](int first, int stride) {
            for (int b = first; b < cfg.batch_size; b += stride) {
                auto& item = batch[static_cast<std::size_t>(b)];
                const TrainSample& s = *item.sample;
                autodiff::Graph<float> g;
                auto P = nn::bind_params(model.params(), g, true);
                const Tensor<float> x_t = diffusion::forward_diffuse(s.x0, item.eps, sched, item.t);
                const int x = g.add_leaf(concat_channels(x_t, s.cond));
                const int pred =
                    model.forward(g, P, x, static_cast<float>(item.t), s.context_rows);
                const Tensor<float> w = s.weight.numel() != 0
                                            ? s.weight
                                            : Tensor<float>(s.x0.shape, 1.0f);
                const int loss = diffusion::weighted_loss(g, pred, item.eps, w);
                item.loss = static_cast<double>(g.val(loss).data[0]);
                g.backward(loss);
                item.grads = model.params().collect_grads(g, P.ids);
            }
        };
        if (threads == 1 || cfg.batch_size == 1) {
            work(0, 1);
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
            for (auto& th : pool) th.join();
        }

        // fixed-order reduction, then the optimizer step
        std::vector<Tensor<float>> grads = std::move(batch[0].grads);
        for (int b = 1; b < cfg.batch_size; ++b)
            for (std::size_t p = 0; p < grads.size(); ++p) {
                const auto& src = batch[static_cast<std::size_t>(b)].grads[p];
                for (std::size_t i = 0; i < grads[p].data.size(); ++i)
                    grads[p].data[i] += src.data[i];
            }
        const float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);
        double batch_loss = 0.0;
        for (auto& gt : grads)
            for (auto& v : gt.data) v *= inv_batch;
        for (const auto& item : batch) batch_loss += item.loss;
        batch_loss /= static_cast<double>(cfg.batch_size);

        if (!std::isfinite(batch_loss))
            throw std::runtime_error("train_steps: non-finite loss at step " +
                                     std::to_string(step));
        opt.step(model.params(), grads);

        stats.losses.push_back(batch_loss);
        if (log) {
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log << step << ',' << batch_loss << ',' << opt.config().lr << ',' << elapsed << '\n';
            log.flush();
        }
    }

    stats.steps = cfg.num_steps;
    if (!stats.losses.empty()) {
        const std::size_t w =
            std::min<std::size_t>(static_cast<std::size_t>(std::max(1, cfg.smooth_window)),
                                  stats.losses.size());
        double head = 0.0, tail = 0.0;
        for (std::size_t i = 0; i < w; ++i) {
            head += stats.losses[i];
            tail += stats.losses[stats.losses.size() - 1 - i];
        }
        stats.initial_loss = head / static_cast<double>(w);
        stats.final_loss = tail / static_cast<double>(w);
    }
    return stats;
}

}  // namespace ivgen::train
