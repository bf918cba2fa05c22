#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivgen/codec.hpp"
#include "ivgen/graph.hpp"
#include "ivgen/nn.hpp"
#include "ivgen/rng.hpp"
#include "ivgen/tensor.hpp"

namespace ivgen::codec {

// Blockwise (f x f) rearrangements between (H,W,3) and (H/f, W/f, 3f^2).
// Channel layout within a block matches the analytic codec: (dr*f + dc)*3 + c.
inline Tensor<float> space_to_depth(const Tensor<float>& frame, int f) {
    if (frame.ndim() != 3 || frame.dim(2) != 3)
        throw std::invalid_argument("space_to_depth: expected (H,W,3), got " + shape_str(frame));
    if (f < 1 || frame.dim(0) % f != 0 || frame.dim(1) % f != 0)
        throw std::invalid_argument("space_to_depth: dimensions not divisible by factor " +
                                    std::to_string(f));
    const int h = frame.dim(0) / f, w = frame.dim(1) / f;
    Tensor<float> out({h, w, 3 * f * f});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int dr = 0; dr < f; ++dr)
                for (int dc = 0; dc < f; ++dc)
                    for (int c = 0; c < 3; ++c)
                        out.at(i, j, (dr * f + dc) * 3 + c) = frame.at(i * f + dr, j * f + dc, c);
    return out;
}

inline Tensor<float> depth_to_space(const Tensor<float>& packed, int f) {
    if (packed.ndim() != 3 || packed.dim(2) != 3 * f * f)
        throw std::invalid_argument("depth_to_space: expected (h,w," + std::to_string(3 * f * f) +
                                    "), got " + shape_str(packed));
    const int h = packed.dim(0), w = packed.dim(1);
    Tensor<float> out({h * f, w * f, 3});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int dr = 0; dr < f; ++dr)
                for (int dc = 0; dc < f; ++dc)
                    for (int c = 0; c < 3; ++c)
                        out.at(i * f + dr, j * f + dc, c) = packed.at(i, j, (dr * f + dc) * 3 + c);
    return out;
}

// Trained convolutional autoencoder. Both halves run in the space-to-depth
// domain (two 3x3 convs with a SiLU between, stride 1), so the spatial
// downsample itself is the lossless block rearrangement and the learned part
// is purely the channel bottleneck 3f^2 -> c_z -> 3f^2. Reconstruction error
// in that domain equals pixel-space error because the rearrangement permutes.
class LearnedCodec final : public ICodec {
public:
    using ICodec::encode_frame;

    LearnedCodec(const CodecConfig& cfg, int hidden, std::uint64_t init_seed)
        : cfg_(cfg), hidden_(hidden), init_seed_(init_seed) {
        cfg_.validate();
        cfg_.mode = CodecConfig::Mode::learned;
        if (hidden_ < 1) throw std::invalid_argument("LearnedCodec: hidden width must be >= 1");
        const int d = 3 * cfg_.factor * cfg_.factor;
        Rng rng = make_rng(init_seed_);
        params_.add("enc.conv1.w", nn::init::conv_weight<float>(3, d, hidden_, rng));
        params_.add("enc.conv1.b", Tensor<float>({hidden_}));
        params_.add("enc.conv2.w", nn::init::conv_weight<float>(3, hidden_, cfg_.c_z, rng));
        params_.add("enc.conv2.b", Tensor<float>({cfg_.c_z}));
        params_.add("dec.conv1.w", nn::init::conv_weight<float>(3, cfg_.c_z, hidden_, rng));
        params_.add("dec.conv1.b", Tensor<float>({hidden_}));
        params_.add("dec.conv2.w", nn::init::conv_weight<float>(3, hidden_, d, rng));
        params_.add("dec.conv2.b", Tensor<float>({d}));
    }

    const CodecConfig& config() const override { return cfg_; }
    int hidden() const { return hidden_; }
    std::uint64_t init_seed() const { return init_seed_; }
    nn::ParamStore<float>& params() { return params_; }
    const nn::ParamStore<float>& params() const { return params_; }

    // Graph builders shared by inference and training. x is (B,h,w,3f^2) for
    // the encoder and (B,h,w,c_z) for the decoder; the decoder output stays in
    // the space-to-depth domain.
    int encoder(autodiff::Graph<float>& g, const nn::BoundParams<float>& P, int x) const {
        int h = autodiff::conv2d(g, x, P("enc.conv1.w"), P("enc.conv1.b"), 1, 1);
        h = autodiff::silu(g, h);
        return autodiff::conv2d(g, h, P("enc.conv2.w"), P("enc.conv2.b"), 1, 1);
    }
    int decoder(autodiff::Graph<float>& g, const nn::BoundParams<float>& P, int z) const {
        int h = autodiff::conv2d(g, z, P("dec.conv1.w"), P("dec.conv1.b"), 1, 1);
        h = autodiff::silu(g, h);
        return autodiff::conv2d(g, h, P("dec.conv2.w"), P("dec.conv2.b"), 1, 1);
    }

    Tensor<float> encode_frame(const Tensor<float>& frame) const override {
        const Tensor<float> sd = space_to_depth(frame, cfg_.factor);
        autodiff::Graph<float> g;
        auto P = nn::bind_params(params_, g, false);
        const int x = g.add_leaf(sd.reshaped({1, sd.dim(0), sd.dim(1), sd.dim(2)}));
        const Tensor<float>& out = g.val(encoder(g, P, x));
        return out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
    }

    Tensor<float> decode_frame(const Tensor<float>& latent) const override {
        if (latent.ndim() != 3 || latent.dim(2) != cfg_.c_z)
            throw std::invalid_argument("decode: expected (h,w," + std::to_string(cfg_.c_z) +
                                        "), got " + shape_str(latent));
        autodiff::Graph<float> g;
        auto P = nn::bind_params(params_, g, false);
        const int z = g.add_leaf(latent.reshaped({1, latent.dim(0), latent.dim(1), latent.dim(2)}));
        const Tensor<float>& out = g.val(decoder(g, P, z));
        Tensor<float> frame =
            depth_to_space(out.reshaped({out.dim(1), out.dim(2), out.dim(3)}), cfg_.factor);
        for (auto& v : frame.data) v = std::clamp(v, 0.0f, 1.0f);
        return frame;
    }

    void save(const std::filesystem::path& path,
              const std::vector<double>* loss_curve = nullptr) const {
        checkpoint::Container ck;
        ck.meta = {{"kind", "codec"},
                   {"mode", "learned"},
                   {"factor", cfg_.factor},
                   {"c_z", cfg_.c_z},
                   {"hidden", hidden_},
                   {"init_seed", init_seed_},
                   {"normalization", "none"}};
        for (std::size_t i = 0; i < params_.size(); ++i)
            ck.entries.push_back({params_[i].name, params_[i].value});
        if (loss_curve) {
            Tensor<float> curve({static_cast<int>(loss_curve->size())});
            for (std::size_t i = 0; i < loss_curve->size(); ++i)
                curve.data[i] = static_cast<float>((*loss_curve)[i]);
            ck.entries.push_back({"train.loss", std::move(curve)});
            ck.meta["train_steps"] = loss_curve->size();
        }
        checkpoint::save(ck, path);
    }

private:
    CodecConfig cfg_;
    int hidden_;
    std::uint64_t init_seed_;
    nn::ParamStore<float> params_;
};

inline std::unique_ptr<LearnedCodec> load_learned_codec(const std::filesystem::path& path) {
    const checkpoint::Container ck = checkpoint::load(path);
    if (ck.meta.at("mode").get<std::string>() != "learned")
        throw std::runtime_error("load_learned_codec: not a learned codec checkpoint");
    CodecConfig cfg;
    cfg.factor = ck.meta.at("factor").get<int>();
    cfg.c_z = ck.meta.at("c_z").get<int>();
    cfg.mode = CodecConfig::Mode::learned;
    auto codec = std::make_unique<LearnedCodec>(cfg, ck.meta.at("hidden").get<int>(),
                                                ck.meta.at("init_seed").get<std::uint64_t>());
    for (std::size_t i = 0; i < codec->params().size(); ++i) {
        auto& p = codec->params()[i];
        const Tensor<float>& stored = ck.get(p.name);
        if (stored.shape != p.value.shape)
            throw std::runtime_error("load_learned_codec: shape mismatch for " + p.name);
        p.value = stored;
    }
    return codec;
}

// Minimizes mean squared reconstruction error over the frame set and returns
// the per-step loss curve (space-to-depth domain MSE == pixel MSE). The
// caller's generator drives batch sampling; training aborts on non-finite
// loss.
inline std::vector<double> train_learned_codec(LearnedCodec& codec,
                                               const std::vector<mask::Image8>& frames,
                                               const nn::AdamWConfig<float>& opt_cfg,
                                               int num_steps, int batch_size, Rng& rng) {
    if (frames.empty()) throw std::invalid_argument("train_learned_codec: empty dataset");
    if (num_steps < 0 || batch_size < 1)
        throw std::invalid_argument("train_learned_codec: bad step or batch count");
    const int f = codec.config().factor;
    std::vector<Tensor<float>> packed;
    packed.reserve(frames.size());
    for (const auto& img : frames) packed.push_back(space_to_depth(image_to_tensor(img), f));
    for (const auto& p : packed)
        if (p.shape != packed[0].shape)
            throw std::invalid_argument("train_learned_codec: frames disagree in shape");
    const int h = packed[0].dim(0), w = packed[0].dim(1), d = packed[0].dim(2);

    nn::AdamW<float> opt(codec.params(), opt_cfg);
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(num_steps));
    for (int step = 0; step < num_steps; ++step) {
        Tensor<float> batch({batch_size, h, w, d});
        for (int b = 0; b < batch_size; ++b) {
            const int idx = uniform_int(rng, 0, static_cast<int>(packed.size()) - 1);
            std::copy_n(packed[static_cast<std::size_t>(idx)].data.begin(), h * w * d,
                        batch.data.begin() + static_cast<std::ptrdiff_t>(b) * h * w * d);
        }
        autodiff::Graph<float> g;
        auto P = nn::bind_params(codec.params(), g, true);
        const int x = g.add_leaf(batch);
        const int recon = codec.decoder(g, P, codec.encoder(g, P, x));
        const int loss = autodiff::mean_sq(g, autodiff::sub(g, recon, x));
        const double value = static_cast<double>(g.val(loss).data[0]);
        if (!std::isfinite(value))
            throw std::runtime_error("train_learned_codec: non-finite loss at step " +
                                     std::to_string(step));
        g.backward(loss);
        opt.step(codec.params(), codec.params().collect_grads(g, P.ids));
        losses.push_back(value);
    }
    return losses;
}

}  // namespace ivgen::codec
