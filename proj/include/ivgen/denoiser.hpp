#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ivgen/graph.hpp"
#include "ivgen/nn.hpp"
#include "ivgen/rng.hpp"
#include "ivgen/tensor.hpp"

namespace ivgen::diffusion {

struct DenoiserConfig {
    int in_channels = 4;
    int out_channels = 4;
    int num_frames = 8;
    int base_width = 32;
    std::vector<int> width_mult = {1, 2, 3};
    int blocks_per_level = 2;
    int temb_dim = 128;
    int groups = 8;
    int heads = 4;
    // spatial self-attention runs at levels >= this and in the middle;
    // temporal attention runs everywhere
    int spatial_attn_min_level = 1;
    // cross-attention context: rows in the token embedding table and their
    // width; vocab 0 disables the context path
    int context_vocab = 0;
    int context_dim = 0;

    int levels() const { return static_cast<int>(width_mult.size()); }
    int width(int level) const { return base_width * width_mult[static_cast<std::size_t>(level)]; }

    void validate() const {
        if (in_channels < 1 || out_channels < 1)
            throw std::invalid_argument("denoiser: channel counts must be positive");
        if (num_frames < 1) throw std::invalid_argument("denoiser: num_frames must be positive");
        if (base_width < 1 || width_mult.empty())
            throw std::invalid_argument("denoiser: empty width schedule");
        if (blocks_per_level < 1)
            throw std::invalid_argument("denoiser: blocks_per_level must be positive");
        if (temb_dim < 2 || temb_dim % 2 != 0)
            throw std::invalid_argument("denoiser: temb_dim must be even and >= 2");
        for (int i = 0; i < levels(); ++i) {
            const int w = width(i);
            if (w % groups != 0 || (2 * w) % groups != 0)
                throw std::invalid_argument("denoiser: width " + std::to_string(w) +
                                            " not divisible by groups");
            if (w % heads != 0)
                throw std::invalid_argument("denoiser: width " + std::to_string(w) +
                                            " not divisible by heads");
        }
        if (context_vocab > 0 && context_dim < 1)
            throw std::invalid_argument("denoiser: context_dim required with context_vocab");
        if (context_vocab < 0 || context_dim < 0)
            throw std::invalid_argument("denoiser: negative context sizes");
    }
};

// Video UNet over (F, H, W, C) feature maps: ResBlocks with timestep
// injection, strided-conv down / nearest-up, per-frame spatial attention,
// per-site temporal attention with learned frame position embeddings, and an
// optional cross-attention over context tokens in the middle block.
template <typename T>
class Denoiser {
public:
    Denoiser(DenoiserConfig cfg, unsigned long long seed) : cfg_(cfg) {
        cfg_.validate();
        auto rng = make_rng(derive_seed(seed, 0xd10de1ULL));
        build(rng);
    }

    const DenoiserConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return store_; }
    const nn::ParamStore<T>& params() const { return store_; }
    std::size_t param_count() const { return store_.scalar_count(); }

    void freeze_temporal_attention(bool frozen) {
        store_.set_frozen_if(
            [](const std::string& name) { return name.find(".tattn.") != std::string::npos; },
            frozen);
    }

    // Noise prediction for one clip. x is (F, H, W, in_channels); context_rows
    // index the context embedding table (empty when the model has none).
    int forward(autodiff::Graph<T>& g, const nn::BoundParams<T>& P, int x, T timestep,
                const std::vector<int>& context_rows = {}) const {
        namespace ad = autodiff;
        const Tensor<T>& vx = g.val(x);
        if (vx.ndim() != 4 || vx.dim(3) != cfg_.in_channels || vx.dim(0) != cfg_.num_frames)
            throw std::invalid_argument("denoiser forward: input shape " + shape_str(vx) +
                                        " does not match config");
        const int down_factor = 1 << (cfg_.levels() - 1);
        if (vx.dim(1) % down_factor != 0 || vx.dim(2) % down_factor != 0)
            throw std::invalid_argument("denoiser forward: spatial dims must be divisible by " +
                                        std::to_string(down_factor));
        if (cfg_.context_vocab == 0 && !context_rows.empty())
            throw std::invalid_argument("denoiser forward: model has no context path");

        int e = g.add_leaf(nn::timestep_embedding(timestep, cfg_.temb_dim));
        e = ad::linear(g, e, P("temb.w0"), P("temb.b0"));
        e = ad::silu(g, e);
        e = ad::linear(g, e, P("temb.w1"), P("temb.b1"));

        int h = ad::conv2d(g, x, P("stem.w"), P("stem.b"), 1, 1);
        std::vector<int> skips;
        for (int i = 0; i < cfg_.levels(); ++i) {
            const std::string lvl = "down" + std::to_string(i);
            for (int b = 0; b < cfg_.blocks_per_level; ++b)
                h = res_block(g, P, lvl + ".res" + std::to_string(b), h, e);
            if (i >= cfg_.spatial_attn_min_level) h = self_attn(g, P, lvl + ".sattn", h, false);
            h = self_attn(g, P, lvl + ".tattn", h, true);
            skips.push_back(h);
            if (i + 1 < cfg_.levels()) h = ad::conv2d(g, h, P(lvl + ".down.w"), P(lvl + ".down.b"), 2, 1);
        }

        h = res_block(g, P, "mid.res0", h, e);
        h = self_attn(g, P, "mid.sattn", h, false);
        h = self_attn(g, P, "mid.tattn", h, true);
        if (cfg_.context_vocab > 0 && !context_rows.empty())
            h = cross_attn(g, P, h, context_rows);
        h = res_block(g, P, "mid.res1", h, e);

        for (int i = cfg_.levels() - 1; i >= 0; --i) {
            const std::string lvl = "up" + std::to_string(i);
            h = ad::concat_ch(g, h, skips[static_cast<std::size_t>(i)]);
            for (int b = 0; b < cfg_.blocks_per_level; ++b)
                h = res_block(g, P, lvl + ".res" + std::to_string(b), h, e);
            if (i >= cfg_.spatial_attn_min_level) h = self_attn(g, P, lvl + ".sattn", h, false);
            h = self_attn(g, P, lvl + ".tattn", h, true);
            if (i > 0) {
                h = ad::upsample2(g, h);
                h = ad::conv2d(g, h, P(lvl + ".up.w"), P(lvl + ".up.b"), 1, 1);
            }
        }

        h = ad::group_norm(g, h, P("head.gn.g"), P("head.gn.b"), cfg_.groups);
        h = ad::silu(g, h);
        return ad::conv2d(g, h, P("head.conv.w"), P("head.conv.b"), 1, 1);
    }

private:
    void add_conv(const std::string& name, int k, int cin, int cout, Rng& rng,
                  bool zero = false) {
        store_.add(name + ".w", zero ? Tensor<T>({k, k, cin, cout})
                                     : nn::init::conv_weight<T>(k, cin, cout, rng));
        store_.add(name + ".b", Tensor<T>({cout}));
    }
    void add_linear(const std::string& name, int cin, int cout, Rng& rng, bool zero = false) {
        store_.add(name + ".w",
                   zero ? Tensor<T>({cin, cout}) : nn::init::linear_weight<T>(cin, cout, rng));
        store_.add(name + ".b", Tensor<T>({cout}));
    }
    void add_gn(const std::string& name, int c) {
        store_.add(name + ".g", Tensor<T>({c}, T(1)));
        store_.add(name + ".b", Tensor<T>({c}));
    }
    void add_res_block(const std::string& prefix, int cin, int cout, Rng& rng) {
        add_gn(prefix + ".gn1", cin);
        add_conv(prefix + ".conv1", 3, cin, cout, rng);
        add_linear(prefix + ".emb", cfg_.temb_dim, cout, rng);
        add_gn(prefix + ".gn2", cout);
        // second conv starts at zero so every block begins as identity
        add_conv(prefix + ".conv2", 3, cout, cout, rng, true);
        if (cin != cout) store_.add(prefix + ".skip.w", nn::init::conv_weight<T>(1, cin, cout, rng));
    }
    void add_attn(const std::string& prefix, int c, int kv_dim, Rng& rng, bool temporal) {
        add_gn(prefix + ".gn", c);
        add_linear(prefix + ".q", c, c, rng);
        add_linear(prefix + ".k", kv_dim, c, rng);
        add_linear(prefix + ".v", kv_dim, c, rng);
        add_linear(prefix + ".o", c, c, rng, true);
        if (temporal)
            store_.add(prefix + ".pos",
                       Tensor<T>::randn({cfg_.num_frames, c}, rng, T(0.02)));
    }

    void build(Rng& rng) {
        const int L = cfg_.levels();
        add_conv("stem", 3, cfg_.in_channels, cfg_.width(0), rng);
        store_.add("temb.w0", nn::init::linear_weight<T>(cfg_.temb_dim, cfg_.temb_dim, rng));
        store_.add("temb.b0", Tensor<T>({cfg_.temb_dim}));
        store_.add("temb.w1", nn::init::linear_weight<T>(cfg_.temb_dim, cfg_.temb_dim, rng));
        store_.add("temb.b1", Tensor<T>({cfg_.temb_dim}));

        for (int i = 0; i < L; ++i) {
            const std::string lvl = "down" + std::to_string(i);
            const int cin = i == 0 ? cfg_.width(0) : cfg_.width(i - 1);
            for (int b = 0; b < cfg_.blocks_per_level; ++b)
                add_res_block(lvl + ".res" + std::to_string(b), b == 0 ? cin : cfg_.width(i),
                              cfg_.width(i), rng);
            if (i >= cfg_.spatial_attn_min_level)
                add_attn(lvl + ".sattn", cfg_.width(i), cfg_.width(i), rng, false);
            add_attn(lvl + ".tattn", cfg_.width(i), cfg_.width(i), rng, true);
            if (i + 1 < L) add_conv(lvl + ".down", 3, cfg_.width(i), cfg_.width(i), rng);
        }

        const int wm = cfg_.width(L - 1);
        add_res_block("mid.res0", wm, wm, rng);
        add_attn("mid.sattn", wm, wm, rng, false);
        add_attn("mid.tattn", wm, wm, rng, true);
        if (cfg_.context_vocab > 0) {
            store_.add("ctx.emb",
                       Tensor<T>::randn({cfg_.context_vocab, cfg_.context_dim}, rng,
                                        std::sqrt(T(1) / static_cast<T>(cfg_.context_dim))));
            add_attn("mid.xattn", wm, cfg_.context_dim, rng, false);
        }
        add_res_block("mid.res1", wm, wm, rng);

        for (int i = L - 1; i >= 0; --i) {
            const std::string lvl = "up" + std::to_string(i);
            for (int b = 0; b < cfg_.blocks_per_level; ++b)
                add_res_block(lvl + ".res" + std::to_string(b),
                              b == 0 ? 2 * cfg_.width(i) : cfg_.width(i), cfg_.width(i), rng);
            if (i >= cfg_.spatial_attn_min_level)
                add_attn(lvl + ".sattn", cfg_.width(i), cfg_.width(i), rng, false);
            add_attn(lvl + ".tattn", cfg_.width(i), cfg_.width(i), rng, true);
            if (i > 0) add_conv(lvl + ".up", 3, cfg_.width(i), cfg_.width(i - 1), rng);
        }

        add_gn("head.gn", cfg_.width(0));
        add_conv("head.conv", 3, cfg_.width(0), cfg_.out_channels, rng, true);
    }

    int res_block(autodiff::Graph<T>& g, const nn::BoundParams<T>& P, const std::string& p,
                  int x, int temb) const {
        namespace ad = autodiff;
        int h = ad::group_norm(g, x, P(p + ".gn1.g"), P(p + ".gn1.b"), cfg_.groups);
        h = ad::silu(g, h);
        h = ad::conv2d(g, h, P(p + ".conv1.w"), P(p + ".conv1.b"), 1, 1);
        const int e = ad::linear(g, temb, P(p + ".emb.w"), P(p + ".emb.b"));
        h = ad::add_channel_vec(g, h, e);
        h = ad::group_norm(g, h, P(p + ".gn2.g"), P(p + ".gn2.b"), cfg_.groups);
        h = ad::silu(g, h);
        h = ad::conv2d(g, h, P(p + ".conv2.w"), P(p + ".conv2.b"), 1, 1);
        const int cin = g.val(x).dim(3);
        const int cout = g.val(h).dim(3);
        const int skip = cin == cout ? x : ad::conv2d(g, x, P(p + ".skip.w"), -1, 1, 0);
        return ad::add(g, h, skip);
    }

    int self_attn(autodiff::Graph<T>& g, const nn::BoundParams<T>& P, const std::string& p,
                  int x, bool temporal) const {
        namespace ad = autodiff;
        const int F = g.val(x).dim(0), H = g.val(x).dim(1), W = g.val(x).dim(2),
                  C = g.val(x).dim(3);
        int tok = ad::group_norm(g, x, P(p + ".gn.g"), P(p + ".gn.b"), cfg_.groups);
        if (temporal) {
            tok = ad::to_temporal_tokens(g, tok);
            tok = ad::add_row_mat(g, tok, P(p + ".pos"));
        } else {
            tok = ad::reshape(g, tok, {F, H * W, C});
        }
        const int q = ad::linear(g, tok, P(p + ".q.w"), P(p + ".q.b"));
        const int k = ad::linear(g, tok, P(p + ".k.w"), P(p + ".k.b"));
        const int v = ad::linear(g, tok, P(p + ".v.w"), P(p + ".v.b"));
        int out = ad::attention(g, q, k, v, cfg_.heads);
        out = ad::linear(g, out, P(p + ".o.w"), P(p + ".o.b"));
        out = temporal ? ad::from_temporal_tokens(g, out, H, W)
                       : ad::reshape(g, out, {F, H, W, C});
        return ad::add(g, x, out);
    }

    int cross_attn(autodiff::Graph<T>& g, const nn::BoundParams<T>& P, int x,
                   const std::vector<int>& context_rows) const {
        namespace ad = autodiff;
        const int F = g.val(x).dim(0), H = g.val(x).dim(1), W = g.val(x).dim(2),
                  C = g.val(x).dim(3);
        const std::string p = "mid.xattn";
        int tok = ad::group_norm(g, x, P(p + ".gn.g"), P(p + ".gn.b"), cfg_.groups);
        tok = ad::reshape(g, tok, {1, F * H * W, C});
        int ctx = ad::gather_rows(g, P("ctx.emb"), context_rows);
        ctx = ad::reshape(g, ctx, {1, static_cast<int>(context_rows.size()), cfg_.context_dim});
        const int q = ad::linear(g, tok, P(p + ".q.w"), P(p + ".q.b"));
        const int k = ad::linear(g, ctx, P(p + ".k.w"), P(p + ".k.b"));
        const int v = ad::linear(g, ctx, P(p + ".v.w"), P(p + ".v.b"));
        int out = ad::attention(g, q, k, v, cfg_.heads);
        out = ad::linear(g, out, P(p + ".o.w"), P(p + ".o.b"));
        out = ad::reshape(g, out, {F, H, W, C});
        return ad::add(g, x, out);
    }

    DenoiserConfig cfg_;
    nn::ParamStore<T> store_;
};

}  // namespace ivgen::diffusion
