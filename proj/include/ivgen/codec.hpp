#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivgen/checkpoint.hpp"
#include "ivgen/mask.hpp"
#include "ivgen/rng.hpp"
#include "ivgen/tensor.hpp"

namespace ivgen::codec {

struct CodecConfig {
    int factor = 4;  // spatial downsample; must be a power of two
    int c_z = 4;     // latent channels
    enum class Mode { analytic, learned } mode = Mode::analytic;
    std::uint64_t projection_seed = 0x1eafULL;

    void validate() const {
        if (factor < 1 || (factor & (factor - 1)) != 0)
            throw std::invalid_argument("CodecConfig: factor must be a power of two >= 1");
        if (c_z < 1) throw std::invalid_argument("CodecConfig: c_z must be >= 1");
        if (c_z > 3 * factor * factor)
            throw std::invalid_argument(
                "CodecConfig: c_z cannot exceed 3*f^2 (projection rows must be orthonormal)");
    }
};

inline Tensor<float> image_to_tensor(const mask::Image8& img) {
    Tensor<float> t({img.height, img.width, 3});
    for (std::size_t i = 0; i < t.data.size(); ++i)
        t.data[i] = static_cast<float>(img.rgb[i]) / 255.0f;
    return t;
}

inline mask::Image8 tensor_to_image(const Tensor<float>& t) {
    if (t.ndim() != 3 || t.dim(2) != 3)
        throw std::invalid_argument("tensor_to_image: expected (H,W,3), got " + shape_str(t));
    mask::Image8 img(t.dim(0), t.dim(1));
    for (std::size_t i = 0; i < t.data.size(); ++i)
        img.rgb[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(t.data[i], 0.0f, 1.0f) * 255.0f));
    return img;
}

class ICodec {
public:
    virtual ~ICodec() = default;
    virtual const CodecConfig& config() const = 0;
    // frame: (H,W,3) in [0,1] -> latent (H/f, W/f, c_z)
    virtual Tensor<float> encode_frame(const Tensor<float>& frame) const = 0;
    // latent -> frame (H,W,3), clamped to [0,1]
    virtual Tensor<float> decode_frame(const Tensor<float>& latent) const = 0;

    Tensor<float> encode_frame(const mask::Image8& img) const {
        return encode_frame(image_to_tensor(img));
    }

    // video: (F,H,W,3) -> (F,h,w,c_z) and back
    Tensor<float> encode_video(const Tensor<float>& video) const {
        if (video.ndim() != 4) throw std::invalid_argument("encode_video: expected 4-d tensor");
        const int F = video.dim(0);
        Tensor<float> out;
        for (int f = 0; f < F; ++f) {
            Tensor<float> frame({video.dim(1), video.dim(2), video.dim(3)});
            std::copy_n(video.data.begin() + static_cast<std::ptrdiff_t>(f * frame.numel()),
                        frame.numel(), frame.data.begin());
            Tensor<float> lat = encode_frame(frame);
            if (f == 0) out = Tensor<float>({F, lat.dim(0), lat.dim(1), lat.dim(2)});
            std::copy_n(lat.data.begin(), lat.numel(),
                        out.data.begin() + static_cast<std::ptrdiff_t>(f * lat.numel()));
        }
        return out;
    }

    Tensor<float> decode_video(const Tensor<float>& latents) const {
        if (latents.ndim() != 4) throw std::invalid_argument("decode_video: expected 4-d tensor");
        const int F = latents.dim(0);
        Tensor<float> out;
        for (int f = 0; f < F; ++f) {
            Tensor<float> lat({latents.dim(1), latents.dim(2), latents.dim(3)});
            std::copy_n(latents.data.begin() + static_cast<std::ptrdiff_t>(f * lat.numel()),
                        lat.numel(), lat.data.begin());
            Tensor<float> frame = decode_frame(lat);
            if (f == 0) out = Tensor<float>({F, frame.dim(0), frame.dim(1), frame.dim(2)});
            std::copy_n(frame.data.begin(), frame.numel(),
                        out.data.begin() + static_cast<std::ptrdiff_t>(f * frame.numel()));
        }
        return out;
    }
};

// Space-to-depth by factor f, then a fixed seeded orthonormal channel
// projection Q (c_z rows, 3f^2 columns, QQ^T = I). Pure linear map, no bias:
// black encodes to zero. decode applies Q^T and depth-to-space, the
// least-squares pseudo-inverse of encode. The first min(c_z, 3) rows are the
// per-channel block means, so decoded frames always carry blockwise average
// color; the remaining rows are a seeded orthonormal complement.
class AnalyticCodec final : public ICodec {
public:
    using ICodec::encode_frame;

    explicit AnalyticCodec(const CodecConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const int f2 = cfg_.factor * cfg_.factor;
        const int d = 3 * f2;
        Rng rng = make_rng(cfg_.projection_seed);
        q_ = Eigen::MatrixXd::Zero(cfg_.c_z, d);
        const int dc_rows = std::min(cfg_.c_z, 3);
        const double inv = 1.0 / std::sqrt(static_cast<double>(f2));
        for (int c = 0; c < dc_rows; ++c)
            for (int p = 0; p < f2; ++p) q_(c, p * 3 + c) = inv;
        for (int r = dc_rows; r < cfg_.c_z; ++r) {
            Eigen::VectorXd v(d);
            double norm = 0.0;
            do {
                for (int i = 0; i < d; ++i) v(i) = gaussian<double>(rng);
                for (int pass = 0; pass < 2; ++pass)
                    for (int k = 0; k < r; ++k) v -= q_.row(k).dot(v) * q_.row(k).transpose();
                norm = v.norm();
            } while (norm < 1e-8);
            q_.row(r) = v.transpose() / norm;
        }
    }

    const CodecConfig& config() const override { return cfg_; }
    const Eigen::MatrixXd& projection() const { return q_; }

    Tensor<float> encode_frame(const Tensor<float>& frame) const override {
        check_frame(frame);
        const int f = cfg_.factor;
        const int h = frame.dim(0) / f, w = frame.dim(1) / f;
        Tensor<float> out({h, w, cfg_.c_z});
        Eigen::VectorXd v(3 * f * f);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                gather_block(frame, i, j, v);
                const Eigen::VectorXd y = q_ * v;
                for (int c = 0; c < cfg_.c_z; ++c) out.at(i, j, c) = static_cast<float>(y(c));
            }
        }
        return out;
    }

    Tensor<float> decode_frame(const Tensor<float>& latent) const override {
        Tensor<float> out = decode_frame_raw(latent);
        for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
        return out;
    }

    // Unclamped least-squares reconstruction, used by residual analysis.
    Tensor<float> decode_frame_raw(const Tensor<float>& latent) const {
        check_latent(latent);
        const int f = cfg_.factor;
        const int h = latent.dim(0), w = latent.dim(1);
        Tensor<float> out({h * f, w * f, 3});
        Eigen::VectorXd y(cfg_.c_z);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                for (int c = 0; c < cfg_.c_z; ++c) y(c) = latent.at(i, j, c);
                const Eigen::VectorXd v = q_.transpose() * y;
                scatter_block(out, i, j, v);
            }
        }
        return out;
    }

    void save(const std::filesystem::path& path) const {
        checkpoint::Container ck;
        ck.meta = {{"kind", "codec"},
                   {"mode", "analytic"},
                   {"factor", cfg_.factor},
                   {"c_z", cfg_.c_z},
                   {"projection_seed", cfg_.projection_seed},
                   {"normalization", "none"}};
        Tensor<float> q({static_cast<int>(q_.rows()), static_cast<int>(q_.cols())});
        for (int i = 0; i < q_.rows(); ++i)
            for (int j = 0; j < q_.cols(); ++j) q.at(i, j) = static_cast<float>(q_(i, j));
        ck.entries.push_back({"projection", std::move(q)});
        checkpoint::save(ck, path);
    }

private:
    void check_frame(const Tensor<float>& frame) const {
        if (frame.ndim() != 3 || frame.dim(2) != 3)
            throw std::invalid_argument("encode: expected (H,W,3), got " + shape_str(frame));
        if (frame.dim(0) % cfg_.factor != 0 || frame.dim(1) % cfg_.factor != 0)
            throw std::invalid_argument("encode: frame dimensions not divisible by factor " +
                                        std::to_string(cfg_.factor));
    }
    void check_latent(const Tensor<float>& lat) const {
        if (lat.ndim() != 3 || lat.dim(2) != cfg_.c_z)
            throw std::invalid_argument("decode: expected (h,w," + std::to_string(cfg_.c_z) +
                                        "), got " + shape_str(lat));
    }

    // Block vector layout: index = (dr * f + dc) * 3 + channel.
    void gather_block(const Tensor<float>& frame, int i, int j, Eigen::VectorXd& v) const {
        const int f = cfg_.factor;
        for (int dr = 0; dr < f; ++dr)
            for (int dc = 0; dc < f; ++dc)
                for (int c = 0; c < 3; ++c)
                    v((dr * f + dc) * 3 + c) = frame.at(i * f + dr, j * f + dc, c);
    }
    void scatter_block(Tensor<float>& frame, int i, int j, const Eigen::VectorXd& v) const {
        const int f = cfg_.factor;
        for (int dr = 0; dr < f; ++dr)
            for (int dc = 0; dc < f; ++dc)
                for (int c = 0; c < 3; ++c)
                    frame.at(i * f + dr, j * f + dc, c) =
                        static_cast<float>(v((dr * f + dc) * 3 + c));
    }

    CodecConfig cfg_;
    Eigen::MatrixXd q_;
};

inline std::unique_ptr<AnalyticCodec> load_analytic_codec(const std::filesystem::path& path) {
    const checkpoint::Container ck = checkpoint::load(path);
    if (ck.meta.at("mode").get<std::string>() != "analytic")
        throw std::runtime_error("load_analytic_codec: not an analytic codec checkpoint");
    CodecConfig cfg;
    cfg.factor = ck.meta.at("factor").get<int>();
    cfg.c_z = ck.meta.at("c_z").get<int>();
    cfg.projection_seed = ck.meta.at("projection_seed").get<std::uint64_t>();
    auto codec = std::make_unique<AnalyticCodec>(cfg);
    // the projection is re-derived from the seed; verify against the stored copy
    const Tensor<float>& stored = ck.get("projection");
    const Eigen::MatrixXd& q = codec->projection();
    for (int i = 0; i < q.rows(); ++i)
        for (int j = 0; j < q.cols(); ++j)
            if (std::fabs(static_cast<float>(q(i, j)) - stored.at(i, j)) > 1e-6f)
                throw std::runtime_error("load_analytic_codec: stored projection mismatch");
    return codec;
}

}  // namespace ivgen::codec
