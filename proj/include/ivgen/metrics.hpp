#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ivgen/codec.hpp"
#include "ivgen/conditioning.hpp"
#include "ivgen/graph.hpp"
#include "ivgen/nn.hpp"

namespace ivgen::metrics {

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

// Peak signal-to-noise ratio of a clip against a reference, in dB. Squared
// error is pooled over every pixel of every frame before the log, so a single
// number describes the whole clip. Identical clips have zero error; they (and
// anything above it) report as the 99 dB table cap.
inline double psnr(const std::vector<mask::Image8>& a, const std::vector<mask::Image8>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("psnr: clip lengths differ or empty");
    double se = 0.0;
    std::size_t n = 0;
    for (std::size_t f = 0; f < a.size(); ++f) {
        if (a[f].height != b[f].height || a[f].width != b[f].width)
            throw std::invalid_argument("psnr: frame dimensions differ");
        for (std::size_t i = 0; i < a[f].rgb.size(); ++i) {
            const double d = static_cast<double>(a[f].rgb[i]) - static_cast<double>(b[f].rgb[i]);
            se += d * d;
        }
        n += a[f].rgb.size();
    }
    if (se == 0.0) return 99.0;
    const double mse = se / static_cast<double>(n);
    return std::min(99.0, 10.0 * std::log10(255.0 * 255.0 / mse));
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

namespace detail {

// ITU-R BT.601 luma weights; SSIM runs on this grayscale plane in [0, 255].
inline std::vector<double> luma_plane(const mask::Image8& img) {
    std::vector<double> y(static_cast<std::size_t>(img.height) * img.width);
    for (std::size_t p = 0; p < y.size(); ++p)
        y[p] = 0.299 * img.rgb[3 * p] + 0.587 * img.rgb[3 * p + 1] + 0.114 * img.rgb[3 * p + 2];
    return y;
}

}  // namespace detail

// Mean structural similarity over non-overlapping square windows of every
// frame (partial edge windows are dropped). Statistics use the population
// divisor within each window; constants are the standard C1 = (0.01 * 255)^2,
// C2 = (0.03 * 255)^2. Identical clips score exactly 1.0.
inline double ssim(const std::vector<mask::Image8>& a, const std::vector<mask::Image8>& b,
                   int window = 8) {
    if (window < 1) throw std::invalid_argument("ssim: window must be positive");
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("ssim: clip lengths differ or empty");
    const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
    const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
    double total = 0.0;
    std::size_t tiles = 0;
    for (std::size_t f = 0; f < a.size(); ++f) {
        const int H = a[f].height, W = a[f].width;
        if (H != b[f].height || W != b[f].width)
            throw std::invalid_argument("ssim: frame dimensions differ");
        if (H < window || W < window)
            throw std::invalid_argument("ssim: frame smaller than the window");
        const auto ya = detail::luma_plane(a[f]);
        const auto yb = detail::luma_plane(b[f]);
        const int n = window * window;
        for (int r0 = 0; r0 + window <= H; r0 += window)
            for (int c0 = 0; c0 + window <= W; c0 += window) {
                double mx = 0.0, my = 0.0;
                for (int r = r0; r < r0 + window; ++r)
                    for (int c = c0; c < c0 + window; ++c) {
                        mx += ya[static_cast<std::size_t>(r) * W + c];
                        my += yb[static_cast<std::size_t>(r) * W + c];
                    }
                mx /= n;
                my /= n;
                double vx = 0.0, vy = 0.0, cov = 0.0;
                for (int r = r0; r < r0 + window; ++r)
                    for (int c = c0; c < c0 + window; ++c) {
                        const double dx = ya[static_cast<std::size_t>(r) * W + c] - mx;
                        const double dy = yb[static_cast<std::size_t>(r) * W + c] - my;
                        vx += dx * dx;
                        vy += dy * dy;
                        cov += dx * dy;
                    }
                vx /= n;
                vy /= n;
                cov /= n;
                const double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
                total += num / den;
                ++tiles;
            }
    }
    return total / static_cast<double>(tiles);
}

// ---------------------------------------------------------------------------
// Trajectory IoU
// ---------------------------------------------------------------------------

// Per-frame intersection-over-union of one role's masks across two
// trajectories. A frame where both trajectories lack the role scores 1.
inline std::vector<double> trajectory_iou(const pipeline::Trajectory& pred,
                                          const pipeline::Trajectory& gt, mask::Role role) {
    pred.validate();
    gt.validate();
    if (pred.length() != gt.length())
        throw std::invalid_argument("trajectory_iou: length mismatch");
    if (pred.height() != gt.height() || pred.width() != gt.width())
        throw std::invalid_argument("trajectory_iou: dimension mismatch");
    std::vector<double> out;
    const auto want = static_cast<std::uint8_t>(role);
    for (int f = 0; f < pred.length(); ++f) {
        const auto& p = pred.seg_maps[static_cast<std::size_t>(f)].roles;
        const auto& g = gt.seg_maps[static_cast<std::size_t>(f)].roles;
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const bool ip = p[i] == want, ig = g[i] == want;
            inter += ip && ig;
            uni += ip || ig;
        }
        out.push_back(uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fréchet feature distance
// ---------------------------------------------------------------------------

// Fixed random convolutional feature extractor: three stride-2 conv+SiLU
// stages ending in 64 channels, pooled over space and time to one vector per
// clip. Weights are drawn once from the seed and never trained, so feature
// space is frozen and fully reproducible.
class FeatureExtractor {
public:
    static constexpr int kDim = 64;

    explicit FeatureExtractor(std::uint64_t seed) : seed_(seed) {
        Rng rng = make_rng(derive_seed(seed, 0xfea7ULL));
        w1_ = nn::init::conv_weight<float>(3, 3, 16, rng);
        w2_ = nn::init::conv_weight<float>(3, 16, 32, rng);
        w3_ = nn::init::conv_weight<float>(3, 32, kDim, rng);
    }

    std::uint64_t seed() const { return seed_; }

    std::vector<double> features(const std::vector<mask::Image8>& clip) const {
        if (clip.empty()) throw std::invalid_argument("feature extractor: empty clip");
        const int H = clip[0].height, W = clip[0].width;
        Tensor<float> x({static_cast<int>(clip.size()), H, W, 3});
        for (std::size_t f = 0; f < clip.size(); ++f) {
            if (clip[f].height != H || clip[f].width != W)
                throw std::invalid_argument("feature extractor: ragged clip");
            const Tensor<float> frame = codec::image_to_tensor(clip[f]);
            std::copy(frame.data.begin(), frame.data.end(),
                      x.data.begin() + static_cast<std::ptrdiff_t>(f) * frame.numel());
        }
        autodiff::Graph<float> g;
        int h = g.add_leaf(std::move(x));
        h = autodiff::silu(g, autodiff::conv2d(g, h, g.add_leaf(w1_), -1, 2, 1));
        h = autodiff::silu(g, autodiff::conv2d(g, h, g.add_leaf(w2_), -1, 2, 1));
        h = autodiff::silu(g, autodiff::conv2d(g, h, g.add_leaf(w3_), -1, 2, 1));
        const Tensor<float>& v = g.val(h);
        std::vector<double> out(kDim, 0.0);
        const std::size_t cells = static_cast<std::size_t>(v.numel()) / kDim;
        for (std::size_t i = 0; i < v.data.size(); ++i)
            out[i % kDim] += static_cast<double>(v.data[i]);
        for (double& o : out) o /= static_cast<double>(cells);
        return out;
    }

private:
    std::uint64_t seed_;
    Tensor<float> w1_, w2_, w3_;
};

// Fréchet distance between the Gaussian fits of two feature-vector sets:
// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)). Covariances use the
// n-1 divisor plus 1e-6 diagonal regularization; the matrix square root goes
// through an eigendecomposition of the symmetrized product with negative
// eigenvalues clipped at zero. The result is clamped at 0 to absorb rounding.
inline double frechet_from_features(const std::vector<std::vector<double>>& a,
                                    const std::vector<std::vector<double>>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("frechet: each set needs at least 2 vectors");
    const std::size_t d = a[0].size();
    for (const auto* set : {&a, &b})
        for (const auto& v : *set)
            if (v.size() != d) throw std::invalid_argument("frechet: ragged feature vectors");

    auto moments = [d](const std::vector<std::vector<double>>& s, Eigen::VectorXd& mu,
                       Eigen::MatrixXd& cov) {
        const auto n = static_cast<Eigen::Index>(s.size());
        Eigen::MatrixXd X(n, static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) X(i, static_cast<Eigen::Index>(j)) = s[i][j];
        mu = X.colwise().mean();
        const Eigen::MatrixXd C = X.rowwise() - mu.transpose();
        cov = C.transpose() * C / static_cast<double>(n - 1);
        cov += 1e-6 * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
    };
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    moments(a, mu_a, cov_a);
    moments(b, mu_b, cov_b);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
    const Eigen::MatrixXd root_a = es_a.eigenvectors() *
                                   es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                                   es_a.eigenvectors().transpose();
    Eigen::MatrixXd prod = root_a * cov_b * root_a;
    prod = 0.5 * (prod + prod.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_p(prod);
    const double tr_sqrt = es_p.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    const double dist =
        (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, dist);
}

// Fréchet distance between two clip sets in the frozen extractor's feature
// space; a reproducible stand-in for backbone-based video distances.
inline double frechet_proxy(const std::vector<std::vector<mask::Image8>>& set_a,
                            const std::vector<std::vector<mask::Image8>>& set_b,
                            std::uint64_t extractor_seed) {
    if (set_a.size() < 2 || set_b.size() < 2)
        throw std::invalid_argument("frechet_proxy: each set needs at least 2 clips");
    const FeatureExtractor fx(extractor_seed);
    std::vector<std::vector<double>> fa, fb;
    for (const auto& c : set_a) fa.push_back(fx.features(c));
    for (const auto& c : set_b) fb.push_back(fx.features(c));
    return frechet_from_features(fa, fb);
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct ClipEval {
    std::string clip_id;
    double psnr = 0.0;
    double ssim = 0.0;
    std::vector<double> traj_iou;  // per frame

    double traj_iou_mean() const {
        if (traj_iou.empty()) return 0.0;
        double s = 0.0;
        for (double v : traj_iou) s += v;
        return s / static_cast<double>(traj_iou.size());
    }
};

struct EvalReport {
    std::vector<ClipEval> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_traj_iou = 0.0;
    double frechet = 0.0;
    std::uint64_t config_hash = 0;
    std::uint64_t extractor_seed = 0;
    int ssim_window = 8;

    // Aggregates are plain means of the per-clip rows; call after editing rows.
    void recompute_aggregates() {
        mean_psnr = mean_ssim = mean_traj_iou = 0.0;
        if (rows.empty()) return;
        for (const auto& r : rows) {
            mean_psnr += r.psnr;
            mean_ssim += r.ssim;
            mean_traj_iou += r.traj_iou_mean();
        }
        const auto n = static_cast<double>(rows.size());
        mean_psnr /= n;
        mean_ssim /= n;
        mean_traj_iou /= n;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["kind"] = "eval_report";
        j["config_hash"] = config_hash;
        j["constants"] = {{"extractor_seed", extractor_seed},
                          {"feature_dim", FeatureExtractor::kDim},
                          {"covariance_regularization", 1e-6},
                          {"ssim_window", ssim_window},
                          {"ssim_c1", (0.01 * 255.0) * (0.01 * 255.0)},
                          {"ssim_c2", (0.03 * 255.0) * (0.03 * 255.0)},
                          {"luma_weights", {0.299, 0.587, 0.114}},
                          {"psnr_max", 255},
                          {"psnr_cap_db", 99.0}};
        j["aggregates"] = {{"mean_psnr", mean_psnr},
                           {"mean_ssim", mean_ssim},
                           {"mean_traj_iou", mean_traj_iou},
                           {"frechet_proxy", frechet}};
        nlohmann::ordered_json rws = nlohmann::ordered_json::array();
        for (const auto& r : rows)
            rws.push_back({{"clip", r.clip_id},
                           {"psnr", r.psnr},
                           {"ssim", r.ssim},
                           {"traj_iou", r.traj_iou}});
        j["rows"] = rws;
        return j;
    }

    // One row per clip (per-frame IoU reduced to its mean); trailing mean row.
    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "clip,psnr,ssim,traj_iou_mean\n";
        for (const auto& r : rows)
            out << r.clip_id << "," << r.psnr << "," << r.ssim << "," << r.traj_iou_mean()
                << "\n";
        out << "mean," << mean_psnr << "," << mean_ssim << "," << mean_traj_iou << "\n";
        return out.str();
    }

    void write(const std::filesystem::path& json_file,
               const std::filesystem::path& csv_file) const {
        std::ofstream js(json_file, std::ios::binary);
        if (!js) throw std::runtime_error("cannot write " + json_file.string());
        js << to_json().dump(2) << "\n";
        std::ofstream cs(csv_file, std::ios::binary);
        if (!cs) throw std::runtime_error("cannot write " + csv_file.string());
        cs << to_csv();
    }
};

}  // namespace ivgen::metrics
