#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ivgen/graph.hpp"
#include "ivgen/rng.hpp"
#include "ivgen/schedule.hpp"
#include "ivgen/tensor.hpp"

namespace ivgen::diffusion {

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, const Tensor<T>& eps,
                          const NoiseSchedule<T>& sched, int t) {
    check_same_shape(x0, eps, "forward_diffuse");
    const T a = sched.sqrt_alpha_bar(t);
    const T b = sched.sqrt_one_minus_alpha_bar(t);
    Tensor<T> out(x0.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

// Broadcast a weight map to the latent shape. Accepts the full shape, a
// per-frame (N, h, w) map broadcast over channels, or a single (h, w) map
// broadcast over frames and channels. Rejects negative weights.
template <typename T>
Tensor<T> expand_weight(const std::vector<int>& shape, const Tensor<T>& w) {
    for (const T& v : w.data)
        if (!(v >= T(0))) throw std::invalid_argument("weighted_loss: negative weight");
    if (w.shape == shape) return w;
    if (shape.size() != 4)
        throw std::invalid_argument("weighted_loss: broadcast needs a 4-d latent");
    const int F = shape[0], H = shape[1], W = shape[2], C = shape[3];
    Tensor<T> out(shape);
    if (w.ndim() == 3 && w.dim(0) == F && w.dim(1) == H && w.dim(2) == W) {
        for (int f = 0; f < F; ++f)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c)
                    for (int ch = 0; ch < C; ++ch) out.at(f, r, c, ch) = w.at(f, r, c);
        return out;
    }
    if (w.ndim() == 2 && w.dim(0) == H && w.dim(1) == W) {
        for (int f = 0; f < F; ++f)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c)
                    for (int ch = 0; ch < C; ++ch) out.at(f, r, c, ch) = w.at(r, c);
        return out;
    }
    throw std::invalid_argument("weighted_loss: weight shape " + shape_str(w) +
                                " incompatible with latent " +
                                shape_str(Tensor<T>(shape)));
}

// mean over elements of (w * (eps - eps_hat))^2
template <typename T>
T weighted_loss_value(const Tensor<T>& eps, const Tensor<T>& eps_hat, const Tensor<T>& w) {
    check_same_shape(eps, eps_hat, "weighted_loss");
    const Tensor<T> wf = expand_weight(eps.shape, w);
    T acc = T(0);
    for (std::size_t i = 0; i < eps.data.size(); ++i) {
        const T d = wf.data[i] * (eps.data[i] - eps_hat.data[i]);
        acc += d * d;
    }
    return acc / static_cast<T>(eps.data.size());
}

// same quantity as a graph node, differentiable through eps_hat
template <typename T>
int weighted_loss(autodiff::Graph<T>& g, int eps_hat, const Tensor<T>& eps,
                  const Tensor<T>& w) {
    check_same_shape(eps, g.val(eps_hat), "weighted_loss");
    namespace ad = autodiff;
    const int eps_id = g.add_leaf(eps);
    const int w_id = g.add_leaf(expand_weight(eps.shape, w));
    const int diff = ad::sub(g, eps_id, eps_hat);
    return ad::mean_sq(g, ad::mul(g, w_id, diff));
}

// implied clean-sample estimate inside the DDIM update
template <typename T>
Tensor<T> ddim_x0_hat(const Tensor<T>& x_t, const Tensor<T>& eps_hat,
                      const NoiseSchedule<T>& sched, int t) {
    check_same_shape(x_t, eps_hat, "ddim_x0_hat");
    const T sa = sched.sqrt_alpha_bar(t);
    const T sb = sched.sqrt_one_minus_alpha_bar(t);
    Tensor<T> out(x_t.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (x_t.data[i] - sb * eps_hat.data[i]) / sa;
    return out;
}

// Deterministic update from timestep t to t_prev < t:
//   x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
//   x_prev = sqrt(abar_prev) x0_hat + sqrt(1 - abar_prev) eps_hat
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat,
                    const NoiseSchedule<T>& sched, int t, int t_prev) {
    check_same_shape(x_t, eps_hat, "ddim_step");
    if (t_prev < 0 || t_prev >= t)
        throw std::invalid_argument("ddim_step: need 0 <= t_prev < t");
    Tensor<T> out = ddim_x0_hat(x_t, eps_hat, sched, t);
    const T pa = sched.sqrt_alpha_bar(t_prev);
    const T pb = sched.sqrt_one_minus_alpha_bar(t_prev);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = pa * out.data[i] + pb * eps_hat.data[i];
    return out;
}

// timesteps tau_0 > ... > tau_S with tau_i = round((T-1) * (S-i) / S);
// tau_0 = T-1, tau_S = 0
inline std::vector<int> ddim_ladder(int num_train_steps, int num_sample_steps) {
    if (num_sample_steps < 1)
        throw std::invalid_argument("ddim_ladder: need at least one step");
    if (num_sample_steps > num_train_steps - 1 && num_train_steps > 1)
        num_sample_steps = num_train_steps - 1;
    if (num_train_steps == 1) return {0, 0};
    std::vector<int> tau(static_cast<std::size_t>(num_sample_steps) + 1);
    for (int i = 0; i <= num_sample_steps; ++i)
        tau[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(
            static_cast<double>(num_train_steps - 1) *
            static_cast<double>(num_sample_steps - i) / num_sample_steps));
    return tau;
}

// Run the deterministic sampler from seeded Gaussian noise. `predict` maps
// (x_t, t) to predicted noise. Aborts on any non-finite intermediate.
template <typename T>
Tensor<T> ddim_sample(const std::vector<int>& shape,
                      const std::function<Tensor<T>(const Tensor<T>&, int)>& predict,
                      const NoiseSchedule<T>& sched, int steps, unsigned long long seed) {
    auto rng = make_rng(derive_seed(seed, 0x5a3137ULL));
    Tensor<T> x = Tensor<T>::randn(shape, rng);
    const std::vector<int> tau = ddim_ladder(sched.num_steps(), steps);
    for (std::size_t i = 0; i + 1 < tau.size(); ++i) {
        const int t = tau[i];
        const int t_prev = tau[i + 1];
        Tensor<T> eps_hat = predict(x, t);
        check_same_shape(x, eps_hat, "ddim_sample prediction");
        if (t_prev == t) continue;  // degenerate single-step schedule
        x = ddim_step(x, eps_hat, sched, t, t_prev);
        if (!x.all_finite())
            throw std::runtime_error("ddim_sample: non-finite state at timestep " +
                                     std::to_string(t_prev));
    }
    return x;
}

}  // namespace ivgen::diffusion
