#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ivgen::diffusion {

struct ScheduleConfig {
    int num_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;

    void validate() const {
        if (num_steps < 1) throw std::invalid_argument("schedule: num_steps must be positive");
        if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
            throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
    }
};

// Linear beta schedule with cumulative signal levels alpha_bar_t computed
// once. alpha_bar_0 = 1 - beta_0; alpha_bar_t is strictly decreasing.
template <typename T>
class NoiseSchedule {
public:
    explicit NoiseSchedule(ScheduleConfig cfg = {}) : cfg_(cfg) {
        cfg_.validate();
        const int n = cfg_.num_steps;
        beta_.resize(static_cast<std::size_t>(n));
        alpha_bar_.resize(static_cast<std::size_t>(n));
        double cum = 1.0;
        for (int t = 0; t < n; ++t) {
            const double frac = n == 1 ? 0.0 : static_cast<double>(t) / (n - 1);
            const double beta = cfg_.beta_start + (cfg_.beta_end - cfg_.beta_start) * frac;
            cum *= 1.0 - beta;
            beta_[static_cast<std::size_t>(t)] = static_cast<T>(beta);
            alpha_bar_[static_cast<std::size_t>(t)] = static_cast<T>(cum);
        }
    }

    const ScheduleConfig& config() const { return cfg_; }
    int num_steps() const { return cfg_.num_steps; }

    T beta(int t) const { return beta_[checked(t)]; }
    T alpha_bar(int t) const { return alpha_bar_[checked(t)]; }
    T sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar_[checked(t)]); }
    T sqrt_one_minus_alpha_bar(int t) const {
        return std::sqrt(T(1) - alpha_bar_[checked(t)]);
    }

private:
    std::size_t checked(int t) const {
        if (t < 0 || t >= cfg_.num_steps)
            throw std::out_of_range("schedule: timestep out of range");
        return static_cast<std::size_t>(t);
    }

    ScheduleConfig cfg_;
    std::vector<T> beta_;
    std::vector<T> alpha_bar_;
};

}  // namespace ivgen::diffusion
