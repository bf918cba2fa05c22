#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ivgen/graph.hpp"
#include "ivgen/rng.hpp"
#include "ivgen/tensor.hpp"

namespace ivgen::nn {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    bool frozen = false;
};

// Named parameter registry. Index order is creation order and is the layout
// contract for gradients, optimizer state, and checkpoints.
template <typename T>
class ParamStore {
public:
    int add(const std::string& name, Tensor<T> value, bool frozen = false) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
        const int id = static_cast<int>(params_.size());
        params_.push_back(Param<T>{name, std::move(value), frozen});
        index_[name] = id;
        return id;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }
    Param<T>& at(const std::string& name) {
        const int i = find(name);
        if (i < 0) throw std::out_of_range("no parameter named " + name);
        return params_[static_cast<std::size_t>(i)];
    }
    const Param<T>& at(const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(name);
    }

    std::size_t size() const { return params_.size(); }
    Param<T>& operator[](std::size_t i) { return params_[i]; }
    const Param<T>& operator[](std::size_t i) const { return params_[i]; }

    std::size_t scalar_count(bool trainable_only = false) const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (!trainable_only || !p.frozen) n += p.value.numel();
        return n;
    }

    void set_frozen_if(const std::function<bool(const std::string&)>& pred, bool frozen) {
        for (auto& p : params_)
            if (pred(p.name)) p.frozen = frozen;
    }

    // Add every parameter to a graph as a leaf. Frozen parameters (and all of
    // them when train is false) participate as constants.
    std::vector<int> bind(autodiff::Graph<T>& g, bool train) const {
        std::vector<int> ids;
        ids.reserve(params_.size());
        for (const auto& p : params_) ids.push_back(g.add_leaf(p.value, train && !p.frozen));
        return ids;
    }

    // Pull gradients for this binding, zeros for constants.
    std::vector<Tensor<T>> collect_grads(autodiff::Graph<T>& g, const std::vector<int>& ids) const {
        std::vector<Tensor<T>> grads;
        grads.reserve(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (g.requires_grad(ids[i]) && g.has_grad(ids[i]))
                grads.push_back(g.grad(ids[i]));
            else
                grads.push_back(Tensor<T>(params_[i].value.shape));
        }
        return grads;
    }

private:
    std::vector<Param<T>> params_;
    std::map<std::string, int> index_;
};

// Resolves parameter names to node ids for one graph binding.
template <typename T>
struct BoundParams {
    const ParamStore<T>* store = nullptr;
    std::vector<int> ids;

    int operator()(const std::string& name) const {
        const int i = store->find(name);
        if (i < 0) throw std::out_of_range("no parameter named " + name);
        return ids[static_cast<std::size_t>(i)];
    }
};

template <typename T>
BoundParams<T> bind_params(const ParamStore<T>& store, autodiff::Graph<T>& g, bool train) {
    return BoundParams<T>{&store, store.bind(g, train)};
}

template <typename T>
struct AdamWConfig {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0);
};

// Decoupled weight decay Adam. Frozen parameters are skipped entirely: no
// value update and no moment update.
template <typename T>
class AdamW {
public:
    AdamW() = default;
    AdamW(const ParamStore<T>& store, AdamWConfig<T> cfg) : cfg_(cfg) {
        for (std::size_t i = 0; i < store.size(); ++i) {
            m_.push_back(Tensor<T>(store[i].value.shape));
            v_.push_back(Tensor<T>(store[i].value.shape));
        }
    }

    void step(ParamStore<T>& store, const std::vector<Tensor<T>>& grads) {
        if (grads.size() != store.size())
            throw std::invalid_argument("optimizer step: gradient count mismatch");
        ++t_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
        for (std::size_t i = 0; i < store.size(); ++i) {
            if (store[i].frozen) continue;
            auto& p = store[i].value.data;
            auto& m = m_[i].data;
            auto& v = v_[i].data;
            const auto& gd = grads[i].data;
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * gd[j];
                v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * gd[j] * gd[j];
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                p[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                   cfg_.weight_decay * p[j]);
            }
        }
    }

    long long step_count() const { return t_; }
    const AdamWConfig<T>& config() const { return cfg_; }
    AdamWConfig<T>& config() { return cfg_; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }
    void set_step_count(long long t) { t_ = t; }

private:
    AdamWConfig<T> cfg_;
    long long t_ = 0;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

// Sinusoidal features for a (possibly fractional) timestep, dim must be even:
// first half sines, second half cosines, frequencies log-spaced down from 1.
template <typename T>
Tensor<T> timestep_embedding(T t, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("timestep_embedding: dim must be even and >= 2");
    const int half = dim / 2;
    Tensor<T> out({dim});
    for (int i = 0; i < half; ++i) {
        const T freq = std::exp(-std::log(T(10000)) * static_cast<T>(i) / static_cast<T>(half));
        out.data[static_cast<std::size_t>(i)] = std::sin(t * freq);
        out.data[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
    }
    return out;
}

namespace init {

template <typename T>
Tensor<T> conv_weight(int k, int cin, int cout, Rng& rng) {
    const T std = std::sqrt(T(1) / static_cast<T>(k * k * cin));
    return Tensor<T>::randn({k, k, cin, cout}, rng, std);
}

template <typename T>
Tensor<T> linear_weight(int cin, int cout, Rng& rng) {
    const T std = std::sqrt(T(1) / static_cast<T>(cin));
    return Tensor<T>::randn({cin, cout}, rng, std);
}

}  // namespace init

}  // namespace ivgen::nn
