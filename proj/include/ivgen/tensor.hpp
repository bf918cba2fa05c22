#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivgen/rng.hpp"

namespace ivgen {

// Dense row-major tensor. Layout convention across the library is
// channels-last: frames are [H, W, C], videos [N, H, W, C].
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}
    Tensor(std::vector<int> s, T fill) : shape(std::move(s)), data(count(shape), fill) {}

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(shape.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // Index helpers for the common ranks.
    T& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    const T& at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    T& at(int i, int j, int k) {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    const T& at(int i, int j, int k) const {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    T& at(int i, int j, int k, int l) {
        return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const T& at(int i, int j, int k, int l) const {
        return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    Tensor reshaped(std::vector<int> s) const {
        if (count(s) != numel()) throw std::invalid_argument("tensor: reshape element count mismatch");
        Tensor out;
        out.shape = std::move(s);
        out.data = data;
        return out;
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, T v) { return Tensor(std::move(s), v); }

    static Tensor randn(std::vector<int> s, Rng& rng, T stddev = T(1)) {
        Tensor out(std::move(s));
        std::normal_distribution<T> d(T(0), stddev);
        for (auto& v : out.data) v = d(rng);
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename T>
inline std::string shape_str(const Tensor<T>& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) +
                                    " vs " + shape_str(b));
}

// Concatenate two videos along the channel axis. An empty `b` is a no-op.
template <typename T>
inline Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (b.numel() == 0) return a;
    if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) ||
        a.dim(2) != b.dim(2))
        throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(a) +
                                    " vs " + shape_str(b));
    const int F = a.dim(0), H = a.dim(1), W = a.dim(2);
    const int ca = a.dim(3), cb = b.dim(3);
    Tensor<T> out({F, H, W, ca + cb});
    for (int f = 0; f < F; ++f)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                for (int ch = 0; ch < ca; ++ch) out.at(f, r, c, ch) = a.at(f, r, c, ch);
                for (int ch = 0; ch < cb; ++ch) out.at(f, r, c, ca + ch) = b.at(f, r, c, ch);
            }
    return out;
}

}  // namespace ivgen
