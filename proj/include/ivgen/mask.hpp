#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ivgen/rng.hpp"
#include "ivgen/tensor.hpp"

namespace ivgen::mask {

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;  // row-major, 0 or 1

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {
        if (h <= 0 || w <= 0) throw std::invalid_argument("BinaryMask: dimensions must be positive");
    }

    std::uint8_t& at(int r, int c) { return bits[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return bits[static_cast<std::size_t>(r) * width + c]; }
    bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }

    std::size_t area() const {
        std::size_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }
    bool empty() const { return area() == 0; }
    bool operator==(const BinaryMask& o) const {
        return height == o.height && width == o.width && bits == o.bits;
    }
};

inline void check_dims(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument(std::string(what) + ": mask dimension mismatch");
}

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
    check_dims(a, b, "mask_and");
    BinaryMask out(a.height, a.width);
    for (std::size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = a.bits[i] & b.bits[i];
    return out;
}

inline BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
    check_dims(a, b, "mask_or");
    BinaryMask out(a.height, a.width);
    for (std::size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = a.bits[i] | b.bits[i];
    return out;
}

inline bool is_subset(const BinaryMask& a, const BinaryMask& b) {  // a ⊆ b
    check_dims(a, b, "is_subset");
    for (std::size_t i = 0; i < a.bits.size(); ++i)
        if (a.bits[i] && !b.bits[i]) return false;
    return true;
}

inline double iou(const BinaryMask& a, const BinaryMask& b) {
    check_dims(a, b, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] & b.bits[i];
        uni += a.bits[i] | b.bits[i];
    }
    if (uni == 0) return 1.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline void check_kernel(int k) {
    if (k < 1 || k % 2 == 0)
        throw std::invalid_argument("morphology: kernel size must be odd and >= 1, got " +
                                    std::to_string(k));
}

namespace detail {

// One-dimensional sliding max/min filter along rows or columns, radius (k-1)/2,
// with pixels outside the grid counting as background (0).
template <bool kMax>
inline BinaryMask run_filter(const BinaryMask& m, int k, bool along_rows) {
    BinaryMask out(m.height, m.width);
    const int r = (k - 1) / 2;
    const int len = along_rows ? m.width : m.height;
    const int lines = along_rows ? m.height : m.width;
    for (int line = 0; line < lines; ++line) {
        for (int i = 0; i < len; ++i) {
            std::uint8_t acc = kMax ? 0 : 1;
            for (int d = -r; d <= r; ++d) {
                const int j = i + d;
                std::uint8_t v = 0;
                if (j >= 0 && j < len) v = along_rows ? m.at(line, j) : m.at(j, line);
                if (kMax)
                    acc |= v;
                else
                    acc &= v;
                if (kMax ? acc : !acc) break;
            }
            if (along_rows)
                out.at(line, i) = acc;
            else
                out.at(i, line) = acc;
        }
    }
    return out;
}

}  // namespace detail

// Morphological dilation with a k x k square structuring element. A square
// element is separable, so this runs a horizontal then a vertical max filter.
inline BinaryMask dilate(const BinaryMask& m, int k) {
    check_kernel(k);
    if (k == 1) return m;
    return detail::run_filter<true>(detail::run_filter<true>(m, k, true), k, false);
}

// Erosion, dual of dilate. Outside-the-grid pixels count as background, so a
// full mask loses a (k-1)/2 border.
inline BinaryMask erode(const BinaryMask& m, int k) {
    check_kernel(k);
    if (k == 1) return m;
    return detail::run_filter<false>(detail::run_filter<false>(m, k, true), k, false);
}

// Contact map between an actor mask and an object mask:
//   (dilate(m_h) ∩ m_o) ∪ (m_h ∩ dilate(m_o))
inline BinaryMask contact_map(const BinaryMask& m_h, const BinaryMask& m_o, int k) {
    check_dims(m_h, m_o, "contact_map");
    check_kernel(k);
    return mask_or(mask_and(dilate(m_h, k), m_o), mask_and(m_h, dilate(m_o, k)));
}

// Loss weight map over a real-valued contact map in [0, 1]:
//   w = (1 - m_c) + lambda * m_c
// computed in the algebraically equal form 1 + (lambda - 1) * m_c so that
// lambda = 1 yields exactly 1 everywhere.
template <typename T>
inline Tensor<T> weight_map(const Tensor<T>& m_c, T lambda) {
    if (lambda < T(0)) throw std::invalid_argument("weight_map: lambda must be >= 0");
    Tensor<T> out = m_c;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const T v = m_c.data[i];
        if (v < T(0) || v > T(1))
            throw std::invalid_argument("weight_map: contact map values must lie in [0, 1]");
        out.data[i] = T(1) + (lambda - T(1)) * v;
    }
    return out;
}

// With probability p, dilates or erodes (a fair coin between the two) using a
// kernel size drawn uniformly from `kernels`; otherwise returns m unchanged.
// Draw order: morph coin, then op coin, then kernel index.
inline BinaryMask random_morph(const BinaryMask& m, double p, const std::vector<int>& kernels,
                               Rng& rng, bool* morphed = nullptr) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("random_morph: p must lie in [0, 1]");
    if (kernels.empty()) throw std::invalid_argument("random_morph: empty kernel set");
    for (int k : kernels) check_kernel(k);
    if (morphed) *morphed = false;
    if (uniform(rng) >= p) return m;
    if (morphed) *morphed = true;
    const bool do_dilate = uniform(rng) < 0.5;
    const int k = kernels[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(kernels.size()) - 1))];
    return do_dilate ? dilate(m, k) : erode(m, k);
}

// ---------------------------------------------------------------------------
// Segmentation maps and the color codec
// ---------------------------------------------------------------------------

enum class Role : std::uint8_t { background = 0, actor = 1, object = 2, part = 3 };
inline constexpr int kNumRoles = 4;

inline const char* role_name(Role r) {
    switch (r) {
        case Role::background: return "background";
        case Role::actor: return "actor";
        case Role::object: return "object";
        case Role::part: return "part";
    }
    return "?";
}

struct SegmentationMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> roles;  // Role values, row-major

    SegmentationMap() = default;
    SegmentationMap(int h, int w)
        : height(h), width(w), roles(static_cast<std::size_t>(h) * w,
                                     static_cast<std::uint8_t>(Role::background)) {
        if (h <= 0 || w <= 0)
            throw std::invalid_argument("SegmentationMap: dimensions must be positive");
    }

    Role at(int r, int c) const {
        return static_cast<Role>(roles[static_cast<std::size_t>(r) * width + c]);
    }
    void set(int r, int c, Role role) {
        roles[static_cast<std::size_t>(r) * width + c] = static_cast<std::uint8_t>(role);
    }

    BinaryMask role_mask(Role role) const {
        BinaryMask out(height, width);
        for (std::size_t i = 0; i < roles.size(); ++i)
            out.bits[i] = roles[i] == static_cast<std::uint8_t>(role) ? 1 : 0;
        return out;
    }

    bool operator==(const SegmentationMap& o) const {
        return height == o.height && width == o.width && roles == o.roles;
    }
};

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb& o) const { return r == o.r && g == o.g && b == o.b; }
};

// Actor green, interacted object red, articulated part blue, background black.
struct ColorCodec {
    Rgb actor_color{0, 255, 0};
    Rgb object_color{255, 0, 0};
    Rgb part_color{0, 0, 255};
    Rgb background_color{0, 0, 0};

    Rgb color_of(Role role) const {
        switch (role) {
            case Role::actor: return actor_color;
            case Role::object: return object_color;
            case Role::part: return part_color;
            case Role::background: return background_color;
        }
        return background_color;
    }
};

// 8-bit RGB image, interleaved channels, row-major.
struct Image8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;

    Image8() = default;
    Image8(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {
        if (h <= 0 || w <= 0) throw std::invalid_argument("Image8: dimensions must be positive");
    }

    std::uint8_t* px(int r, int c) { return &rgb[(static_cast<std::size_t>(r) * width + c) * 3]; }
    const std::uint8_t* px(int r, int c) const {
        return &rgb[(static_cast<std::size_t>(r) * width + c) * 3];
    }
    void set(int r, int c, Rgb v) {
        auto* p = px(r, c);
        p[0] = v.r;
        p[1] = v.g;
        p[2] = v.b;
    }
    Rgb get(int r, int c) const {
        const auto* p = px(r, c);
        return Rgb{p[0], p[1], p[2]};
    }
    bool operator==(const Image8& o) const {
        return height == o.height && width == o.width && rgb == o.rgb;
    }
};

inline Image8 encode_colors(const SegmentationMap& seg, const ColorCodec& codec = {}) {
    Image8 img(seg.height, seg.width);
    for (int r = 0; r < seg.height; ++r)
        for (int c = 0; c < seg.width; ++c) img.set(r, c, codec.color_of(seg.at(r, c)));
    return img;
}

// Nearest-color decoding; total on arbitrary RGB input. Ties break by role
// priority object > actor > part > background.
inline SegmentationMap decode_colors(const Image8& img, const ColorCodec& codec = {}) {
    static constexpr std::array<Role, 4> kPriority{Role::object, Role::actor, Role::part,
                                                   Role::background};
    SegmentationMap seg(img.height, img.width);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            const Rgb v = img.get(r, c);
            long best = -1;
            Role best_role = Role::background;
            for (Role role : kPriority) {
                const Rgb ref = codec.color_of(role);
                const long dr = static_cast<long>(v.r) - ref.r;
                const long dg = static_cast<long>(v.g) - ref.g;
                const long db = static_cast<long>(v.b) - ref.b;
                const long d2 = dr * dr + dg * dg + db * db;
                if (best < 0 || d2 < best) {
                    best = d2;
                    best_role = role;
                }
            }
            seg.set(r, c, best_role);
        }
    }
    return seg;
}

// ---------------------------------------------------------------------------
// Run-length encoding used by manifests: per row, a list of (start, length)
// pairs of set pixels, row-major.
// ---------------------------------------------------------------------------

using RleRows = std::vector<std::vector<std::pair<int, int>>>;

inline RleRows rle_encode(const BinaryMask& m) {
    RleRows rows(static_cast<std::size_t>(m.height));
    for (int r = 0; r < m.height; ++r) {
        int c = 0;
        while (c < m.width) {
            if (m.at(r, c)) {
                int start = c;
                while (c < m.width && m.at(r, c)) ++c;
                rows[static_cast<std::size_t>(r)].emplace_back(start, c - start);
            } else {
                ++c;
            }
        }
    }
    return rows;
}

inline BinaryMask rle_decode(const RleRows& rows, int height, int width) {
    if (static_cast<int>(rows.size()) != height)
        throw std::invalid_argument("rle_decode: row count mismatch");
    BinaryMask m(height, width);
    for (int r = 0; r < height; ++r) {
        for (const auto& [start, len] : rows[static_cast<std::size_t>(r)]) {
            if (start < 0 || len <= 0 || start + len > width)
                throw std::invalid_argument("rle_decode: run out of bounds");
            for (int c = start; c < start + len; ++c) m.at(r, c) = 1;
        }
    }
    return m;
}

}  // namespace ivgen::mask
