#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ivgen/mask.hpp"
#include "ivgen/rng.hpp"

namespace ivgen::scene {

enum class Verb { push, pull, pick_up, put_down, pick_place };
enum class ShapeKind { disc, rectangle, l_shape, laptop_lid };

inline const char* verb_name(Verb v) {
    switch (v) {
        case Verb::push: return "push";
        case Verb::pull: return "pull";
        case Verb::pick_up: return "pick_up";
        case Verb::put_down: return "put_down";
        case Verb::pick_place: return "pick_place";
    }
    return "?";
}

inline const char* verb_gerund(Verb v) {
    switch (v) {
        case Verb::push: return "pushing";
        case Verb::pull: return "pulling";
        case Verb::pick_up: return "picking up";
        case Verb::put_down: return "putting down";
        case Verb::pick_place: return "picking and placing";
    }
    return "?";
}

inline Verb verb_from_name(const std::string& s) {
    for (Verb v : {Verb::push, Verb::pull, Verb::pick_up, Verb::put_down, Verb::pick_place})
        if (s == verb_name(v)) return v;
    throw std::invalid_argument("unknown verb: " + s);
}

inline const char* shape_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::disc: return "disc";
        case ShapeKind::rectangle: return "rectangle";
        case ShapeKind::l_shape: return "l_shape";
        case ShapeKind::laptop_lid: return "laptop_lid";
    }
    return "?";
}

inline ShapeKind shape_from_name(const std::string& s) {
    for (ShapeKind k :
         {ShapeKind::disc, ShapeKind::rectangle, ShapeKind::l_shape, ShapeKind::laptop_lid})
        if (s == shape_name(k)) return k;
    throw std::invalid_argument("unknown shape kind: " + s);
}

struct ActionLabel {
    Verb verb = Verb::push;
    ShapeKind object_kind = ShapeKind::disc;
};

struct SceneSpec {
    int height = 64;
    int width = 96;
    int num_frames = 8;
    int num_distractors = 3;
    std::vector<ShapeKind> object_shape_set{ShapeKind::disc, ShapeKind::rectangle,
                                            ShapeKind::l_shape};
    std::vector<Verb> action_set{Verb::push, Verb::pull, Verb::pick_up, Verb::put_down,
                                 Verb::pick_place};
    std::uint64_t rng_seed = 0;
    double velocity_min = 1.5;  // pixels/frame (commanded velocities are
    double velocity_max = 3.0;  // quantized to whole pixels per axis)
    int actor_size_min = 10;  // capsule length in pixels
    int actor_size_max = 16;
    int object_size_min = 3;  // disc radius / rectangle half-extent in pixels
    int object_size_max = 5;
    int latent_factor = 4;  // H, W must be divisible by this

    void validate() const {
        if (height < 16 || width < 16)
            throw std::invalid_argument("SceneSpec: height and width must be >= 16");
        if (latent_factor < 1 || height % latent_factor != 0 || width % latent_factor != 0)
            throw std::invalid_argument(
                "SceneSpec: height and width must be divisible by the latent factor");
        if (num_frames < 2) throw std::invalid_argument("SceneSpec: num_frames must be >= 2");
        if (num_distractors < 0)
            throw std::invalid_argument("SceneSpec: num_distractors must be >= 0");
        if (velocity_min < 0 || velocity_max < velocity_min)
            throw std::invalid_argument("SceneSpec: invalid velocity range");
        if (actor_size_min < 4 || actor_size_max < actor_size_min)
            throw std::invalid_argument("SceneSpec: invalid actor size range");
        if (object_size_min < 2 || object_size_max < object_size_min)
            throw std::invalid_argument("SceneSpec: invalid object size range");
        if (object_shape_set.empty() || action_set.empty())
            throw std::invalid_argument("SceneSpec: shape set and action set must be nonempty");
    }
};

struct Clip {
    std::vector<mask::Image8> frames;
    std::vector<mask::SegmentationMap> seg_maps;
    ActionLabel action;
    mask::BinaryMask target_position_mask;
    std::string clip_id;

    int height() const { return frames.empty() ? 0 : frames[0].height; }
    int width() const { return frames.empty() ? 0 : frames[0].width; }
    int num_frames() const { return static_cast<int>(frames.size()); }
};

struct PlacementError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Layout planning. Each entity is a pixel-offset raster plus per-frame integer
// anchors; rigid entities translate without resampling, so mask area is
// constant and centroids move by exactly the commanded per-frame deltas.
// ---------------------------------------------------------------------------

struct PixelSet {
    std::vector<std::pair<int, int>> offsets;  // (dr, dc) relative to anchor

    std::pair<int, int> bbox_min() const {
        int r = 1 << 28, c = 1 << 28;
        for (auto [dr, dc] : offsets) {
            r = std::min(r, dr);
            c = std::min(c, dc);
        }
        return {r, c};
    }
    std::pair<int, int> bbox_max() const {
        int r = -(1 << 28), c = -(1 << 28);
        for (auto [dr, dc] : offsets) {
            r = std::max(r, dr);
            c = std::max(c, dc);
        }
        return {r, c};
    }
};

struct EntityTrack {
    std::string id;
    mask::Role role = mask::Role::background;  // distractors keep background role
    mask::Rgb color;
    std::vector<mask::BinaryMask> masks;  // one per frame
};

struct SceneLayout {
    int height = 0, width = 0, num_frames = 0;
    ActionLabel action;
    int contact_frame = 0;                  // t_c
    std::array<int, 2> velocity{0, 0};      // commanded object (d_row, d_col) per frame
    EntityTrack actor;
    EntityTrack object;
    std::optional<EntityTrack> part;        // articulated lid, laptop_lid only
    std::vector<EntityTrack> distractors;   // static
    mask::Image8 background;
};

namespace detail {

inline mask::Rgb hsv_to_rgb(double h, double s, double v) {
    h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
    const double c = v * s;
    const double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
    const double m = v - c;
    double r = 0, g = 0, b = 0;
    if (h < 60) { r = c; g = x; }
    else if (h < 120) { r = x; g = c; }
    else if (h < 180) { g = c; b = x; }
    else if (h < 240) { g = x; b = c; }
    else if (h < 300) { r = x; b = c; }
    else { r = c; b = x; }
    auto q = [&](double u) {
        return static_cast<std::uint8_t>(std::lround(std::clamp((u + m) * 255.0, 0.0, 255.0)));
    };
    return {q(r), q(g), q(b)};
}

// Saturated object color with the hue kept away from the actor's green band.
inline mask::Rgb sample_object_color(Rng& rng) {
    double h = uniform(rng, 0.0, 250.0);
    if (h > 70.0) h += 80.0;  // skip (70, 150) degrees
    return hsv_to_rgb(h, uniform(rng, 0.75, 1.0), uniform(rng, 0.75, 1.0));
}

inline mask::Rgb sample_actor_color(Rng& rng) {
    return hsv_to_rgb(uniform(rng, 95.0, 130.0), uniform(rng, 0.55, 0.8),
                      uniform(rng, 0.6, 0.85));
}

// Smooth value-noise texture: a coarse random color grid, bilinearly upsampled.
inline mask::Image8 noise_background(int height, int width, Rng& rng) {
    const int cell = 8;
    const int gh = height / cell + 2, gw = width / cell + 2;
    std::vector<std::array<double, 3>> grid(static_cast<std::size_t>(gh) * gw);
    for (auto& g : grid) {
        const double v = uniform(rng, 0.25, 0.55);
        g = {v + uniform(rng, -0.06, 0.06), v + uniform(rng, -0.06, 0.06),
             v + uniform(rng, -0.06, 0.06)};
    }
    mask::Image8 img(height, width);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const double fr = static_cast<double>(r) / cell, fc = static_cast<double>(c) / cell;
            const int r0 = static_cast<int>(fr), c0 = static_cast<int>(fc);
            const double ar = fr - r0, ac = fc - c0;
            auto* p = img.px(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                const double v00 = grid[static_cast<std::size_t>(r0) * gw + c0][ch];
                const double v01 = grid[static_cast<std::size_t>(r0) * gw + c0 + 1][ch];
                const double v10 = grid[static_cast<std::size_t>(r0 + 1) * gw + c0][ch];
                const double v11 = grid[static_cast<std::size_t>(r0 + 1) * gw + c0 + 1][ch];
                const double v = (1 - ar) * ((1 - ac) * v00 + ac * v01) +
                                 ar * ((1 - ac) * v10 + ac * v11);
                p[ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
        }
    }
    return img;
}

inline PixelSet make_disc(int radius) {
    PixelSet s;
    for (int r = -radius; r <= radius; ++r)
        for (int c = -radius; c <= radius; ++c)
            if (r * r + c * c <= radius * radius) s.offsets.emplace_back(r, c);
    return s;
}

inline PixelSet make_rect(int half_h, int half_w) {
    PixelSet s;
    for (int r = -half_h; r <= half_h; ++r)
        for (int c = -half_w; c <= half_w; ++c) s.offsets.emplace_back(r, c);
    return s;
}

inline PixelSet make_l_shape(int half_h, int half_w) {
    PixelSet s;
    for (int r = -half_h; r <= half_h; ++r)
        for (int c = -half_w; c <= half_w; ++c)
            if (!(r < 0 && c > 0)) s.offsets.emplace_back(r, c);  // notch the top-right quadrant
    return s;
}

// Capsule of total length `len` and cap radius `rad`, oriented along (dr, dc).
inline PixelSet make_capsule(int len, int rad, double dr, double dc) {
    PixelSet s;
    const double half = (len - 2 * rad) / 2.0;
    const int ext = len / 2 + 1;
    for (int r = -ext; r <= ext; ++r) {
        for (int c = -ext; c <= ext; ++c) {
            const double t = std::clamp(r * dr + c * dc, -half, half);  // projection on axis
            const double pr = t * dr, pc = t * dc;
            const double d2 = (r - pr) * (r - pr) + (c - pc) * (c - pc);
            if (d2 <= static_cast<double>(rad) * rad) s.offsets.emplace_back(r, c);
        }
    }
    return s;
}

// Lid: a thin rectangle hinged at the origin, tilted by theta from vertical
// (positive theta leans toward +columns). Supersampled to avoid holes; pixels
// that would land on or below the hinge row are truncated so the lid can
// never intrude into the base it sits on.
inline PixelSet make_lid(int lid_len, int lid_th, double theta) {
    std::vector<std::pair<int, int>> px;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (double u = 0.5; u <= lid_len; u += 0.5) {
        for (double w = -lid_th / 2.0; w <= lid_th / 2.0; w += 0.5) {
            const double rr = -u * ct + w * st;
            const double cc = u * st + w * ct;
            const int r = static_cast<int>(std::lround(rr));
            if (r <= 0) px.emplace_back(r, static_cast<int>(std::lround(cc)));
        }
    }
    std::sort(px.begin(), px.end());
    px.erase(std::unique(px.begin(), px.end()), px.end());
    PixelSet s;
    s.offsets = std::move(px);
    return s;
}

inline bool fits(const PixelSet& s, int ar, int ac, int height, int width) {
    auto [r0, c0] = s.bbox_min();
    auto [r1, c1] = s.bbox_max();
    return ar + r0 >= 0 && ac + c0 >= 0 && ar + r1 < height && ac + c1 < width;
}

inline mask::BinaryMask rasterize(const PixelSet& s, int ar, int ac, int height, int width) {
    mask::BinaryMask m(height, width);
    for (auto [dr, dc] : s.offsets) {
        const int r = ar + dr, c = ac + dc;
        if (r >= 0 && r < height && c >= 0 && c < width) m.at(r, c) = 1;
    }
    return m;
}

inline bool overlaps(const PixelSet& a, int ar, int ac, const PixelSet& b, int br, int bc,
                     int pad = 0) {
    // quick bbox reject
    auto [a0r, a0c] = a.bbox_min();
    auto [a1r, a1c] = a.bbox_max();
    auto [b0r, b0c] = b.bbox_min();
    auto [b1r, b1c] = b.bbox_max();
    if (ar + a1r + pad < br + b0r || br + b1r + pad < ar + a0r || ac + a1c + pad < bc + b0c ||
        bc + b1c + pad < ac + a0c)
        return false;
    for (auto [dr, dc] : a.offsets)
        for (auto [er, ec] : b.offsets)
            if (std::abs(ar + dr - br - er) <= pad && std::abs(ac + dc - bc - ec) <= pad)
                return true;
    return false;
}

struct Pose {
    int r = 0, c = 0;
};

inline Pose round_point(double r, double c) {
    return {static_cast<int>(std::lround(r)), static_cast<int>(std::lround(c))};
}

}  // namespace detail

// Plans entity rasters and trajectories for one clip. Deterministic in
// (spec, action, seed). Throws PlacementError when the canvas cannot host the
// actor, object and distractors without overlap.
inline SceneLayout plan_scene(const SceneSpec& spec, const ActionLabel& action,
                              std::uint64_t seed) {
    using namespace detail;
    spec.validate();
    if (std::find(spec.action_set.begin(), spec.action_set.end(), action.verb) ==
        spec.action_set.end())
        throw std::invalid_argument("plan_scene: verb not in the spec's action set");

    Rng rng = make_rng(derive_seed(spec.rng_seed, seed));
    const int H = spec.height, W = spec.width, N = spec.num_frames;

    SceneLayout out;
    out.height = H;
    out.width = W;
    out.num_frames = N;
    out.action = action;
    out.background = noise_background(H, W, rng);

    const mask::Rgb object_color = sample_object_color(rng);
    const mask::Rgb actor_color = sample_actor_color(rng);

    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng trial = make_rng(derive_seed(spec.rng_seed ^ 0x5ce5ce5cull, seed * 64 + attempt));

        // --- object shape -------------------------------------------------
        PixelSet obj_shape;
        int lid_w = 0, lid_h = 0;
        switch (action.object_kind) {
            case ShapeKind::disc:
                obj_shape = make_disc(uniform_int(trial, spec.object_size_min, spec.object_size_max));
                break;
            case ShapeKind::rectangle:
                obj_shape = make_rect(uniform_int(trial, spec.object_size_min, spec.object_size_max),
                                      uniform_int(trial, spec.object_size_min, spec.object_size_max + 1));
                break;
            case ShapeKind::l_shape:
                obj_shape = make_l_shape(uniform_int(trial, spec.object_size_min, spec.object_size_max),
                                         uniform_int(trial, spec.object_size_min, spec.object_size_max));
                break;
            case ShapeKind::laptop_lid: {
                const int hh = uniform_int(trial, 2, 3), hw = uniform_int(trial, 4, 6);
                obj_shape = make_rect(hh, hw);
                lid_w = uniform_int(trial, 2, 3);       // thickness
                lid_h = uniform_int(trial, 5, 7);       // length
                break;
            }
        }

        // --- contact frame and commanded velocity -------------------------
        const int t_c = uniform_int(trial, 1, N / 2);
        const int move_frames = N - 1 - t_c;
        const double speed = uniform(trial, spec.velocity_min, spec.velocity_max);
        const double theta = uniform(trial, 0.0, 2.0 * 3.14159265358979323846);
        std::array<int, 2> vel{};
        if (action.verb == Verb::pick_up)
            vel = {-static_cast<int>(std::lround(speed)), 0};
        else if (action.verb == Verb::put_down)
            vel = {static_cast<int>(std::lround(speed)), 0};
        else
            vel = {static_cast<int>(std::lround(speed * std::sin(theta))),
                   static_cast<int>(std::lround(speed * std::cos(theta)))};
        if (spec.velocity_max > 0.5 && vel[0] == 0 && vel[1] == 0)
            vel[1] = std::max(1, static_cast<int>(std::lround(speed)));
        if (spec.velocity_max < 0.5) vel = {0, 0};

        // --- object start anchor so the whole trajectory fits -------------
        auto [o0r, o0c] = obj_shape.bbox_min();
        auto [o1r, o1c] = obj_shape.bbox_max();
        const int total_dr = vel[0] * move_frames, total_dc = vel[1] * move_frames;
        const int lid_pad = action.object_kind == ShapeKind::laptop_lid ? lid_h + 1 : 0;
        const int lo_r = 1 - std::min(0, total_dr) - o0r + lid_pad;
        const int hi_r = H - 2 - std::max(0, total_dr) - o1r;
        const int lo_c = 1 - std::min(0, total_dc) - o0c + lid_pad;
        const int hi_c = W - 2 - std::max(0, total_dc) - o1c;
        if (lo_r > hi_r || lo_c > hi_c) continue;
        const detail::Pose obj_start{uniform_int(trial, lo_r, hi_r),
                                     uniform_int(trial, lo_c, hi_c)};

        std::vector<detail::Pose> obj_anchor(static_cast<std::size_t>(N));
        for (int t = 0; t < N; ++t) {
            const int k = std::max(0, t - t_c);
            obj_anchor[static_cast<std::size_t>(t)] = {obj_start.r + vel[0] * k,
                                                       obj_start.c + vel[1] * k};
        }

        // --- actor approach ----------------------------------------------
        double adr, adc;  // approach direction, unit
        if (action.verb == Verb::push || action.verb == Verb::pull) {
            const double n = std::hypot(static_cast<double>(vel[0]), static_cast<double>(vel[1]));
            if (n == 0.0) {
                adr = std::sin(theta);
                adc = std::cos(theta);
            } else if (action.verb == Verb::push) {
                adr = vel[0] / n;
                adc = vel[1] / n;
            } else {
                adr = -vel[0] / n;
                adc = -vel[1] / n;
            }
        } else {
            const double phi = uniform(trial, 0.0, 2.0 * 3.14159265358979323846);
            adr = std::sin(phi);
            adc = std::cos(phi);
        }

        const int cap_len = uniform_int(trial, spec.actor_size_min, spec.actor_size_max);
        const int cap_rad = std::max(2, cap_len / 4);
        PixelSet actor_shape = make_capsule(cap_len, cap_rad, adr, adc);

        // Walk the actor in along the approach line until one more step would
        // overlap; the last disjoint pose is the contact pose.
        const detail::Pose oc = obj_anchor[static_cast<std::size_t>(t_c)];
        const int k_far = cap_len + std::max(o1r - o0r, o1c - o0c) + 4;
        int contact_k = -1;
        for (int k = k_far; k >= 0; --k) {
            const detail::Pose p = round_point(oc.r - adr * k, oc.c - adc * k);
            if (overlaps(actor_shape, p.r, p.c, obj_shape, oc.r, oc.c, 0)) break;
            contact_k = k;
        }
        if (contact_k < 0) continue;
        const detail::Pose actor_contact =
            round_point(oc.r - adr * contact_k, oc.c - adc * contact_k);

        const double approach_speed = 2.0 * uniform(trial, spec.velocity_min, spec.velocity_max);
        const double approach_dist = approach_speed * t_c;
        std::vector<detail::Pose> actor_anchor(static_cast<std::size_t>(N));
        for (int t = 0; t < N; ++t) {
            if (t <= t_c) {
                const double back = approach_dist * (1.0 - static_cast<double>(t) / t_c);
                actor_anchor[static_cast<std::size_t>(t)] =
                    round_point(actor_contact.r - adr * back, actor_contact.c - adc * back);
            } else {
                const int k = t - t_c;
                actor_anchor[static_cast<std::size_t>(t)] = {actor_contact.r + vel[0] * k,
                                                             actor_contact.c + vel[1] * k};
            }
        }

        // --- articulated lid (laptop_lid only) ----------------------------
        std::vector<PixelSet> lid_shapes;
        if (action.object_kind == ShapeKind::laptop_lid) {
            const double theta0 = uniform(trial, -0.8, -0.3);
            const double theta1 = theta0 + uniform(trial, 0.6, 1.0);
            lid_shapes.reserve(static_cast<std::size_t>(N));
            const int hinge_r = obj_shape.bbox_min().first - 1;  // one row above the base
            for (int t = 0; t < N; ++t) {
                const double a = move_frames > 0
                                     ? static_cast<double>(std::max(0, t - t_c)) / move_frames
                                     : 0.0;
                PixelSet lid = make_lid(lid_h, lid_w, theta0 + (theta1 - theta0) * a);
                for (auto& [dr, dc] : lid.offsets) {
                    dr += hinge_r;
                    (void)dc;
                }
                lid_shapes.push_back(std::move(lid));
            }
        }

        // --- validate the trajectory -------------------------------------
        bool ok = true;
        for (int t = 0; t < N && ok; ++t) {
            const auto& oa = obj_anchor[static_cast<std::size_t>(t)];
            const auto& aa = actor_anchor[static_cast<std::size_t>(t)];
            ok = fits(obj_shape, oa.r, oa.c, H, W) && fits(actor_shape, aa.r, aa.c, H, W) &&
                 !overlaps(actor_shape, aa.r, aa.c, obj_shape, oa.r, oa.c, 0);
            if (ok && !lid_shapes.empty()) {
                ok = fits(lid_shapes[static_cast<std::size_t>(t)], oa.r, oa.c, H, W) &&
                     !overlaps(lid_shapes[static_cast<std::size_t>(t)], oa.r, oa.c, actor_shape,
                               aa.r, aa.c, 0) &&
                     !overlaps(lid_shapes[static_cast<std::size_t>(t)], oa.r, oa.c, obj_shape,
                               oa.r, oa.c, 0);
            }
        }
        if (!ok) continue;

        // --- distractors: static, clear of every moving raster ------------
        std::vector<PixelSet> dist_shapes;
        std::vector<detail::Pose> dist_anchor;
        bool placed_all = true;
        for (int d = 0; d < spec.num_distractors; ++d) {
            PixelSet shape;
            switch (static_cast<int>(uniform_int(trial, 0, 2))) {
                case 0: shape = make_disc(uniform_int(trial, 2, 4)); break;
                case 1: shape = make_rect(uniform_int(trial, 2, 4), uniform_int(trial, 2, 5)); break;
                default: shape = make_l_shape(uniform_int(trial, 2, 4), uniform_int(trial, 2, 4));
            }
            bool placed = false;
            for (int tries = 0; tries < 200 && !placed; ++tries) {
                auto [s0r, s0c] = shape.bbox_min();
                auto [s1r, s1c] = shape.bbox_max();
                const detail::Pose p{uniform_int(trial, 1 - s0r, H - 2 - s1r),
                                     uniform_int(trial, 1 - s0c, W - 2 - s1c)};
                bool clear = true;
                for (int t = 0; t < N && clear; ++t) {
                    const auto& oa = obj_anchor[static_cast<std::size_t>(t)];
                    const auto& aa = actor_anchor[static_cast<std::size_t>(t)];
                    clear = !overlaps(shape, p.r, p.c, obj_shape, oa.r, oa.c, 2) &&
                            !overlaps(shape, p.r, p.c, actor_shape, aa.r, aa.c, 2);
                    if (clear && !lid_shapes.empty())
                        clear = !overlaps(shape, p.r, p.c, lid_shapes[static_cast<std::size_t>(t)],
                                          oa.r, oa.c, 2);
                }
                for (std::size_t e = 0; e < dist_shapes.size() && clear; ++e)
                    clear = !overlaps(shape, p.r, p.c, dist_shapes[e], dist_anchor[e].r,
                                      dist_anchor[e].c, 1);
                if (clear) {
                    dist_shapes.push_back(shape);
                    dist_anchor.push_back(p);
                    placed = true;
                }
            }
            if (!placed) {
                placed_all = false;
                break;
            }
        }
        if (!placed_all) continue;

        // --- commit -------------------------------------------------------
        out.contact_frame = t_c;
        out.velocity = vel;
        out.object.id = "object";
        out.object.role = mask::Role::object;
        out.object.color = object_color;
        out.actor.id = "actor";
        out.actor.role = mask::Role::actor;
        out.actor.color = actor_color;
        for (int t = 0; t < N; ++t) {
            const auto& oa = obj_anchor[static_cast<std::size_t>(t)];
            const auto& aa = actor_anchor[static_cast<std::size_t>(t)];
            out.object.masks.push_back(rasterize(obj_shape, oa.r, oa.c, H, W));
            out.actor.masks.push_back(rasterize(actor_shape, aa.r, aa.c, H, W));
        }
        if (!lid_shapes.empty()) {
            EntityTrack lid;
            lid.id = "part";
            lid.role = mask::Role::part;
            lid.color = sample_object_color(rng);
            for (int t = 0; t < N; ++t) {
                const auto& oa = obj_anchor[static_cast<std::size_t>(t)];
                lid.masks.push_back(
                    rasterize(lid_shapes[static_cast<std::size_t>(t)], oa.r, oa.c, H, W));
            }
            out.part = std::move(lid);
        }
        for (std::size_t d = 0; d < dist_shapes.size(); ++d) {
            EntityTrack e;
            e.id = "distractor_" + std::to_string(d);
            e.role = mask::Role::background;
            e.color = sample_object_color(rng);
            const mask::BinaryMask m =
                rasterize(dist_shapes[d], dist_anchor[d].r, dist_anchor[d].c, H, W);
            e.masks.assign(static_cast<std::size_t>(N), m);
            out.distractors.push_back(std::move(e));
        }
        return out;
    }
    throw PlacementError("plan_scene: could not place actor/object/distractors on a " +
                         std::to_string(H) + "x" + std::to_string(W) + " canvas");
}

inline Clip render_clip(const SceneLayout& layout, std::string clip_id) {
    Clip clip;
    clip.action = layout.action;
    clip.clip_id = std::move(clip_id);
    const int H = layout.height, W = layout.width, N = layout.num_frames;
    for (int t = 0; t < N; ++t) {
        mask::Image8 frame = layout.background;
        mask::SegmentationMap seg(H, W);
        auto paint = [&](const EntityTrack& e) {
            const auto& m = e.masks[static_cast<std::size_t>(t)];
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c)
                    if (m.at(r, c)) {
                        frame.set(r, c, e.color);
                        if (e.role != mask::Role::background) seg.set(r, c, e.role);
                    }
        };
        for (const auto& d : layout.distractors) paint(d);
        paint(layout.object);
        if (layout.part) paint(*layout.part);
        paint(layout.actor);
        clip.frames.push_back(std::move(frame));
        clip.seg_maps.push_back(std::move(seg));
    }
    clip.target_position_mask = clip.seg_maps.back().role_mask(mask::Role::object);

    for (int t = 0; t < N; ++t) {
        const auto& seg = clip.seg_maps[static_cast<std::size_t>(t)];
        const auto a = seg.role_mask(mask::Role::actor);
        const auto o = seg.role_mask(mask::Role::object);
        if (!mask::mask_and(a, o).empty())
            throw std::logic_error("render_clip: actor and object overlap at frame " +
                                   std::to_string(t));
        if (a.empty() || o.empty())
            throw std::logic_error("render_clip: actor or object missing at frame " +
                                   std::to_string(t));
    }
    return clip;
}

inline Clip generate_clip(const SceneSpec& spec, const ActionLabel& action, std::uint64_t seed) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(seed));
    return render_clip(plan_scene(spec, action, seed), buf);
}

// Uniformly samples an action from the spec's sets.
inline ActionLabel sample_action(const SceneSpec& spec, Rng& rng) {
    ActionLabel a;
    a.verb = spec.action_set[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<int>(spec.action_set.size()) - 1))];
    a.object_kind = spec.object_shape_set[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<int>(spec.object_shape_set.size()) - 1))];
    return a;
}

}  // namespace ivgen::scene
