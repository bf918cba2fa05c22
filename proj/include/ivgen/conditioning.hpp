#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivgen/codec.hpp"
#include "ivgen/mask.hpp"
#include "ivgen/rng.hpp"
#include "ivgen/scene.hpp"
#include "ivgen/tensor.hpp"

// Conditioning assembly for the two generation stages. Every bundle carries a
// (N, h, w, 2*c_z) block that is concatenated channel-wise with the noise
// latent at the model input: channels [0, c_z) hold the encoded first frame,
// channels [c_z, 2*c_z) hold the mask / trajectory encoding.

namespace ivgen::pipeline {

enum class LayoutTag { tt_gen, pt_gen, stage2 };

inline const char* layout_name(LayoutTag t) {
    switch (t) {
        case LayoutTag::tt_gen: return "tt_gen";
        case LayoutTag::pt_gen: return "pt_gen";
        case LayoutTag::stage2: return "stage2";
    }
    return "?";
}

inline LayoutTag layout_from_name(const std::string& name) {
    if (name == "tt_gen") return LayoutTag::tt_gen;
    if (name == "pt_gen") return LayoutTag::pt_gen;
    if (name == "stage2") return LayoutTag::stage2;
    throw std::invalid_argument("unknown conditioning layout: " + name);
}

struct ConditioningBundle {
    Tensor<float> per_frame_latents;  // (N, h, w, 2*c_z)
    std::vector<int> context_rows;    // rows into the model's verb table; empty = none
    LayoutTag layout_tag = LayoutTag::stage2;
};

// A mask-based interaction trajectory: one segmentation map per frame.
struct Trajectory {
    std::vector<mask::SegmentationMap> seg_maps;

    int length() const { return static_cast<int>(seg_maps.size()); }
    int height() const { return seg_maps.empty() ? 0 : seg_maps[0].height; }
    int width() const { return seg_maps.empty() ? 0 : seg_maps[0].width; }

    void validate() const {
        if (seg_maps.empty()) throw std::invalid_argument("Trajectory: no frames");
        for (const auto& s : seg_maps)
            if (s.height != height() || s.width != width())
                throw std::invalid_argument("Trajectory: non-uniform frame dimensions");
    }
};

inline Trajectory trajectory_of(const scene::Clip& clip) {
    Trajectory t;
    t.seg_maps = clip.seg_maps;
    t.validate();
    return t;
}

// Keeps only the actor role; object and part pixels revert to background.
inline Trajectory actor_only(const Trajectory& s) {
    Trajectory out = s;
    for (auto& seg : out.seg_maps)
        for (auto& role : seg.roles)
            if (role != static_cast<std::uint8_t>(mask::Role::actor))
                role = static_cast<std::uint8_t>(mask::Role::background);
    return out;
}

// Closed verb set whose row order indexes the model's learned embedding table;
// the embeddings themselves are model parameters trained with the rest of the
// network. Unknown verbs are an error, never a silent fallback row.
struct ActionVocabulary {
    std::vector<std::string> verbs;

    static ActionVocabulary scene_verbs() {
        ActionVocabulary v;
        for (scene::Verb verb : {scene::Verb::push, scene::Verb::pull, scene::Verb::pick_up,
                                 scene::Verb::put_down, scene::Verb::pick_place})
            v.verbs.emplace_back(scene::verb_name(verb));
        return v;
    }

    int size() const { return static_cast<int>(verbs.size()); }

    int row_of(const std::string& verb) const {
        for (int i = 0; i < size(); ++i)
            if (verbs[static_cast<std::size_t>(i)] == verb) return i;
        throw std::invalid_argument("ActionVocabulary: unknown verb '" + verb + "'");
    }
};

namespace detail {

inline void check_image_dims(const mask::Image8& img, int h, int w, const char* what) {
    if (img.height != h || img.width != w)
        throw std::invalid_argument(std::string(what) + ": image dimension mismatch");
}

inline mask::Image8 render_mask(const mask::BinaryMask& m, mask::Rgb color) {
    mask::Image8 img(m.height, m.width);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c)) img.set(r, c, color);
    return img;
}

inline void copy_slot(Tensor<float>& dst, int frame, int ch_base, const Tensor<float>& lat) {
    const int H = lat.dim(0), W = lat.dim(1), C = lat.dim(2);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            for (int ch = 0; ch < C; ++ch) dst.at(frame, r, c, ch_base + ch) = lat.at(r, c, ch);
}

inline Tensor<float> empty_bundle_block(int N, const Tensor<float>& latent) {
    return Tensor<float>({N, latent.dim(0), latent.dim(1), 2 * latent.dim(2)});
}

}  // namespace detail

// Text-conditioned trajectory layout: the encoded first frame and encoded
// color mask image are concatenated channel-wise and duplicated across all N
// frame slots; the verb enters separately through cross-attention.
inline ConditioningBundle build_tt_condition(const codec::ICodec& codec, const mask::Image8& I,
                                             const mask::SegmentationMap& M,
                                             const std::string& verb,
                                             const ActionVocabulary& vocab, int N) {
    if (N < 1) throw std::invalid_argument("build_tt_condition: N must be >= 1");
    if (M.height != I.height || M.width != I.width)
        throw std::invalid_argument("build_tt_condition: image / mask dimension mismatch");
    const int row = vocab.row_of(verb);

    const Tensor<float> f_i = codec.encode_frame(I);
    const Tensor<float> f_m = codec.encode_frame(mask::encode_colors(M));
    ConditioningBundle out;
    out.layout_tag = LayoutTag::tt_gen;
    out.context_rows = {row};
    out.per_frame_latents = detail::empty_bundle_block(N, f_i);
    const int c_z = f_i.dim(2);
    for (int n = 0; n < N; ++n) {
        detail::copy_slot(out.per_frame_latents, n, 0, f_i);
        detail::copy_slot(out.per_frame_latents, n, c_z, f_m);
    }
    return out;
}

// Position-conditioned trajectory layout: the image latent fills every slot;
// the mask block carries the encoded initial object mask in slot 0, the
// encoded target position mask (rendered in object color) in slot N-1, and
// exact zeros in between. No cross-attention context.
inline ConditioningBundle build_pt_condition(const codec::ICodec& codec, const mask::Image8& I,
                                             const mask::SegmentationMap& M,
                                             const mask::BinaryMask& P, int N) {
    if (N < 2) throw std::invalid_argument("build_pt_condition: N must be >= 2");
    if (P.empty()) throw std::invalid_argument("build_pt_condition: empty position mask");
    if (M.height != I.height || M.width != I.width || P.height != I.height ||
        P.width != I.width)
        throw std::invalid_argument("build_pt_condition: dimension mismatch");
    const mask::BinaryMask m0 = M.role_mask(mask::Role::object);

    mask::ColorCodec colors;
    const Tensor<float> f_i = codec.encode_frame(I);
    const Tensor<float> f_first = codec.encode_frame(detail::render_mask(m0, colors.object_color));
    const Tensor<float> f_last = codec.encode_frame(detail::render_mask(P, colors.object_color));

    ConditioningBundle out;
    out.layout_tag = LayoutTag::pt_gen;
    out.per_frame_latents = detail::empty_bundle_block(N, f_i);
    const int c_z = f_i.dim(2);
    for (int n = 0; n < N; ++n) detail::copy_slot(out.per_frame_latents, n, 0, f_i);
    detail::copy_slot(out.per_frame_latents, 0, c_z, f_first);
    detail::copy_slot(out.per_frame_latents, N - 1, c_z, f_last);
    return out;
}

struct AugmentConfig {
    double p = 0.2;
    std::vector<int> kernels{3, 5, 7};
};

struct MorphStats {
    long long considered = 0;  // nonempty role masks seen
    long long morphed = 0;     // of those, how many the morph coin hit
};

namespace detail {

// Applies random_morph to each present role mask of each frame, fixed role
// order, then repaints in the renderer's order (object, part, actor on top).
inline Trajectory augment_trajectory(const Trajectory& s, const AugmentConfig& aug, Rng& rng,
                                     MorphStats* stats) {
    Trajectory out;
    out.seg_maps.reserve(s.seg_maps.size());
    for (const auto& seg : s.seg_maps) {
        std::array<mask::BinaryMask, 3> morphed;
        const std::array<mask::Role, 3> roles{mask::Role::actor, mask::Role::object,
                                              mask::Role::part};
        for (std::size_t i = 0; i < roles.size(); ++i) {
            mask::BinaryMask m = seg.role_mask(roles[i]);
            if (m.empty()) {
                morphed[i] = m;
                continue;
            }
            bool hit = false;
            morphed[i] = mask::random_morph(m, aug.p, aug.kernels, rng, &hit);
            if (stats) {
                ++stats->considered;
                stats->morphed += hit ? 1 : 0;
            }
        }
        mask::SegmentationMap repainted(seg.height, seg.width);
        auto paint = [&](const mask::BinaryMask& m, mask::Role role) {
            for (int r = 0; r < m.height; ++r)
                for (int c = 0; c < m.width; ++c)
                    if (m.at(r, c)) repainted.set(r, c, role);
        };
        paint(morphed[1], mask::Role::object);
        paint(morphed[2], mask::Role::part);
        paint(morphed[0], mask::Role::actor);
        out.seg_maps.push_back(std::move(repainted));
    }
    return out;
}

}  // namespace detail

// Video-stage layout: replicated first-frame latent plus the per-frame encoded
// trajectory. The augmented overload morphs each present role mask
// independently (training-time robustness to imperfect Stage-1 masks).
inline ConditioningBundle build_stage2_condition(const codec::ICodec& codec, const mask::Image8& I,
                                                 const Trajectory& S) {
    S.validate();
    if (S.height() != I.height || S.width() != I.width)
        throw std::invalid_argument("build_stage2_condition: image / trajectory mismatch");
    const int N = S.length();
    const Tensor<float> f_i = codec.encode_frame(I);
    ConditioningBundle out;
    out.layout_tag = LayoutTag::stage2;
    out.per_frame_latents = detail::empty_bundle_block(N, f_i);
    const int c_z = f_i.dim(2);
    for (int n = 0; n < N; ++n) {
        detail::copy_slot(out.per_frame_latents, n, 0, f_i);
        const Tensor<float> f_s =
            codec.encode_frame(mask::encode_colors(S.seg_maps[static_cast<std::size_t>(n)]));
        detail::copy_slot(out.per_frame_latents, n, c_z, f_s);
    }
    return out;
}

inline ConditioningBundle build_stage2_condition(const codec::ICodec& codec, const mask::Image8& I,
                                                 const Trajectory& S, const AugmentConfig& aug,
                                                 Rng& rng, MorphStats* stats = nullptr) {
    S.validate();
    return build_stage2_condition(codec, I, detail::augment_trajectory(S, aug, rng, stats));
}

// ---------------------------------------------------------------------------
// Contact-weighted loss maps
// ---------------------------------------------------------------------------

// Area-average pooling of a binary mask into (H/factor, W/factor) fractions.
inline Tensor<float> downsample_area(const mask::BinaryMask& m, int factor) {
    if (factor < 1 || m.height % factor != 0 || m.width % factor != 0)
        throw std::invalid_argument("downsample_area: dimensions not divisible by factor");
    const int h = m.height / factor, w = m.width / factor;
    Tensor<float> out({h, w});
    const float inv = 1.0f / static_cast<float>(factor * factor);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c)) out.at(r / factor, c / factor) += inv;
    return out;
}

// Per-frame latent-resolution loss weights emphasizing actor/object contact:
// the pixel-space contact map (boundary-dilated intersection of the actor mask
// with the object-and-part mask) is area-pooled to latent resolution and
// mapped through w = 1 + (lambda - 1) * m. lambda = 1 yields all-ones.
inline Tensor<float> contact_weights(const Trajectory& s, float lambda, int factor,
                                     int kernel = 3) {
    s.validate();
    const int h = s.height() / factor, w = s.width() / factor;
    if (factor < 1 || s.height() % factor != 0 || s.width() % factor != 0)
        throw std::invalid_argument("contact_weights: dimensions not divisible by factor");
    Tensor<float> out({s.length(), h, w});
    for (int n = 0; n < s.length(); ++n) {
        const auto& seg = s.seg_maps[static_cast<std::size_t>(n)];
        const mask::BinaryMask m_h = seg.role_mask(mask::Role::actor);
        const mask::BinaryMask m_o = mask::mask_or(seg.role_mask(mask::Role::object),
                                                   seg.role_mask(mask::Role::part));
        const mask::BinaryMask m_c = mask::contact_map(m_h, m_o, kernel);
        const Tensor<float> pooled = mask::weight_map(downsample_area(m_c, factor), lambda);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) out.at(n, r, c) = pooled.at(r, c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Latent video targets
// ---------------------------------------------------------------------------

inline Tensor<float> encode_trajectory(const codec::ICodec& codec, const Trajectory& s) {
    s.validate();
    Tensor<float> out;
    for (int n = 0; n < s.length(); ++n) {
        const Tensor<float> lat =
            codec.encode_frame(mask::encode_colors(s.seg_maps[static_cast<std::size_t>(n)]));
        if (n == 0) out = Tensor<float>({s.length(), lat.dim(0), lat.dim(1), lat.dim(2)});
        detail::copy_slot(out, n, 0, lat);
    }
    return out;
}

inline Tensor<float> encode_frames(const codec::ICodec& codec, const std::vector<mask::Image8>& frames) {
    if (frames.empty()) throw std::invalid_argument("encode_frames: no frames");
    Tensor<float> out;
    for (std::size_t n = 0; n < frames.size(); ++n) {
        const Tensor<float> lat = codec.encode_frame(frames[n]);
        if (n == 0)
            out = Tensor<float>(
                {static_cast<int>(frames.size()), lat.dim(0), lat.dim(1), lat.dim(2)});
        detail::copy_slot(out, static_cast<int>(n), 0, lat);
    }
    return out;
}

// Decodes a sampled latent video back into a trajectory via nearest-color
// quantization; total on arbitrary model output.
inline Trajectory decode_trajectory(const codec::ICodec& codec, const Tensor<float>& latents) {
    const Tensor<float> video = codec.decode_video(latents);
    Trajectory out;
    for (int n = 0; n < video.dim(0); ++n) {
        Tensor<float> frame({video.dim(1), video.dim(2), video.dim(3)});
        std::copy_n(video.data.begin() + static_cast<std::ptrdiff_t>(n * frame.numel()),
                    frame.numel(), frame.data.begin());
        out.seg_maps.push_back(mask::decode_colors(codec::tensor_to_image(frame)));
    }
    return out;
}

inline void validate_bundle(const ConditioningBundle& b, int num_frames, int c_z) {
    const auto& t = b.per_frame_latents;
    if (t.ndim() != 4 || t.dim(0) != num_frames || t.dim(3) != 2 * c_z)
        throw std::invalid_argument("ConditioningBundle: expected (" +
                                    std::to_string(num_frames) + ", h, w, " +
                                    std::to_string(2 * c_z) + "), got " + shape_str(t));
    if (b.layout_tag != LayoutTag::tt_gen && !b.context_rows.empty())
        throw std::invalid_argument("ConditioningBundle: context outside the tt_gen layout");
}

}  // namespace ivgen::pipeline
