#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivgen/dataset.hpp"
#include "ivgen/mask.hpp"
#include "ivgen/scene.hpp"

namespace ivgen::curation {

struct MotionScore {
    std::string clip_id;
    double score = 0.0;  // pixels/frame, summed over actor and object tracks
};

struct TrackStats {
    std::string object_id;
    double temporal_miou = 1.0;
};

struct Centroid {
    double r = 0.0, c = 0.0;
};

inline Centroid centroid(const mask::BinaryMask& m) {
    double sr = 0.0, sc = 0.0;
    long n = 0;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c)) {
                sr += r;
                sc += c;
                ++n;
            }
    if (n == 0) throw std::invalid_argument("centroid: empty mask");
    return {sr / n, sc / n};
}

// Mean consecutive-frame centroid displacement, summed over the actor and
// object tracks. A role absent on either side of a pair contributes 0 for
// that pair; the mean is over all N-1 pairs.
inline MotionScore motion_score(const scene::Clip& clip) {
    const int n = clip.num_frames();
    if (n < 2) throw std::invalid_argument("motion_score: clip needs at least 2 frames");
    double total = 0.0;
    for (mask::Role role : {mask::Role::actor, mask::Role::object}) {
        double sum = 0.0;
        for (int t = 0; t + 1 < n; ++t) {
            const auto a = clip.seg_maps[static_cast<std::size_t>(t)].role_mask(role);
            const auto b = clip.seg_maps[static_cast<std::size_t>(t + 1)].role_mask(role);
            if (a.empty() || b.empty()) continue;
            const Centroid ca = centroid(a), cb = centroid(b);
            sum += std::hypot(cb.r - ca.r, cb.c - ca.c);
        }
        total += sum / (n - 1);
    }
    return {clip.clip_id, total};
}

// Nearest-rank percentile: the value at rank max(1, ceil(pct/100 * n)) of the
// ascending order statistics.
inline double percentile_nearest_rank(std::vector<double> values, double pct) {
    if (values.empty()) throw std::invalid_argument("percentile: empty input");
    if (pct < 0.0 || pct > 100.0) throw std::invalid_argument("percentile: pct out of [0,100]");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<long>(values.size());
    const long rank = std::max<long>(1, static_cast<long>(std::ceil(pct / 100.0 * n)));
    return values[static_cast<std::size_t>(rank - 1)];
}

struct FilterResult {
    std::vector<MotionScore> kept;
    std::vector<MotionScore> dropped;
    double threshold = 0.0;
};

// Drops clips whose score falls strictly below the pct-th percentile
// (nearest-rank). Stable partition of the input order.
inline FilterResult percentile_filter(const std::vector<MotionScore>& scores, double pct = 5.0) {
    if (scores.empty()) throw std::invalid_argument("percentile_filter: empty input");
    std::vector<double> vals;
    vals.reserve(scores.size());
    for (const auto& s : scores) vals.push_back(s.score);
    FilterResult out;
    out.threshold = percentile_nearest_rank(std::move(vals), pct);
    for (const auto& s : scores)
        (s.score < out.threshold ? out.dropped : out.kept).push_back(s);
    return out;
}

// mean_t IoU(mask_t, mask_{t+stride}); IoU of two empty masks is 1.
inline double temporal_miou(const std::vector<mask::BinaryMask>& seq, int stride) {
    if (stride < 1) throw std::invalid_argument("temporal_miou: stride must be >= 1");
    const auto n = static_cast<int>(seq.size());
    if (n < stride + 1)
        throw std::invalid_argument("temporal_miou: sequence shorter than stride+1");
    double sum = 0.0;
    for (int t = 0; t + stride < n; ++t)
        sum += mask::iou(seq[static_cast<std::size_t>(t)],
                         seq[static_cast<std::size_t>(t + stride)]);
    return sum / (n - stride);
}

inline int default_stride(int num_frames) { return (num_frames + 3) / 4; }

using MaskSequence = std::pair<std::string, std::vector<mask::BinaryMask>>;

inline std::vector<TrackStats> track_stats(const std::vector<MaskSequence>& seqs, int stride) {
    std::vector<TrackStats> stats;
    stats.reserve(seqs.size());
    for (const auto& [id, seq] : seqs) stats.push_back({id, temporal_miou(seq, stride)});
    return stats;
}

// Object ids with temporal mIoU strictly below threshold, most-moving first
// (ascending mIoU, id as tie-break).
inline std::vector<std::string> identify_manipulated(const std::vector<MaskSequence>& seqs,
                                                     int stride, double threshold) {
    std::vector<TrackStats> stats = track_stats(seqs, stride);
    std::sort(stats.begin(), stats.end(), [](const TrackStats& a, const TrackStats& b) {
        if (a.temporal_miou != b.temporal_miou) return a.temporal_miou < b.temporal_miou;
        return a.object_id < b.object_id;
    });
    std::vector<std::string> out;
    for (const auto& s : stats)
        if (s.temporal_miou < threshold) out.push_back(s.object_id);
    return out;
}

// Literal template; the unconditional "an" is intentional. fix_article=true
// switches to standard a/an selection instead.
inline std::string prompt_from_labels(const std::string& verb, const std::string& object_kind,
                                      bool fix_article = false) {
    if (verb.empty() || object_kind.empty())
        throw std::invalid_argument("prompt_from_labels: empty label");
    std::string article = "an";
    if (fix_article) {
        const char c = static_cast<char>(std::tolower(object_kind.front()));
        article = (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') ? "an" : "a";
    }
    return "a hand " + verb + " " + article + " " + object_kind;
}

// ---------------------------------------------------------------------------
// Disk pipeline: score every clip in a dataset, percentile-filter, tag
// manipulated tracks, and write a curated manifest (JSON lines).
// ---------------------------------------------------------------------------

struct CuratedEntry {
    std::string clip_id;
    std::string path;
    std::string prompt;
    double motion_score = 0.0;
    std::vector<std::string> manipulated_ids;
    bool kept = true;
};

struct CurationConfig {
    double percentile = 5.0;
    int stride = 0;  // 0 = default_stride(N)
    double miou_threshold = 0.7;
};

inline void write_curated_manifest(const std::vector<CuratedEntry>& entries,
                                   const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("write_curated_manifest: cannot open " + path.string());
    for (const auto& e : entries) {
        nlohmann::ordered_json j{{"clip_id", e.clip_id},       {"path", e.path},
                                 {"prompt", e.prompt},         {"motion_score", e.motion_score},
                                 {"manipulated", e.manipulated_ids}, {"kept", e.kept}};
        out << j.dump() << "\n";
    }
}

inline std::vector<CuratedEntry> read_curated_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_curated_manifest: cannot open " + path.string());
    std::vector<CuratedEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        CuratedEntry e;
        e.clip_id = j.at("clip_id").get<std::string>();
        e.path = j.at("path").get<std::string>();
        e.prompt = j.at("prompt").get<std::string>();
        e.motion_score = j.at("motion_score").get<double>();
        e.manipulated_ids = j.at("manipulated").get<std::vector<std::string>>();
        e.kept = j.at("kept").get<bool>();
        entries.push_back(std::move(e));
    }
    return entries;
}

inline std::vector<CuratedEntry> curate_dataset(const std::filesystem::path& dataset_dir,
                                                const std::filesystem::path& out_manifest,
                                                const CurationConfig& cfg = {}) {
    const dataset::Manifest manifest = dataset::read_manifest(dataset_dir / "manifest.jsonl");
    if (manifest.entries.empty()) throw std::runtime_error("curate_dataset: empty manifest");

    std::vector<CuratedEntry> entries;
    std::vector<MotionScore> scores;
    for (const auto& me : manifest.entries) {
        const scene::Clip clip = dataset::load_clip(dataset_dir / me.path);
        scores.push_back(motion_score(clip));

        const int stride = cfg.stride > 0 ? cfg.stride : default_stride(clip.num_frames());
        std::vector<MaskSequence> seqs;
        for (mask::Role role : {mask::Role::object, mask::Role::part}) {
            std::vector<mask::BinaryMask> seq;
            bool any = false;
            for (const auto& seg : clip.seg_maps) {
                seq.push_back(seg.role_mask(role));
                any = any || !seq.back().empty();
            }
            if (any) seqs.emplace_back(mask::role_name(role), std::move(seq));
        }
        CuratedEntry e;
        e.clip_id = me.clip_id;
        e.path = me.path;
        e.prompt = me.prompt;
        e.motion_score = scores.back().score;
        e.manipulated_ids = identify_manipulated(seqs, stride, cfg.miou_threshold);
        entries.push_back(std::move(e));
    }

    const FilterResult fr = percentile_filter(scores, cfg.percentile);
    for (auto& e : entries) e.kept = e.motion_score >= fr.threshold;
    write_curated_manifest(entries, out_manifest);
    return entries;
}

}  // namespace ivgen::curation
