#pragma once

// On-disk mel cache for a manifest.
//
//   <dir>/index.csv   mel_path,label,split,kind,source_id,pair_id,segment_index
//   <dir>/mels/<pair_id>.<neg|pos>.<segment_index>.mel
//
// label is 1 for the retuned side of a pair. Only segments that pass the
// energy gate are cached.

#include "tunedetect/corpus.hpp"
#include "tunedetect/features.hpp"
#include "tunedetect/nn/train.hpp"

namespace tunedetect {

struct CachedMel {
    std::string mel_path;  // relative to the cache directory
    int label = 0;
    std::string split, kind, source_id, pair_id;
    std::size_t segment_index = 0;
};

struct FeatureCache {
    std::filesystem::path dir;
    std::vector<CachedMel> items;

    static constexpr const char* kHeader = "mel_path,label,split,kind,source_id,pair_id,segment_index";

    [[nodiscard]] std::string index_csv() const {
        std::string out = std::string(kHeader) + "\n";
        for (const auto& it : items)
            out += it.mel_path + "," + std::to_string(it.label) + "," + it.split + "," + it.kind + "," + it.source_id +
                   "," + it.pair_id + "," + std::to_string(it.segment_index) + "\n";
        return out;
    }

    static FeatureCache load(const std::filesystem::path& dir) {
        FeatureCache c;
        c.dir = dir;
        const auto lines = split(read_file_bytes(dir / "index.csv"), '\n');
        if (lines.empty() || trim(lines[0]) != kHeader) throw FormatError((dir / "index.csv").string() + ": bad header");
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (trim(lines[i]).empty()) continue;
            auto f = split(trim(lines[i]), ',');
            if (f.size() != 7) throw FormatError("feature index line " + std::to_string(i + 1) + ": expected 7 fields");
            c.items.push_back({f[0], std::stoi(f[1]), f[2], f[3], f[4], f[5], std::stoul(f[6])});
        }
        return c;
    }

    /// Mels of one split (and optionally one kind), in index order.
    [[nodiscard]] nn::LabeledMels labeled(const std::string& split, const std::string& kind = {}) const {
        nn::LabeledMels out;
        for (const auto& it : items) {
            if (it.split != split || (!kind.empty() && it.kind != kind)) continue;
            out.mels.push_back(load_mel(dir / it.mel_path));
            out.labels.push_back(it.label);
        }
        return out;
    }
};

/// Segments, gates and caches every song of the selected splits.
inline FeatureCache build_feature_cache(const DatasetManifest& m, const std::filesystem::path& dir,
                                        const std::vector<std::string>& splits = {"train", "val", "test"},
                                        double segment_s = 10, double gate_ratio = kDefaultGateRatio,
                                        const FeatureParams& fp = {}) {
    FeatureCache c;
    c.dir = dir;
    for (const auto& e : m.entries) {
        if (std::find(splits.begin(), splits.end(), e.split) == splits.end()) continue;
        for (int pos = 0; pos < 2; ++pos) {
            const auto audio = to_analysis_rate(load_wav(m.resolve(pos ? e.positive_path : e.negative_path)));
            for (const auto& seg : energy_gate(segment(audio, segment_s), gate_ratio)) {
                const std::string rel = "mels/" + e.pair_id + (pos ? ".pos." : ".neg.") + std::to_string(seg.index) + ".mel";
                save_mel(dir / rel, melspectrogram(seg.buffer, fp), fp);
                c.items.push_back({rel, pos, e.split, e.kind, e.source_id, e.pair_id, seg.index});
            }
        }
    }
    nn::write_bytes(dir / "index.csv", c.index_csv());
    return c;
}

}  // namespace tunedetect
