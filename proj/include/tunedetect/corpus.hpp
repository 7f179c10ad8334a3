#pragma once

// Pair datasets and their manifests.
//
// manifest.csv columns:
//   dataset_tag,pair_id,negative_path,positive_path,kind,source_id,split
// Paths are relative to the manifest's directory. manifest.params holds the
// generation parameters (key = value) next to it.

#include <functional>
#include <iostream>
#include <map>
#include <set>

#include "tunedetect/nn/checkpoint.hpp"
#include "tunedetect/random.hpp"
#include "tunedetect/synth.hpp"

namespace tunedetect {

using LogFn = std::function<void(const std::string&)>;

inline void log_stderr(const std::string& msg) { std::cerr << msg << '\n'; }

struct ManifestEntry {
    std::string pair_id;
    std::string negative_path;
    std::string positive_path;
    std::string kind;  // vocal_pair | song_pair
    std::string source_id;
    std::string split;  // train | val | test
    bool operator==(const ManifestEntry&) const = default;
};

inline const std::set<std::string>& dataset_tags() {
    static const std::set<std::string> tags{"D1", "D2", "D3", "D4", "SYNTH"};
    return tags;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

inline std::vector<std::string> csv_row(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

}  // namespace detail

inline constexpr const char* kManifestHeader = "dataset_tag,pair_id,negative_path,positive_path,kind,source_id,split";

struct DatasetManifest {
    std::string tag = "SYNTH";
    std::vector<ManifestEntry> entries;
    std::filesystem::path root;  // directory that relative paths resolve against
    KeyValues params;

    [[nodiscard]] std::filesystem::path resolve(const std::string& rel) const { return root / rel; }

    [[nodiscard]] std::vector<ManifestEntry> select(const std::string& split, const std::string& kind = {}) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == split && (kind.empty() || e.kind == kind)) out.push_back(e);
        return out;
    }

    [[nodiscard]] std::string to_csv() const {
        std::string out = std::string(kManifestHeader) + "\n";
        for (const auto& e : entries)
            out += detail::csv_field(tag) + "," + detail::csv_field(e.pair_id) + "," + detail::csv_field(e.negative_path) +
                   "," + detail::csv_field(e.positive_path) + "," + e.kind + "," + detail::csv_field(e.source_id) + "," +
                   e.split + "\n";
        return out;
    }

    /// Writes manifest.csv and manifest.params into `root`.
    void save() const {
        nn::write_bytes(root / "manifest.csv", to_csv());
        nn::write_bytes(root / "manifest.params", params.to_text());
    }

    /// `path` is a manifest CSV or a directory containing manifest.csv.
    static DatasetManifest load(const std::filesystem::path& path) {
        const auto file = std::filesystem::is_directory(path) ? path / "manifest.csv" : path;
        DatasetManifest m;
        m.root = file.parent_path();
        const auto lines = split(read_file_bytes(file), '\n');
        if (lines.empty() || trim(lines[0]) != kManifestHeader)
            throw FormatError(file.string() + ": unexpected manifest header");
        bool first = true;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (trim(lines[i]).empty()) continue;
            auto f = detail::csv_row(lines[i]);
            if (f.size() != 7) throw FormatError(file.string() + ":" + std::to_string(i + 1) + ": expected 7 columns");
            if (first) m.tag = f[0];
            else if (f[0] != m.tag) throw FormatError(file.string() + ": mixed dataset tags");
            first = false;
            m.entries.push_back({f[1], f[2], f[3], f[4], f[5], f[6]});
        }
        if (!dataset_tags().count(m.tag)) throw FormatError(file.string() + ": unknown dataset tag " + m.tag);
        const auto params = m.root / "manifest.params";
        if (std::filesystem::exists(params) && file.filename() == "manifest.csv") m.params = KeyValues::load(params);
        m.validate();
        return m;
    }

    /// Kinds and splits are from the allowed sets; no source spans two splits.
    void validate() const {
        std::map<std::string, std::string> split_of;
        std::set<std::string> ids;
        for (const auto& e : entries) {
            if (e.kind != "vocal_pair" && e.kind != "song_pair") throw FormatError("manifest: bad kind " + e.kind);
            if (e.split != "train" && e.split != "val" && e.split != "test")
                throw FormatError("manifest: bad split " + e.split);
            if (!ids.insert(e.pair_id).second) throw FormatError("manifest: duplicate pair_id " + e.pair_id);
            auto [it, inserted] = split_of.emplace(e.source_id, e.split);
            if (!inserted && it->second != e.split)
                throw FormatError("manifest: source " + e.source_id + " appears in splits " + it->second + " and " +
                                  e.split);
        }
    }
};

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Deterministic group split: groups are sorted, shuffled with `seed`, and the
/// first round(n * val_fraction) become validation (at least one when the
/// fraction is positive and two or more groups exist).
inline std::map<std::string, std::string> split_groups(std::vector<std::string> groups, double val_fraction,
                                                       std::uint64_t seed) {
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    std::mt19937_64 rng(seed);
    shuffle_in_place(groups, rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(static_cast<double>(groups.size()) * val_fraction));
    if (val_fraction > 0 && n_val == 0 && groups.size() >= 2) n_val = 1;
    n_val = std::min(n_val, groups.size() > 1 ? groups.size() - 1 : 0);
    std::map<std::string, std::string> out;
    for (std::size_t i = 0; i < groups.size(); ++i) out[groups[i]] = i < n_val ? "val" : "train";
    return out;
}

inline std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir, bool recursive) {
    std::vector<std::filesystem::path> out;
    auto take = [&](const std::filesystem::directory_entry& e) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && ext == ".wav") out.push_back(e.path());
    };
    if (recursive)
        for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) take(e);
    else
        for (const auto& e : std::filesystem::directory_iterator(dir)) take(e);
    std::sort(out.begin(), out.end());
    return out;
}

/// Performer tag: the first subdirectory below `root`, else the file-name
/// prefix before the first '_', else the whole stem.
inline std::string performer_tag(const std::filesystem::path& file, const std::filesystem::path& root) {
    const auto rel = std::filesystem::relative(file, root);
    if (std::distance(rel.begin(), rel.end()) > 1) return rel.begin()->string();
    const auto stem = file.stem().string();
    const auto us = stem.find('_');
    return us == std::string::npos || us == 0 ? stem : stem.substr(0, us);
}

inline std::string relative_string(const std::filesystem::path& p, const std::filesystem::path& root) {
    return std::filesystem::relative(p, root).generic_string();
}

inline std::string sanitize_id(std::string s) {
    for (auto& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    return s;
}

// ---------------------------------------------------------------------------
// D1: isolated vocal recordings
// ---------------------------------------------------------------------------

struct D1Config {
    double duration_s = 10;
    double val_fraction = 0.1;
    std::uint64_t seed = 1;
    PitchParams pitch;
};

/// Each recording is padded/trimmed to `duration_s` (v_n) and retuned (v_p);
/// splits are by performer.
inline DatasetManifest build_d1(const std::filesystem::path& vocal_dir, const std::filesystem::path& out_dir,
                                const D1Config& cfg = {}, const LogFn& log = log_stderr) {
    if (!std::filesystem::is_directory(vocal_dir)) throw Error("build_d1: not a directory: " + vocal_dir.string());
    const auto files = list_wavs(vocal_dir, true);
    if (files.empty()) throw Error("build_d1: no WAV files under " + vocal_dir.string());
    std::vector<std::string> performers;
    for (const auto& f : files) performers.push_back(performer_tag(f, vocal_dir));
    const auto split_of = split_groups(performers, cfg.val_fraction, cfg.seed);

    DatasetManifest m;
    m.tag = "D1";
    m.root = out_dir;
    m.params.set("dataset", "D1");
    m.params.set("source_dir", std::filesystem::absolute(vocal_dir).string());
    m.params.set("duration_s", cfg.duration_s);
    m.params.set("val_fraction", cfg.val_fraction);
    m.params.set("seed", cfg.seed, 0);
    for (std::size_t i = 0; i < files.size(); ++i) {
        AudioBuffer v;
        try {
            v = to_analysis_rate(load_wav(files[i]));
        } catch (const Error& e) {
            log("skip " + files[i].string() + ": " + e.what());
            continue;
        }
        v = pad_or_trim(v, cfg.duration_s);
        const std::string perf = sanitize_id(performers[i]);
        const std::string id = sanitize_id(relative_string(files[i], vocal_dir));
        const auto neg = out_dir / "audio" / perf / (id + ".neg.wav");
        const auto pos = out_dir / "audio" / perf / (id + ".pos.wav");
        save_wav(neg, v);
        save_wav(pos, autotune(v, cfg.pitch));
        m.entries.push_back({id, relative_string(neg, out_dir), relative_string(pos, out_dir), "vocal_pair",
                             performers[i], split_of.at(performers[i])});
    }
    if (m.entries.empty()) throw Error("build_d1: no readable recordings in " + vocal_dir.string());
    m.validate();
    m.save();
    return m;
}

// ---------------------------------------------------------------------------
// D2/D3/D4: stem collections, one directory per song
// ---------------------------------------------------------------------------

struct StemPair {
    std::string song;
    AudioBuffer vocal;
    AudioBuffer accompaniment;
};

/// `song_dir/vocals.wav` plus `accompaniment.wav`, or the sum of whichever of
/// drums.wav, bass.wav, other.wav exist.
inline StemPair load_stems(const std::filesystem::path& song_dir) {
    StemPair s;
    s.song = song_dir.filename().string();
    const auto vocal = song_dir / "vocals.wav";
    if (!std::filesystem::exists(vocal)) throw Error("missing stem " + vocal.string());
    s.vocal = to_analysis_rate(load_wav(vocal));
    if (std::filesystem::exists(song_dir / "accompaniment.wav")) {
        s.accompaniment = to_analysis_rate(load_wav(song_dir / "accompaniment.wav"));
    } else {
        bool any = false;
        s.accompaniment = {{}, kSampleRate};
        for (const char* name : {"drums.wav", "bass.wav", "other.wav"}) {
            if (!std::filesystem::exists(song_dir / name)) continue;
            auto part = to_analysis_rate(load_wav(song_dir / name));
            if (part.size() > s.accompaniment.size()) s.accompaniment.samples.resize(part.size(), 0.0f);
            for (std::size_t i = 0; i < part.size(); ++i) s.accompaniment.samples[i] += part.samples[i];
            any = true;
        }
        if (!any) throw Error("missing accompaniment stems in " + song_dir.string());
    }
    return s;
}

struct StemConfig {
    double val_fraction = 0.1;  // ignored for the test partition
    std::uint64_t seed = 1;
    PitchParams pitch;
};

struct StemManifests {
    DatasetManifest vocals;  // D2 (or the vocal side of D4)
    DatasetManifest songs;   // D3 or D4
};

namespace detail {

inline StemManifests build_from_stems(const std::filesystem::path& stem_dir, const std::filesystem::path& out_dir,
                                      bool test_partition, const StemConfig& cfg, const LogFn& log) {
    if (!std::filesystem::is_directory(stem_dir)) throw Error("stem directory not found: " + stem_dir.string());
    std::vector<std::filesystem::path> songs;
    for (const auto& e : std::filesystem::directory_iterator(stem_dir))
        if (e.is_directory()) songs.push_back(e.path());
    std::sort(songs.begin(), songs.end());
    if (songs.empty()) throw Error("no song directories under " + stem_dir.string());
    std::vector<std::string> names;
    for (const auto& s : songs) names.push_back(s.filename().string());
    const auto split_of = split_groups(names, test_partition ? 0.0 : cfg.val_fraction, cfg.seed);

    StemManifests out;
    out.vocals.tag = test_partition ? "D4" : "D2";
    out.songs.tag = test_partition ? "D4" : "D3";
    out.vocals.root = out_dir / (test_partition ? "D4_vocals" : "D2");
    out.songs.root = out_dir / (test_partition ? "D4" : "D3");
    for (auto* m : {&out.vocals, &out.songs}) {
        m->params.set("dataset", m->tag);
        m->params.set("source_dir", std::filesystem::absolute(stem_dir).string());
        m->params.set("val_fraction", test_partition ? 0.0 : cfg.val_fraction);
        m->params.set("seed", cfg.seed, 0);
    }
    const auto audio = out_dir / "audio";
    for (const auto& dir : songs) {
        StemPair st;
        try {
            st = load_stems(dir);
        } catch (const Error& e) {
            log("skip " + dir.string() + ": " + e.what());
            continue;
        }
        const std::string id = sanitize_id(st.song);
        const std::string split = test_partition ? "test" : split_of.at(st.song);
        const AudioBuffer vp = autotune(st.vocal, cfg.pitch);
        const auto vn_path = audio / id / "vocal.neg.wav";
        const auto vp_path = audio / id / "vocal.pos.wav";
        const auto xn_path = audio / id / "song.neg.wav";
        const auto xp_path = audio / id / "song.pos.wav";
        save_wav(vn_path, st.vocal);
        save_wav(vp_path, vp);
        save_wav(xn_path, remix(st.vocal, st.accompaniment));
        save_wav(xp_path, remix(vp, st.accompaniment));
        out.vocals.entries.push_back({id + "-vocal", relative_string(vn_path, out.vocals.root),
                                      relative_string(vp_path, out.vocals.root), "vocal_pair", st.song, split});
        out.songs.entries.push_back({id + "-song", relative_string(xn_path, out.songs.root),
                                     relative_string(xp_path, out.songs.root), "song_pair", st.song, split});
    }
    if (out.songs.entries.empty()) throw Error("no usable stem pairs under " + stem_dir.string());
    out.vocals.save();
    out.songs.save();
    return out;
}

}  // namespace detail

/// D2 (vocal pairs) and D3 (song pairs) from the training partition.
inline StemManifests build_d2_d3(const std::filesystem::path& stem_dir, const std::filesystem::path& out_dir,
                                 const StemConfig& cfg = {}, const LogFn& log = log_stderr) {
    return detail::build_from_stems(stem_dir, out_dir, false, cfg, log);
}

/// D4: song pairs from the test partition, every entry split = test.
inline DatasetManifest build_d4(const std::filesystem::path& stem_dir, const std::filesystem::path& out_dir,
                                const StemConfig& cfg = {}, const LogFn& log = log_stderr) {
    return detail::build_from_stems(stem_dir, out_dir, true, cfg, log).songs;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SynthCorpusConfig {
    std::size_t n_train = 200;
    std::size_t n_val = 50;
    std::size_t n_test = 50;
    std::size_t pairs_per_performer = 5;
    double clip_s = 10;       // train and val clips
    double test_song_s = 30;  // test songs span several segments
    bool with_accompaniment = true;
    double min_label_validity = 0.95;
    std::uint64_t seed = 1;
    PitchParams pitch;

    [[nodiscard]] KeyValues to_keyvalues() const {
        KeyValues kv;
        kv.set("dataset", "SYNTH");
        kv.set("n_train", n_train);
        kv.set("n_val", n_val);
        kv.set("n_test", n_test);
        kv.set("pairs_per_performer", pairs_per_performer);
        kv.set("clip_s", clip_s);
        kv.set("test_song_s", test_song_s);
        kv.set("with_accompaniment", with_accompaniment);
        kv.set("min_label_validity", min_label_validity);
        kv.set("seed", seed, 0);
        kv.set("pitch.fmin", pitch.fmin);
        kv.set("pitch.fmax", pitch.fmax);
        kv.set("pitch.frame_size", pitch.frame_size);
        kv.set("pitch.hop", pitch.hop);
        return kv;
    }

};

inline SynthCorpusConfig synth_corpus_config_from(const KeyValues& kv, SynthCorpusConfig c = {}) {
    c.n_train = kv.get_uint("n_train", c.n_train);
    c.n_val = kv.get_uint("n_val", c.n_val);
    c.n_test = kv.get_uint("n_test", c.n_test);
    c.pairs_per_performer = kv.get_uint("pairs_per_performer", c.pairs_per_performer);
    c.clip_s = kv.get_double("clip_s", c.clip_s);
    c.test_song_s = kv.get_double("test_song_s", c.test_song_s);
    c.with_accompaniment = kv.get_bool("with_accompaniment", c.with_accompaniment);
    c.min_label_validity = kv.get_double("min_label_validity", c.min_label_validity);
    c.seed = kv.get_uint("seed", c.seed);
    c.pitch.fmin = kv.get_double("pitch.fmin", c.pitch.fmin);
    c.pitch.fmax = kv.get_double("pitch.fmax", c.pitch.fmax);
    c.pitch.frame_size = kv.get_uint("pitch.frame_size", c.pitch.frame_size);
    c.pitch.hop = kv.get_uint("pitch.hop", c.pitch.hop);
    return c;
}

/// Median absolute distance (cents) of voiced frames to the nearest note;
/// NaN when nothing is voiced.
inline double median_cents_off(const PitchTrack& t) {
    std::vector<double> v;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t.voiced(i)) v.push_back(std::abs(cents_off_note(t.f0[i])));
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
}

struct SynthCorpusReport {
    DatasetManifest manifest;
    std::size_t pairs = 0;
    std::size_t label_valid = 0;  // pairs whose positive sits closer to the note grid
};

/// Voices and accompaniments derive from per-pair seeds, so every pair is
/// reproducible on its own. Throws when fewer than `min_label_validity` of
/// the pairs have a positive closer to exact pitches than its negative.
inline SynthCorpusReport build_synth_corpus(const std::filesystem::path& out_dir, const SynthCorpusConfig& cfg,
                                            const LogFn& log = log_stderr) {
    if (cfg.n_train + cfg.n_val + cfg.n_test < 2) throw DomainError("build_synth_corpus: need at least 2 pairs");
    if (cfg.pairs_per_performer == 0) throw DomainError("build_synth_corpus: pairs_per_performer must be positive");
    SynthCorpusReport rep;
    rep.manifest.tag = "SYNTH";
    rep.manifest.root = out_dir;
    rep.manifest.params = cfg.to_keyvalues();

    struct Part {
        const char* split;
        std::size_t count;
        double seconds;
    };
    const std::array<Part, 3> parts{{{"train", cfg.n_train, cfg.clip_s},
                                     {"val", cfg.n_val, cfg.clip_s},
                                     {"test", cfg.n_test, cfg.test_song_s}}};
    std::size_t performer = 0;
    std::size_t pair_no = 0;
    for (const auto& part : parts) {
        std::mt19937_64 perf_rng;
        int low = 0, high = 0;
        std::array<double, 3> formants{};
        for (std::size_t k = 0; k < part.count; ++k, ++pair_no) {
            if (k % cfg.pairs_per_performer == 0) {
                // Voice type of a new performer: range and formants.
                perf_rng.seed(cfg.seed * 1000003ULL + performer++);
                low = 48 + static_cast<int>(perf_rng() % 12);
                high = low + 14;
                formants = {uniform(perf_rng, 500, 850), uniform(perf_rng, 1000, 1500), uniform(perf_rng, 2300, 3000)};
            }
            const std::string source = "synth-p" + std::to_string(performer - 1);
            char idbuf[32];
            std::snprintf(idbuf, sizeof idbuf, "synth-%05zu", pair_no);
            const std::string id = idbuf;
            std::mt19937_64 rng(cfg.seed * 0x100000001b3ULL + pair_no);
            const auto spec = random_voice_spec(rng, part.seconds, low, high, formants);
            const AudioBuffer vn = synth_vocal(spec);
            const auto at = autotune_detailed(vn, cfg.pitch);
            const AudioBuffer& vp = at.output;
            const double neg_off = median_cents_off(at.source_track);
            const double pos_off = median_cents_off(pyin_track(vp, cfg.pitch));
            ++rep.pairs;
            if (pos_off < neg_off) ++rep.label_valid;
            else log("label check failed for " + id + ": positive " + fmt_fixed(pos_off, 2) + " cents, negative " +
                     fmt_fixed(neg_off, 2));

            const auto dir = out_dir / "audio" / source;
            const auto vn_path = dir / (id + ".vocal.neg.wav");
            const auto vp_path = dir / (id + ".vocal.pos.wav");
            save_wav(vn_path, vn);
            save_wav(vp_path, vp);
            rep.manifest.entries.push_back({id + "-vocal", relative_string(vn_path, out_dir),
                                            relative_string(vp_path, out_dir), "vocal_pair", source, part.split});
            if (cfg.with_accompaniment) {
                AccompanimentSpec as;
                as.root_midi = 40 + static_cast<int>(rng() % 12);
                as.bpm = uniform(rng, 85, 135);
                as.duration_s = part.seconds;
                as.seed = rng();
                const AudioBuffer acc = synth_accompaniment(as);
                const auto a_path = dir / (id + ".accompaniment.wav");
                const auto xn_path = dir / (id + ".song.neg.wav");
                const auto xp_path = dir / (id + ".song.pos.wav");
                save_wav(a_path, acc);
                save_wav(xn_path, remix(vn, acc));
                save_wav(xp_path, remix(vp, acc));
                rep.manifest.entries.push_back({id + "-song", relative_string(xn_path, out_dir),
                                                relative_string(xp_path, out_dir), "song_pair", source, part.split});
            }
        }
    }
    rep.manifest.params.set("label_valid_pairs", rep.label_valid);
    rep.manifest.validate();
    rep.manifest.save();
    const double frac = static_cast<double>(rep.label_valid) / static_cast<double>(rep.pairs);
    if (frac < cfg.min_label_validity)
        throw Error("synthetic corpus failed label validity: " + std::to_string(rep.label_valid) + "/" +
                    std::to_string(rep.pairs) + " pairs have the positive closer to exact pitches");
    return rep;
}

}  // namespace tunedetect
