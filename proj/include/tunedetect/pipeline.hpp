#pragma once

// Detector M(x) -> {y_i}, song verdicts, metrics, the tau_cnt sweep and the
// robustness runner.

#include <cmath>
#include <optional>

#include "tunedetect/augment.hpp"
#include "tunedetect/corpus.hpp"
#include "tunedetect/features.hpp"
#include "tunedetect/nn/checkpoint.hpp"

namespace tunedetect {

inline constexpr const char* kEnvSeparator = "TUNEDETECT_SEPARATOR";

struct DetectorModels {
    nn::Embedder<float> embedder;
    nn::Classifier<float> classifier;

    static DetectorModels load(const std::filesystem::path& embedder_ckpt, const std::filesystem::path& classifier_ckpt) {
        DetectorModels m{nn::load_embedder(embedder_ckpt), nn::load_classifier(classifier_ckpt)};
        if (m.classifier.config().input_dim != m.embedder.config().embedding_dim)
            throw FormatError("classifier input dimension does not match the embedder output");
        return m;
    }
};

struct DetectOptions {
    double segment_s = 10;
    double gate_ratio = kDefaultGateRatio;
    std::string separator;  // shell template with {in} and {out}; empty = input is a vocal
    FeatureParams features;
};

inline DetectOptions detect_options_from(const KeyValues& kv, DetectOptions o = {}) {
    o.segment_s = kv.get_double("segment_s", o.segment_s);
    o.gate_ratio = kv.get_double("gate_ratio", o.gate_ratio);
    o.separator = kv.get_or("separator", o.separator);
    if (auto v = env(kEnvSeparator)) o.separator = *v;
    return o;
}

/// Runs the external separator: input WAV in, isolated vocal WAV out.
inline AudioBuffer separate_vocals(const AudioBuffer& song, const std::string& command) {
    if (command.empty()) throw CodecMissing("separator: no command configured (set " + std::string(kEnvSeparator) + ")");
    TempDir dir("tunedetect-sep");
    const auto in = dir.path() / "mix.wav";
    const auto out = dir.path() / "vocals.wav";
    save_wav(in, song);
    run_command(substitute(substitute(command, "{in}", shell_quote(in.string())), "{out}", shell_quote(out.string())),
                "separator");
    auto v = to_analysis_rate(load_wav(out));
    return v;
}

struct SegmentScore {
    std::size_t index = 0;  // position in the ungated segment sequence
    double likelihood = 0;
};

/// Separation (optional), segmentation, energy gate, features, embedding and
/// classification, in segment order.
inline std::vector<SegmentScore> detect_segments(const AudioBuffer& song, const DetectorModels& models,
                                                 const DetectOptions& opt = {}) {
    AudioBuffer x = to_analysis_rate(song);
    if (!opt.separator.empty()) x = separate_vocals(x, opt.separator);
    std::vector<SegmentScore> out;
    for (const auto& seg : energy_gate(segment(x, opt.segment_s), opt.gate_ratio)) {
        const auto mel = melspectrogram(seg.buffer, opt.features);
        const auto f = nn::embed(models.embedder, mel);
        out.push_back({seg.index, nn::classify(models.classifier, f)});
    }
    return out;
}

inline std::vector<double> likelihoods(const std::vector<SegmentScore>& s) {
    std::vector<double> y;
    for (const auto& v : s) y.push_back(v.likelihood);
    return y;
}

struct SongVerdict {
    std::vector<double> segment_likelihoods;
    std::size_t n_segments = 0;
    double tau_seg = 0.5;
    std::size_t tau_cnt = 1;
    std::size_t positives = 0;
    bool is_autotuned = false;
};

/// Positive iff at least tau_cnt likelihoods exceed tau_seg.
inline SongVerdict song_verdict(std::vector<double> y, double tau_seg = 0.5, std::size_t tau_cnt = 1) {
    if (tau_cnt < 1) throw DomainError("song_verdict: tau_cnt must be at least 1");
    SongVerdict v;
    v.n_segments = y.size();
    v.tau_seg = tau_seg;
    v.tau_cnt = tau_cnt;
    for (double l : y) v.positives += l > tau_seg;
    v.is_autotuned = v.positives >= tau_cnt;
    v.segment_likelihoods = std::move(y);
    return v;
}

/// Fraction mode: tau_cnt = max(1, ceil(fraction * n_segments)).
inline SongVerdict song_verdict_fraction(std::vector<double> y, double tau_seg, double fraction) {
    if (!(fraction > 0 && fraction <= 1)) throw DomainError("song_verdict: fraction must lie in (0, 1]");
    const auto need = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(y.size()) - 1e-12)));
    return song_verdict(std::move(y), tau_seg, need);
}

struct Metrics {
    double precision = 0, recall = 0, accuracy = 0;  // percent
    bool precision_defined = true;                   // false: no positive predictions
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Metrics metrics(const std::vector<bool>& predictions, const std::vector<bool>& labels) {
    if (predictions.size() != labels.size()) throw DomainError("metrics: length mismatch");
    if (predictions.empty()) throw DomainError("metrics: no samples");
    Metrics m;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] && labels[i]) ++m.tp;
        else if (predictions[i]) ++m.fp;
        else if (labels[i]) ++m.fn;
        else ++m.tn;
    }
    m.precision_defined = m.tp + m.fp > 0;
    m.precision = m.precision_defined ? 100.0 * static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
    m.recall = m.tp + m.fn ? 100.0 * static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    m.accuracy = 100.0 * static_cast<double>(m.tp + m.tn) / static_cast<double>(labels.size());
    return m;
}

// ---------------------------------------------------------------------------
// Manifest scoring
// ---------------------------------------------------------------------------

struct SongScores {
    std::string song_id;  // pair_id + ":neg" / ":pos"
    bool label = false;   // true = retuned
    std::vector<SegmentScore> segments;
    std::string provenance;  // augmentation record, when any
};

/// Audio transform applied before detection; receives the song and its
/// position in the scoring order.
using SongTransform = std::function<AudioBuffer(const AudioBuffer&, std::size_t, std::string&)>;

/// Scores both songs of every selected entry, in manifest order.
inline std::vector<SongScores> score_manifest(const DatasetManifest& m, const DetectorModels& models,
                                              const DetectOptions& opt, const std::string& split = "test",
                                              const std::string& kind = "song_pair",
                                              const SongTransform& transform = {}) {
    std::vector<SongScores> out;
    std::size_t k = 0;
    for (const auto& e : m.select(split, kind)) {
        for (int pos = 0; pos < 2; ++pos, ++k) {
            SongScores s;
            s.song_id = e.pair_id + (pos ? ":pos" : ":neg");
            s.label = pos == 1;
            AudioBuffer audio = load_wav(m.resolve(pos ? e.positive_path : e.negative_path));
            if (transform) audio = transform(audio, k, s.provenance);
            s.segments = detect_segments(audio, models, opt);
            out.push_back(std::move(s));
        }
    }
    return out;
}

/// Cache layout: song_id,label,segment_index,likelihood (one row per segment;
/// songs without surviving segments get one row with empty index/likelihood).
inline std::string scores_to_csv(const std::vector<SongScores>& scores) {
    std::string out = "song_id,label,segment_index,likelihood\n";
    for (const auto& s : scores) {
        if (s.segments.empty()) out += s.song_id + "," + (s.label ? "1" : "0") + ",,\n";
        for (const auto& seg : s.segments)
            out += s.song_id + "," + (s.label ? "1" : "0") + "," + std::to_string(seg.index) + "," +
                   fmt_double(seg.likelihood) + "\n";
    }
    return out;
}

inline std::vector<SongScores> scores_from_csv(std::string_view text) {
    std::vector<SongScores> out;
    const auto lines = split(text, '\n');
    if (lines.empty() || trim(lines[0]) != "song_id,label,segment_index,likelihood")
        throw FormatError("likelihood cache: unexpected header");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        auto f = split(trim(lines[i]), ',');
        if (f.size() != 4) throw FormatError("likelihood cache: line " + std::to_string(i + 1) + " needs 4 fields");
        if (out.empty() || out.back().song_id != f[0]) out.push_back({f[0], f[1] == "1", {}, {}});
        if (!f[2].empty()) out.back().segments.push_back({std::stoul(f[2]), std::stod(f[3])});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct CurvePoint {
    double tau = 1;  // count, or fraction in fraction mode
    std::size_t predicted_positive = 0;
    Metrics m;
};

struct EvalReport {
    std::string condition = "clean";  // clean | mp3 | random_processing
    double tau_seg = 0.5;
    bool fraction_mode = false;
    std::size_t n_songs = 0;
    std::size_t n_segments = 0;
    Metrics segment;  // every surviving segment labelled with its song's label
    std::vector<CurvePoint> curve;

    [[nodiscard]] const CurvePoint& best() const {
        if (curve.empty()) throw DomainError("report: empty curve");
        const CurvePoint* b = &curve.front();
        for (const auto& c : curve)
            if (c.m.accuracy > b->m.accuracy) b = &c;
        return *b;
    }

    [[nodiscard]] std::string to_csv() const {
        std::string out = "level,condition,tau_seg,tau_cnt,n,predicted_positive,precision,recall,accuracy,precision_defined\n";
        auto row = [&](const std::string& level, const std::string& tau, std::size_t n, std::size_t pp, const Metrics& m) {
            out += level + "," + condition + "," + fmt_fixed(tau_seg, 4) + "," + tau + "," + std::to_string(n) + "," +
                   std::to_string(pp) + "," + fmt_fixed(m.precision, 4) + "," + fmt_fixed(m.recall, 4) + "," +
                   fmt_fixed(m.accuracy, 4) + "," + (m.precision_defined ? "1" : "0") + "\n";
        };
        if (n_segments) row("segment", "", n_segments, segment.tp + segment.fp, segment);
        for (const auto& c : curve)
            row("song", fraction_mode ? fmt_fixed(c.tau, 4) : std::to_string(static_cast<std::size_t>(c.tau)), n_songs,
                c.predicted_positive, c.m);
        return out;
    }
};

struct SweepOptions {
    double tau_seg = 0.5;
    std::size_t tau_cnt_min = 1;
    std::size_t tau_cnt_max = 0;  // 0: the largest segment count seen
    bool fraction_mode = false;
    std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
};

inline Metrics segment_metrics(const std::vector<SongScores>& scores, double tau_seg) {
    std::vector<bool> pred, lab;
    for (const auto& s : scores)
        for (const auto& seg : s.segments) {
            pred.push_back(seg.likelihood > tau_seg);
            lab.push_back(s.label);
        }
    return pred.empty() ? Metrics{} : metrics(pred, lab);
}

/// Verdicts for every threshold from one set of cached likelihoods.
inline EvalReport threshold_sweep(const std::vector<SongScores>& scores, const SweepOptions& opt = {},
                                  const std::string& condition = "clean") {
    EvalReport r;
    r.condition = condition;
    r.tau_seg = opt.tau_seg;
    r.fraction_mode = opt.fraction_mode;
    r.n_songs = scores.size();
    for (const auto& s : scores) r.n_segments += s.segments.size();
    r.segment = segment_metrics(scores, opt.tau_seg);
    if (scores.empty()) return r;
    std::vector<bool> labels;
    for (const auto& s : scores) labels.push_back(s.label);
    auto point = [&](double tau, auto&& verdict) {
        CurvePoint c;
        c.tau = tau;
        std::vector<bool> pred;
        for (const auto& s : scores) pred.push_back(verdict(likelihoods(s.segments)).is_autotuned);
        for (bool p : pred) c.predicted_positive += p;
        c.m = metrics(pred, labels);
        r.curve.push_back(c);
    };
    if (opt.fraction_mode) {
        for (double f : opt.fractions)
            point(f, [&](std::vector<double> y) { return song_verdict_fraction(std::move(y), opt.tau_seg, f); });
    } else {
        std::size_t hi = opt.tau_cnt_max;
        if (hi == 0)
            for (const auto& s : scores) hi = std::max(hi, s.segments.size());
        hi = std::max(hi, opt.tau_cnt_min);
        for (std::size_t t = std::max<std::size_t>(1, opt.tau_cnt_min); t <= hi; ++t)
            point(static_cast<double>(t), [&](std::vector<double> y) { return song_verdict(std::move(y), opt.tau_seg, t); });
    }
    return r;
}

enum class RobustnessMode { mp3, random_processing };

inline RobustnessMode parse_robustness_mode(const std::string& s) {
    if (s == "mp3") return RobustnessMode::mp3;
    if (s == "random_processing" || s == "random") return RobustnessMode::random_processing;
    throw FormatError("unknown robustness mode '" + s + "' (expected mp3 or random_processing)");
}

struct RobustnessResult {
    EvalReport report;
    std::vector<SongScores> scores;  // provenance per song inside
};

/// Each song gets its own generator seeded from (seed, position), so results
/// do not depend on evaluation order.
inline RobustnessResult robustness_eval(const DatasetManifest& m, const DetectorModels& models, const AugmentConfig& cfg,
                                        RobustnessMode mode, const DetectOptions& opt = {},
                                        const SweepOptions& sweep = {}, const CodecCommands& codec = resolve_codec()) {
    cfg.validate();
    if (mode == RobustnessMode::mp3 && (codec.encode.empty() || codec.decode.empty()))
        throw CodecMissing("robustness: mp3 mode needs a codec (set " + std::string(kEnvMp3Encode) + "/" + kEnvMp3Decode +
                           " or install ffmpeg)");
    SongTransform tf = [&](const AudioBuffer& a, std::size_t k, std::string& prov) {
        std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + k);
        if (mode == RobustnessMode::mp3) {
            const int kbps = cfg.mp3_kbps_min +
                             static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.mp3_kbps_max - cfg.mp3_kbps_min + 1));
            prov = "mp3:" + std::to_string(kbps);
            return mp3_roundtrip(a, kbps, codec);
        }
        auto [out, rec] = random_chain(a, cfg, rng);
        prov = rec.to_string();
        return out;
    };
    RobustnessResult res;
    res.scores = score_manifest(m, models, opt, "test", "song_pair", tf);
    res.report = threshold_sweep(res.scores, sweep, mode == RobustnessMode::mp3 ? "mp3" : "random_processing");
    return res;
}

inline std::string provenance_csv(const std::vector<SongScores>& scores) {
    std::string out = "song_id,transforms\n";
    for (const auto& s : scores) out += s.song_id + "," + s.provenance + "\n";
    return out;
}

}  // namespace tunedetect
