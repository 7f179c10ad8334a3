#pragma once

// YIN period candidates and probabilistic YIN tracking with HMM smoothing.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "tunedetect/audio.hpp"
#include "tunedetect/viterbi.hpp"

namespace tunedetect {

struct PitchParams {
    double fmin = 65.0;
    double fmax = 1047.0;
    std::size_t frame_size = 2048;
    std::size_t hop = 256;
    std::size_t n_thresholds = 100;
    double beta_a = 2.0;
    double beta_b = 18.0;
    double switch_prob = 0.01;
    // Full width of the triangular pitch-transition window, in semitones.
    double max_semitone_step = 12.0;
    int bins_per_semitone = 10;
    // Mass granted to the global CMND minimum when no trough clears a threshold.
    double no_trough_prob = 0.01;
    int sample_rate = kSampleRate;

    void validate() const {
        if (!(fmin > 0.0 && fmin < fmax && fmax < sample_rate / 2.0))
            throw DomainError("PitchParams: need 0 < fmin < fmax < sr/2");
        if (static_cast<double>(frame_size) < 2.0 * sample_rate / fmin)
            throw DomainError("PitchParams: frame must hold two periods of fmin");
        if (hop == 0 || n_thresholds == 0 || bins_per_semitone <= 0)
            throw DomainError("PitchParams: hop, n_thresholds, bins_per_semitone must be positive");
        if (!(switch_prob > 0.0 && switch_prob < 1.0))
            throw DomainError("PitchParams: switch_prob must lie in (0, 1)");
    }

    [[nodiscard]] std::size_t min_lag() const {
        return std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(sample_rate / fmax)));
    }
    [[nodiscard]] std::size_t max_lag() const {
        return static_cast<std::size_t>(std::ceil(sample_rate / fmin));
    }
    // Integration window of the difference function.
    [[nodiscard]] std::size_t window() const {
        return std::min(frame_size / 2, frame_size - max_lag() - 2);
    }
    [[nodiscard]] std::size_t n_bins() const {
        return static_cast<std::size_t>(
                   std::floor(12.0 * bins_per_semitone * std::log2(fmax / fmin))) + 1;
    }
    [[nodiscard]] double bin_frequency(std::size_t bin) const {
        return fmin * std::exp2(static_cast<double>(bin) / (12.0 * bins_per_semitone));
    }
    [[nodiscard]] double frequency_bin(double f) const {
        return 12.0 * bins_per_semitone * std::log2(f / fmin);
    }
};

struct YinCandidate {
    double lag = 0.0;   // fractional samples
    double cmnd = 0.0;  // normalized difference at the integer minimum
};

/// Cumulative-mean-normalized difference d'(tau) for tau in [0, max_lag + 1].
/// For each lag the comparison window is placed symmetrically about the frame
/// centre, so every lag measures the same instant.
inline std::vector<double> cmnd(std::span<const float> frame, const PitchParams& p) {
    const std::size_t tau_max = p.max_lag() + 1;
    const std::size_t w = p.window();
    const std::size_t centre = frame.size() / 2;
    std::vector<double> d(tau_max + 1, 0.0);
    std::vector<double> x(frame.begin(), frame.end());
    for (std::size_t tau = 1; tau <= tau_max; ++tau) {
        const std::size_t start = centre - (w + tau) / 2;
        const double* a = x.data() + start;
        const double* b = a + tau;
        // Independent partial sums keep the loop vectorizable.
        double part[8] = {};
        std::size_t j = 0;
        for (; j + 8 <= w; j += 8)
            for (std::size_t k = 0; k < 8; ++k) {
                double diff = a[j + k] - b[j + k];
                part[k] += diff * diff;
            }
        double acc = 0.0;
        for (; j < w; ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
        for (double v : part) acc += v;
        d[tau] = acc;
    }
    std::vector<double> out(tau_max + 1);
    out[0] = 1.0;
    double running = 0.0;
    for (std::size_t tau = 1; tau <= tau_max; ++tau) {
        running += d[tau];
        out[tau] = running > 0.0 ? d[tau] * static_cast<double>(tau) / running : 1.0;
    }
    return out;
}

/// Local minima of d' inside [sr/fmax, sr/fmin], parabolically refined,
/// sorted by ascending d'. Empty for an all-zero frame.
inline std::vector<YinCandidate> yin_frame(std::span<const float> frame, const PitchParams& p) {
    if (frame.size() != p.frame_size) throw DomainError("yin_frame: frame length mismatch");
    std::vector<YinCandidate> out;
    if (std::all_of(frame.begin(), frame.end(), [](float v) { return v == 0.0f; })) return out;

    const auto dn = cmnd(frame, p);
    const std::size_t lo = p.min_lag();
    const std::size_t hi = p.max_lag();
    for (std::size_t tau = lo; tau <= hi; ++tau) {
        if (!(dn[tau] < dn[tau - 1] && dn[tau] <= dn[tau + 1])) continue;
        double a = dn[tau - 1], b = dn[tau], c = dn[tau + 1];
        double denom = a - 2.0 * b + c;
        double shift = denom > 0.0 ? 0.5 * (a - c) / denom : 0.0;
        shift = std::clamp(shift, -0.5, 0.5);
        out.push_back({static_cast<double>(tau) + shift, b});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& l, const auto& r) { return l.cmnd < r.cmnd; });
    return out;
}

/// Absolute-threshold pick: the smallest-lag candidate with d' below
/// `threshold`, else the global minimum. Periodic frames have near-zero troughs
/// at every multiple of the period, and the smallest lag is the fundamental.
inline std::optional<YinCandidate> best_candidate(std::span<const YinCandidate> candidates,
                                                  double threshold = 0.1) {
    if (candidates.empty()) return std::nullopt;
    std::optional<YinCandidate> pick;
    for (const auto& c : candidates)
        if (c.cmnd < threshold && (!pick || c.lag < pick->lag)) pick = c;
    return pick ? pick : std::optional<YinCandidate>(candidates.front());
}

struct PitchTrack {
    std::vector<double> times;        // seconds, frame centres
    std::vector<double> f0;           // Hz, 0 = unvoiced
    std::vector<double> voiced_prob;  // [0, 1]
    std::size_t frame_size = 0;
    std::size_t hop = 0;
    int sample_rate = kSampleRate;

    [[nodiscard]] std::size_t size() const { return f0.size(); }
    [[nodiscard]] bool voiced(std::size_t i) const { return f0[i] > 0.0; }

    // Sample index of frame i's centre.
    [[nodiscard]] double centre_sample(std::size_t i) const {
        return static_cast<double>(i * hop) + static_cast<double>(frame_size) / 2.0;
    }

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw Error("cannot write " + path.string());
        out << "time_s,f0_hz,voiced_prob\n";
        for (std::size_t i = 0; i < size(); ++i)
            out << fmt_fixed(times[i], 6) << ',' << fmt_fixed(f0[i], 4) << ','
                << fmt_fixed(voiced_prob[i], 6) << '\n';
    }
};

namespace detail {

inline double beta_pdf(double x, double a, double b) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    double log_norm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    return std::exp(log_norm + (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x));
}

// Beta CDF at thresholds k/n, k = 0..n, by composite Simpson integration.
inline std::vector<double> beta_cdf_grid(std::size_t n, double a, double b) {
    constexpr int kSub = 64;
    std::vector<double> cdf(n + 1, 0.0);
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        double x0 = static_cast<double>(k) / static_cast<double>(n);
        double h = 1.0 / static_cast<double>(n * kSub);
        double s = beta_pdf(x0, a, b) + beta_pdf(x0 + kSub * h, a, b);
        for (int i = 1; i < kSub; ++i) s += (i % 2 ? 4.0 : 2.0) * beta_pdf(x0 + i * h, a, b);
        acc += s * h / 3.0;
        cdf[k + 1] = acc;
    }
    return cdf;
}

}  // namespace detail

/// Probability mass per threshold k/n (k = 1..n) under the Beta prior.
inline std::vector<double> threshold_prior(const PitchParams& p) {
    auto cdf = detail::beta_cdf_grid(p.n_thresholds, p.beta_a, p.beta_b);
    std::vector<double> mass(p.n_thresholds);
    for (std::size_t k = 0; k < p.n_thresholds; ++k) mass[k] = cdf[k + 1] - cdf[k];
    return mass;
}

struct TroughProbability {
    double lag = 0.0;
    double prob = 0.0;
};

/// Distributes the threshold prior over a frame's troughs: each threshold
/// votes for the smallest-lag trough below it, or, failing that, gives a
/// `no_trough_prob` share to the global minimum.
inline std::vector<TroughProbability> trough_probabilities(std::span<const YinCandidate> candidates,
                                                           std::span<const double> prior,
                                                           double no_trough_prob) {
    std::vector<TroughProbability> out;
    if (candidates.empty()) return out;
    std::vector<YinCandidate> by_lag(candidates.begin(), candidates.end());
    std::sort(by_lag.begin(), by_lag.end(),
              [](const auto& l, const auto& r) { return l.lag < r.lag; });
    std::size_t global = 0;
    for (std::size_t i = 1; i < by_lag.size(); ++i)
        if (by_lag[i].cmnd < by_lag[global].cmnd) global = i;

    std::vector<double> prob(by_lag.size(), 0.0);
    const double n = static_cast<double>(prior.size());
    for (std::size_t k = 0; k < prior.size(); ++k) {
        const double threshold = static_cast<double>(k + 1) / n;
        bool found = false;
        for (std::size_t i = 0; i < by_lag.size(); ++i) {
            if (by_lag[i].cmnd < threshold) {
                prob[i] += prior[k];
                found = true;
                break;
            }
        }
        if (!found) prob[global] += prior[k] * no_trough_prob;
    }
    for (std::size_t i = 0; i < by_lag.size(); ++i)
        if (prob[i] > 0.0) out.push_back({by_lag[i].lag, prob[i]});
    return out;
}

/// HMM transition over (pitch bin, voicing) states. State s < n_bins is voiced
/// bin s; state n_bins + b is unvoiced with remembered bin b. Pitch moves carry
/// triangular weights normalized per source bin; voicing flips with switch_prob.
class PitchTransition {
public:
    PitchTransition(std::size_t n_bins, std::size_t half_width, double switch_prob)
        : n_bins_(n_bins), half_(half_width),
          log_stay_(std::log(1.0 - switch_prob)), log_switch_(std::log(switch_prob)) {
        log_w_.resize(2 * half_ + 1);
        for (std::size_t k = 0; k <= 2 * half_; ++k) {
            auto dist = static_cast<double>(k > half_ ? k - half_ : half_ - k);
            log_w_[k] = std::log(static_cast<double>(half_) + 1.0 - dist);
        }
        log_norm_.resize(n_bins_);
        for (std::size_t b = 0; b < n_bins_; ++b) {
            double z = 0.0;
            for (std::size_t t = lo(b); t <= hi(b); ++t) z += std::exp(log_w_[offset(b, t)]);
            log_norm_[b] = std::log(z);
        }
    }

    [[nodiscard]] std::size_t n_states() const { return 2 * n_bins_; }

    [[nodiscard]] double log_prob(std::size_t from, std::size_t to) const {
        std::size_t fb = from % n_bins_, tb = to % n_bins_;
        bool fv = from < n_bins_, tv = to < n_bins_;
        if ((tb > fb ? tb - fb : fb - tb) > half_) return -std::numeric_limits<double>::infinity();
        return log_w_[offset(fb, tb)] - log_norm_[fb] + (fv == tv ? log_stay_ : log_switch_);
    }

    void propagate(std::span<const double> prev, std::span<double> best,
                   std::span<std::uint32_t> arg) const {
        // Fold the voicing choice first, then sweep the triangular band.
        thread_local std::vector<double> folded;
        thread_local std::vector<std::uint32_t> folded_arg;
        folded.resize(n_bins_);
        folded_arg.resize(n_bins_);
        for (int to_voiced = 1; to_voiced >= 0; --to_voiced) {
            const double from_v = to_voiced ? log_stay_ : log_switch_;
            const double from_u = to_voiced ? log_switch_ : log_stay_;
            for (std::size_t b = 0; b < n_bins_; ++b) {
                double v = prev[b] + from_v;
                double u = prev[n_bins_ + b] + from_u;
                if (v >= u) {
                    folded[b] = v - log_norm_[b];
                    folded_arg[b] = static_cast<std::uint32_t>(b);
                } else {
                    folded[b] = u - log_norm_[b];
                    folded_arg[b] = static_cast<std::uint32_t>(n_bins_ + b);
                }
            }
            const std::size_t base = to_voiced ? 0 : n_bins_;
            for (std::size_t t = 0; t < n_bins_; ++t) {
                double bv = -std::numeric_limits<double>::infinity();
                std::uint32_t ba = 0;
                for (std::size_t f = lo(t); f <= hi(t); ++f) {
                    double v = folded[f] + log_w_[offset(f, t)];
                    if (v > bv) {
                        bv = v;
                        ba = folded_arg[f];
                    }
                }
                best[base + t] = bv;
                arg[base + t] = ba;
            }
        }
    }

private:
    [[nodiscard]] std::size_t lo(std::size_t b) const { return b > half_ ? b - half_ : 0; }
    [[nodiscard]] std::size_t hi(std::size_t b) const { return std::min(n_bins_ - 1, b + half_); }
    [[nodiscard]] std::size_t offset(std::size_t from, std::size_t to) const {
        return to + half_ - from;
    }

    std::size_t n_bins_;
    std::size_t half_;
    double log_stay_;
    double log_switch_;
    std::vector<double> log_w_;
    std::vector<double> log_norm_;
};

inline constexpr double kLogFloor = 1e-300;

inline std::size_t frame_count(std::size_t n_samples, const PitchParams& p) {
    if (n_samples < p.frame_size) return 0;
    return 1 + (n_samples - p.frame_size) / p.hop;
}

/// Probabilistic YIN. Frames are uncentred: frame i covers
/// [i*hop, i*hop + frame_size) and is stamped at its centre.
inline PitchTrack pyin_track(const AudioBuffer& buf, const PitchParams& p = {}) {
    p.validate();
    if (buf.sample_rate != p.sample_rate) throw DomainError("pyin_track: sample rate mismatch");
    PitchTrack track;
    track.frame_size = p.frame_size;
    track.hop = p.hop;
    track.sample_rate = p.sample_rate;
    const std::size_t n_frames = frame_count(buf.size(), p);
    if (n_frames == 0) return track;

    const auto prior = threshold_prior(p);
    const std::size_t n_bins = p.n_bins();
    std::vector<std::vector<TroughProbability>> troughs(n_frames);
    std::vector<double> voiced_prob(n_frames, 0.0);
    for (std::size_t i = 0; i < n_frames; ++i) {
        std::span<const float> frame(buf.samples.data() + i * p.hop, p.frame_size);
        auto cands = yin_frame(frame, p);
        troughs[i] = trough_probabilities(cands, prior, p.no_trough_prob);
        double total = 0.0;
        for (const auto& t : troughs[i]) total += t.prob;
        voiced_prob[i] = std::clamp(total, 0.0, 1.0);
    }

    auto to_bin = [&](double lag) {
        double f = p.sample_rate / lag;
        double b = std::round(p.frequency_bin(f));
        return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(n_bins - 1)));
    };

    auto log_obs = [&](std::size_t t, std::span<double> out) {
        std::vector<double> voiced(n_bins, 0.0);
        for (const auto& tr : troughs[t]) voiced[to_bin(tr.lag)] += tr.prob;
        const double unvoiced = (1.0 - voiced_prob[t]) / static_cast<double>(n_bins);
        const double log_u = std::log(std::max(unvoiced, 0.0) + kLogFloor);
        for (std::size_t b = 0; b < n_bins; ++b) {
            out[b] = std::log(voiced[b] + kLogFloor);
            out[n_bins + b] = log_u;
        }
    };

    const auto half = static_cast<std::size_t>(
        std::llround(p.max_semitone_step / 2.0 * p.bins_per_semitone));
    PitchTransition trans(n_bins, half, p.switch_prob);
    std::vector<double> log_init(2 * n_bins, -std::log(2.0 * static_cast<double>(n_bins)));
    auto path = viterbi(log_init, n_frames, log_obs, trans);

    track.times.resize(n_frames);
    track.f0.assign(n_frames, 0.0);
    track.voiced_prob = voiced_prob;
    for (std::size_t i = 0; i < n_frames; ++i) {
        track.times[i] = track.centre_sample(i) / p.sample_rate;
        if (path[i] >= n_bins) continue;
        const std::size_t bin = path[i];
        double f = p.bin_frequency(bin);
        // Report the trough nearest the decoded bin for sub-bin precision.
        double best_dist = 1.5;
        for (const auto& tr : troughs[i]) {
            double fb = p.frequency_bin(p.sample_rate / tr.lag);
            double dist = std::abs(fb - static_cast<double>(bin));
            if (dist < best_dist) {
                best_dist = dist;
                f = p.sample_rate / tr.lag;
            }
        }
        track.f0[i] = std::clamp(f, p.fmin, p.fmax);
    }
    return track;
}

inline double cents_between(double f, double ref) { return 1200.0 * std::log2(f / ref); }

}  // namespace tunedetect
