#pragma once

// Pitch-correction simulator: nearest-note quantization of the tracked
// contour, pitch-mark placement, and TD-PSOLA resynthesis. Also the
// vocal + accompaniment remix used to assemble songs.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "tunedetect/audio.hpp"
#include "tunedetect/pitch.hpp"

namespace tunedetect {

struct MidiNote {
    int midi = 0;
    double target_f0 = 0.0;
};

inline double midi_to_hz(int midi) { return 440.0 * std::exp2((midi - 69) / 12.0); }

/// Nearest equal-tempered note (A4 = 440 Hz = MIDI 69), ties rounding up.
inline MidiNote nearest_midi(double f0) {
    if (!(f0 > 0.0) || !std::isfinite(f0)) throw DomainError("nearest_midi: f0 must be positive");
    const double note = 69.0 + 12.0 * std::log2(f0 / 440.0);
    const int midi = static_cast<int>(std::floor(note + 0.5));
    return {midi, midi_to_hz(midi)};
}

/// Signed distance in cents to the nearest equal-tempered pitch.
inline double cents_off_note(double f0) {
    return 1200.0 * std::log2(f0 / nearest_midi(f0).target_f0);
}

// Linear interpolation of a per-frame quantity at a sample position,
// holding the end values outside the first/last frame centres.
inline double frame_interp(std::span<const double> values, std::size_t frame_size,
                           std::size_t hop, double sample) {
    if (values.empty()) return 0.0;
    double pos = (sample - static_cast<double>(frame_size) / 2.0) / static_cast<double>(hop);
    if (pos <= 0.0) return values.front();
    const auto last = static_cast<double>(values.size() - 1);
    if (pos >= last) return values.back();
    auto i = static_cast<std::size_t>(pos);
    double frac = pos - static_cast<double>(i);
    return values[i] + frac * (values[i + 1] - values[i]);
}

inline std::size_t nearest_frame(std::size_t n_frames, std::size_t frame_size, std::size_t hop,
                                 double sample) {
    double pos = (sample - static_cast<double>(frame_size) / 2.0) / static_cast<double>(hop);
    pos = std::round(std::clamp(pos, 0.0, static_cast<double>(n_frames - 1)));
    return static_cast<std::size_t>(pos);
}

struct SampleRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Maximal runs of samples whose nearest frame is voiced.
inline std::vector<SampleRange> voiced_regions(std::span<const double> f0, std::size_t frame_size,
                                               std::size_t hop, std::size_t n_samples) {
    std::vector<SampleRange> out;
    if (f0.empty()) return out;
    bool in = false;
    std::size_t start = 0;
    for (std::size_t n = 0; n < n_samples; ++n) {
        bool v = f0[nearest_frame(f0.size(), frame_size, hop, static_cast<double>(n))] > 0.0;
        if (v && !in) {
            start = n;
            in = true;
        } else if (!v && in) {
            out.push_back({start, n});
            in = false;
        }
    }
    if (in) out.push_back({start, n_samples});
    return out;
}

struct RetuneTargets {
    std::vector<double> target_f0;    // Hz per frame, 0 = unvoiced
    std::vector<double> shift_ratio;  // target / source, 1 when unvoiced
    std::size_t frame_size = 0;
    std::size_t hop = 0;

    static constexpr double kMinRatio = 0.70710678118654752;  // 2^(-1/2)
    static constexpr double kMaxRatio = 1.41421356237309505;  // 2^(1/2)

    [[nodiscard]] double ratio_at(double sample) const {
        return frame_interp(shift_ratio, frame_size, hop, sample);
    }
};

// Deviations smaller than this are left untouched.
inline constexpr double kRetuneDeadbandCents = 1.0;

/// Per-frame nearest-note targets for a tracked contour.
inline RetuneTargets quantize_targets(const PitchTrack& track,
                                      double deadband_cents = kRetuneDeadbandCents) {
    RetuneTargets t;
    t.frame_size = track.frame_size;
    t.hop = track.hop;
    t.target_f0.assign(track.size(), 0.0);
    t.shift_ratio.assign(track.size(), 1.0);
    for (std::size_t i = 0; i < track.size(); ++i) {
        if (!track.voiced(i)) continue;
        auto note = nearest_midi(track.f0[i]);
        t.target_f0[i] = note.target_f0;
        if (std::abs(cents_between(note.target_f0, track.f0[i])) < deadband_cents) continue;
        t.shift_ratio[i] =
            std::clamp(note.target_f0 / track.f0[i], RetuneTargets::kMinRatio, RetuneTargets::kMaxRatio);
    }
    return t;
}

struct EpochMarks {
    std::vector<std::size_t> positions;
};

inline constexpr double kUnvoicedMarkSpacingS = 0.010;

/// Pitch marks: period-chained waveform peaks inside voiced regions, uniform
/// 10 ms spacing elsewhere.
inline EpochMarks mark_epochs(const AudioBuffer& buf, const PitchTrack& track,
                              const PitchParams& params = {}) {
    EpochMarks marks;
    const std::size_t n = buf.size();
    if (n == 0) return marks;
    const auto& x = buf.samples;
    const auto uv_step = static_cast<std::size_t>(std::llround(kUnvoicedMarkSpacingS * buf.sample_rate));
    const auto min_gap = static_cast<std::size_t>(std::ceil(0.5 * buf.sample_rate / params.fmax));

    // f0 with unvoiced frames bridged by their voiced neighbours, for period lookup.
    std::vector<double> f0_filled = track.f0;
    {
        double last = 0.0;
        for (auto& f : f0_filled) f = f > 0.0 ? (last = f) : last;
        double next = 0.0;
        for (std::size_t i = f0_filled.size(); i-- > 0;) {
            if (track.f0[i] > 0.0) next = track.f0[i];
            if (f0_filled[i] <= 0.0) f0_filled[i] = next;
        }
    }
    auto period_at = [&](double sample) {
        double f = frame_interp(f0_filled, track.frame_size, track.hop, sample);
        f = std::clamp(f, params.fmin, params.fmax);
        return buf.sample_rate / f;
    };
    auto argmax = [&](std::size_t lo, std::size_t hi) {
        std::size_t best = lo;
        for (std::size_t i = lo; i < hi; ++i)
            if (x[i] > x[best]) best = i;
        return best;
    };

    auto regions = track.size() ? voiced_regions(track.f0, track.frame_size, track.hop, n)
                                : std::vector<SampleRange>{};
    auto& pos = marks.positions;
    auto add_unvoiced = [&](std::size_t s, std::size_t e) {
        std::size_t m = pos.empty() ? s : std::max(s, pos.back() + min_gap);
        for (; m < e; m += uv_step) pos.push_back(m);
    };

    std::size_t cursor = 0;
    for (const auto& r : regions) {
        add_unvoiced(cursor, r.begin);
        std::size_t lo = pos.empty() ? r.begin : std::max(r.begin, pos.back() + min_gap);
        if (lo >= r.end) {
            cursor = r.end;
            continue;
        }
        double p0 = period_at(static_cast<double>(lo));
        std::size_t hi = std::min(r.end, lo + static_cast<std::size_t>(std::ceil(p0)));
        std::size_t m = argmax(lo, std::max(hi, lo + 1));
        pos.push_back(m);
        while (true) {
            double p = period_at(static_cast<double>(m));
            double pred = static_cast<double>(m) + p;
            if (pred >= static_cast<double>(r.end)) break;
            auto a = static_cast<std::size_t>(std::max(pred - 0.25 * p, static_cast<double>(m + min_gap)));
            auto b = std::min(n, static_cast<std::size_t>(std::ceil(pred + 0.25 * p)) + 1);
            if (a >= b) break;
            m = argmax(a, b);
            pos.push_back(m);
        }
        cursor = r.end;
    }
    add_unvoiced(cursor, n);
    return marks;
}

namespace detail {

inline double hann_at(double offset, double half) {
    return 0.5 * (1.0 + std::cos(std::numbers::pi * offset / half));
}

}  // namespace detail

/// TD-PSOLA. Within voiced regions each output mark advances by the local
/// source mark spacing divided by the shift ratio and receives the two-period
/// Hann grain of the nearest source mark; the overlap-add is divided by the
/// window sum. Unvoiced samples are copied. Output length equals input length.
inline AudioBuffer psola_shift(const AudioBuffer& buf, const EpochMarks& marks,
                               const RetuneTargets& targets) {
    AudioBuffer out = buf;
    const auto& m = marks.positions;
    if (m.size() < 2 || targets.target_f0.empty()) return out;
    const std::size_t n = buf.size();
    const auto& x = buf.samples;
    auto regions = voiced_regions(targets.target_f0, targets.frame_size, targets.hop, n);

    std::vector<double> acc(n, 0.0), wsum(n, 0.0);
    for (const auto& r : regions) {
        auto first = std::lower_bound(m.begin(), m.end(), r.begin);
        auto last = std::lower_bound(m.begin(), m.end(), r.end);
        if (std::distance(first, last) < 2) continue;
        const std::size_t k0 = static_cast<std::size_t>(first - m.begin());
        const std::size_t k1 = static_cast<std::size_t>(last - m.begin());  // exclusive

        auto spacing_at = [&](double t) {
            // Source interval containing t, restricted to this region's marks.
            auto it = std::upper_bound(m.begin() + static_cast<std::ptrdiff_t>(k0),
                                       m.begin() + static_cast<std::ptrdiff_t>(k1), t,
                                       [](double v, std::size_t mk) { return v < static_cast<double>(mk); });
            std::size_t j = static_cast<std::size_t>(it - m.begin());
            j = std::clamp<std::size_t>(j, k0 + 1, k1 - 1);
            return static_cast<double>(m[j] - m[j - 1]);
        };
        auto nearest_mark = [&](double t) {
            auto it = std::lower_bound(m.begin() + static_cast<std::ptrdiff_t>(k0),
                                       m.begin() + static_cast<std::ptrdiff_t>(k1), t,
                                       [](std::size_t mk, double v) { return static_cast<double>(mk) < v; });
            std::size_t j = static_cast<std::size_t>(it - m.begin());
            if (j >= k1) return k1 - 1;
            if (j > k0 && t - static_cast<double>(m[j - 1]) <= static_cast<double>(m[j]) - t) return j - 1;
            return j;
        };
        auto grain_half = [&](std::size_t k) {
            double left = k > k0 ? static_cast<double>(m[k] - m[k - 1]) : static_cast<double>(m[k + 1] - m[k]);
            double right = k + 1 < k1 ? static_cast<double>(m[k + 1] - m[k]) : left;
            return 0.5 * (left + right);
        };

        double o = static_cast<double>(m[k0]);
        while (o < static_cast<double>(r.end)) {
            const std::size_t k = nearest_mark(o);
            const double half = grain_half(k);
            const auto h = static_cast<std::ptrdiff_t>(std::floor(half));
            const auto dst0 = static_cast<std::ptrdiff_t>(std::llround(o));
            const auto src0 = static_cast<std::ptrdiff_t>(m[k]);
            for (std::ptrdiff_t j = -h; j <= h; ++j) {
                const std::ptrdiff_t d = dst0 + j, s = src0 + j;
                if (d < 0 || s < 0 || d >= static_cast<std::ptrdiff_t>(n) ||
                    s >= static_cast<std::ptrdiff_t>(n))
                    continue;
                const double w = detail::hann_at(static_cast<double>(j), half);
                acc[static_cast<std::size_t>(d)] += w * x[static_cast<std::size_t>(s)];
                wsum[static_cast<std::size_t>(d)] += w;
            }
            const double ratio = std::clamp(targets.ratio_at(o), RetuneTargets::kMinRatio,
                                            RetuneTargets::kMaxRatio);
            if (ratio == 1.0) {
                // Unshifted stretch: lock back onto the source marks.
                if (k + 1 >= k1) break;
                o = std::max(o + 1.0, static_cast<double>(m[k + 1]));
            } else {
                o += spacing_at(o) / ratio;
            }
        }

        // Short linear crossfade against the dry signal at region edges.
        const std::size_t len = r.end - r.begin;
        const std::size_t fade = std::min<std::size_t>(220, len / 4);
        for (std::size_t i = r.begin; i < r.end; ++i) {
            if (wsum[i] < 1e-6) continue;
            double wet = acc[i] / wsum[i];
            double g = 1.0;
            if (fade > 0) {
                std::size_t from_start = i - r.begin, to_end = r.end - 1 - i;
                g = std::min({1.0, static_cast<double>(from_start) / fade,
                              static_cast<double>(to_end) / fade});
            }
            out.samples[i] = static_cast<float>(g * wet + (1.0 - g) * x[i]);
        }
    }
    return out;
}

struct AutotuneResult {
    AudioBuffer output;
    PitchTrack source_track;
    RetuneTargets targets;
};

/// Full correction chain: track, quantize to the nearest note, mark, resynthesize.
inline AutotuneResult autotune_detailed(const AudioBuffer& vocal, const PitchParams& params = {}) {
    if (vocal.sample_rate != params.sample_rate)
        throw DomainError("autotune: vocal must be at the analysis sample rate");
    AutotuneResult r;
    r.source_track = pyin_track(vocal, params);
    r.targets = quantize_targets(r.source_track);
    auto marks = mark_epochs(vocal, r.source_track, params);
    r.output = psola_shift(vocal, marks, r.targets);
    normalize_if_clipping(r.output);
    return r;
}

inline AudioBuffer autotune(const AudioBuffer& vocal, const PitchParams& params = {}) {
    return autotune_detailed(vocal, params).output;
}

/// Sample-wise sum of vocal and accompaniment (shorter one zero-padded),
/// peak-normalized only when the sum clips.
inline AudioBuffer remix(const AudioBuffer& vocal, const AudioBuffer& accompaniment) {
    if (vocal.sample_rate != accompaniment.sample_rate)
        throw DomainError("remix: sample rates differ");
    AudioBuffer out;
    out.sample_rate = vocal.sample_rate;
    out.samples.assign(std::max(vocal.size(), accompaniment.size()), 0.0f);
    for (std::size_t i = 0; i < vocal.size(); ++i) out.samples[i] += vocal.samples[i];
    for (std::size_t i = 0; i < accompaniment.size(); ++i) out.samples[i] += accompaniment.samples[i];
    normalize_if_clipping(out);
    return out;
}

}  // namespace tunedetect
