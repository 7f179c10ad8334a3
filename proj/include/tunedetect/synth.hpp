#pragma once

// Copyright-free stand-ins for sung vocals and backing tracks. A vocal is a
// band-limited harmonic source following a note contour (glides, vibrato,
// deliberate detuning), shaped by three formant resonators and enveloped.

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "tunedetect/audio.hpp"
#include "tunedetect/augment.hpp"
#include "tunedetect/retune.hpp"

namespace tunedetect {

struct SynthNote {
    int midi = 69;
    double detune_cents = 0;  // added to the spec-wide detune
    double start_s = 0;
    double duration_s = 1;
};

struct SynthVoiceSpec {
    std::vector<SynthNote> notes;     // sorted by start, non-overlapping
    double detune_cents = 0;          // spec-wide offset from equal temperament
    double vibrato_cents = 0;         // peak deviation
    double vibrato_hz = 5.5;
    double vibrato_onset_s = 0.15;    // vibrato fades in over this long after each onset
    double glide_s = 0.08;            // legato transition when notes abut
    std::array<double, 3> formants_hz{700, 1200, 2600};
    std::array<double, 3> bandwidths_hz{90, 110, 160};
    double attack_s = 0.04;
    double release_s = 0.06;
    double breath = 0.002;            // noise amplitude relative to peak
    double peak = 0.5;
    double duration_s = 10;
    int sample_rate = kSampleRate;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(duration_s > 0)) throw DomainError("synth: duration must be positive");
        if (std::abs(detune_cents) > 80) throw DomainError("synth: detune must lie in [-80, 80] cents");
        const PitchParams pp;
        for (const auto& n : notes) {
            if (std::abs(n.detune_cents) > 80) throw DomainError("synth: note detune must lie in [-80, 80] cents");
            const double lo = midi_to_hz(n.midi) * std::exp2((detune_cents + n.detune_cents - vibrato_cents) / 1200.0);
            const double hi = midi_to_hz(n.midi) * std::exp2((detune_cents + n.detune_cents + vibrato_cents) / 1200.0);
            if (lo < pp.fmin || hi > pp.fmax) throw DomainError("synth: note contour leaves [fmin, fmax]");
        }
    }
};

/// A single sustained note covering the whole duration.
inline SynthVoiceSpec constant_note_spec(int midi, double duration_s = 10, double detune_cents = 0) {
    SynthVoiceSpec s;
    s.notes.push_back({midi, 0, 0, duration_s});
    s.detune_cents = detune_cents;
    s.duration_s = duration_s;
    s.attack_s = 0.01;
    s.release_s = 0.01;
    s.breath = 0;
    return s;
}

namespace detail {

// Two-pole resonator with unity peak gain near its centre frequency.
class Resonator {
public:
    Resonator(double fc, double bw, int sr) {
        const double r = std::exp(-std::numbers::pi * bw / sr);
        a1_ = 2 * r * std::cos(2 * std::numbers::pi * fc / sr);
        a2_ = -r * r;
        g_ = (1 - r) * std::sqrt(1 - 2 * r * std::cos(4 * std::numbers::pi * fc / sr) + r * r);
    }
    double operator()(double x) {
        const double y = g_ * x + a1_ * y1_ + a2_ * y2_;
        y2_ = y1_;
        y1_ = y;
        return y;
    }

private:
    double a1_, a2_, g_;
    double y1_ = 0, y2_ = 0;
};

// Per-sample log2-frequency contour (0 where silent) and amplitude envelope.
inline void voice_contour(const SynthVoiceSpec& s, std::vector<double>& log2f, std::vector<double>& env) {
    const std::size_t n = samples_for(s.duration_s, s.sample_rate);
    log2f.assign(n, 0.0);
    env.assign(n, 0.0);
    const double sr = s.sample_rate;
    for (std::size_t k = 0; k < s.notes.size(); ++k) {
        const auto& note = s.notes[k];
        const double centre = std::log2(midi_to_hz(note.midi)) + (s.detune_cents + note.detune_cents) / 1200.0;
        const bool legato_in = k > 0 && std::abs(s.notes[k - 1].start_s + s.notes[k - 1].duration_s - note.start_s) < 1e-9;
        const bool legato_out = k + 1 < s.notes.size() &&
                                std::abs(note.start_s + note.duration_s - s.notes[k + 1].start_s) < 1e-9;
        const auto b = static_cast<std::size_t>(std::llround(note.start_s * sr));
        const auto e = std::min(n, static_cast<std::size_t>(std::llround((note.start_s + note.duration_s) * sr)));
        for (std::size_t i = b; i < e; ++i) {
            const double t = (static_cast<double>(i) - static_cast<double>(b)) / sr;
            const double left = (static_cast<double>(e) - static_cast<double>(i)) / sr;
            double v = centre;
            const double ramp = std::clamp(t / s.vibrato_onset_s, 0.0, 1.0);
            v += ramp * s.vibrato_cents / 1200.0 *
                 std::sin(2 * std::numbers::pi * s.vibrato_hz * (static_cast<double>(i) / sr));
            log2f[i] = v;
            double a = 1.0;
            if (!legato_in) a = std::min(a, t / s.attack_s);
            if (!legato_out) a = std::min(a, left / s.release_s);
            env[i] = std::clamp(a, 0.0, 1.0);
        }
    }
    // Legato joins: cross the boundary with a straight line in log frequency.
    const auto half = static_cast<std::ptrdiff_t>(std::llround(s.glide_s * sr / 2));
    for (std::size_t k = 1; k < s.notes.size(); ++k) {
        const auto& prev = s.notes[k - 1];
        if (std::abs(prev.start_s + prev.duration_s - s.notes[k].start_s) > 1e-9) continue;
        const auto j = static_cast<std::ptrdiff_t>(std::llround(s.notes[k].start_s * sr));
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, j - half);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, j + half);
        if (hi <= lo) continue;
        const double a = log2f[static_cast<std::size_t>(lo)], c = log2f[static_cast<std::size_t>(hi)];
        for (std::ptrdiff_t i = lo; i <= hi; ++i)
            log2f[static_cast<std::size_t>(i)] = a + (c - a) * static_cast<double>(i - lo) / static_cast<double>(hi - lo);
    }
}

}  // namespace detail

/// Deterministic for a given spec (the seed drives only the breath noise).
inline AudioBuffer synth_vocal(const SynthVoiceSpec& spec) {
    spec.validate();
    std::vector<double> log2f, env;
    detail::voice_contour(spec, log2f, env);
    const std::size_t n = log2f.size();
    const double sr = spec.sample_rate;
    std::array<detail::Resonator, 3> res{detail::Resonator(spec.formants_hz[0], spec.bandwidths_hz[0], spec.sample_rate),
                                         detail::Resonator(spec.formants_hz[1], spec.bandwidths_hz[1], spec.sample_rate),
                                         detail::Resonator(spec.formants_hz[2], spec.bandwidths_hz[2], spec.sample_rate)};
    constexpr std::array<double, 3> kFormantGain{1.0, 0.7, 0.4};
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> out(n, 0.0);
    double phase = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double src = 0;
        if (env[i] > 0) {
            const double f0 = std::exp2(log2f[i]);
            phase += 2 * std::numbers::pi * f0 / sr;
            if (phase > 2 * std::numbers::pi) phase -= 2 * std::numbers::pi;
            const int harmonics = std::clamp(static_cast<int>(0.45 * sr / f0), 1, 24);
            // sin(k x) by the Chebyshev recurrence.
            const double c2 = 2 * std::cos(phase);
            double s_prev = 0, s_cur = std::sin(phase);
            for (int k = 1; k <= harmonics; ++k) {
                src += s_cur / std::pow(static_cast<double>(k), 1.1);
                const double s_next = c2 * s_cur - s_prev;
                s_prev = s_cur;
                s_cur = s_next;
            }
            src *= env[i];
        }
        double y = 0.5 * src;
        for (std::size_t f = 0; f < 3; ++f) y += kFormantGain[f] * res[f](src);
        out[i] = y + spec.breath * env[i] * g(rng);
    }
    double peak = 0;
    for (double v : out) peak = std::max(peak, std::abs(v));
    AudioBuffer buf{std::vector<float>(n, 0.0f), spec.sample_rate};
    if (peak > 0)
        for (std::size_t i = 0; i < n; ++i) buf.samples[i] = static_cast<float>(out[i] * spec.peak / peak);
    return buf;
}

/// Random off-key performance: per-note offsets keep every note 20-48 cents
/// from equal temperament, with vibrato of 20-60 cents at 4.5-6.5 Hz.
inline SynthVoiceSpec random_voice_spec(std::mt19937_64& rng, double duration_s, int low_midi, int high_midi,
                                        const std::array<double, 3>& formants) {
    SynthVoiceSpec s;
    s.duration_s = duration_s;
    s.seed = rng();
    s.formants_hz = formants;
    s.vibrato_cents = uniform(rng, 20, 60);
    s.vibrato_hz = uniform(rng, 4.5, 6.5);
    s.glide_s = uniform(rng, 0.05, 0.12);
    s.detune_cents = uniform(rng, -15, 15);
    double t = uniform(rng, 0.05, 0.3);
    int midi = low_midi + static_cast<int>(rng() % static_cast<std::uint64_t>(high_midi - low_midi + 1));
    while (t < duration_s - 0.3) {
        SynthNote note;
        note.midi = midi;
        const double off = uniform(rng, 20, 48) * (uniform01(rng) < 0.5 ? -1 : 1);
        note.detune_cents = off - s.detune_cents;
        note.start_s = t;
        note.duration_s = std::min(uniform(rng, 0.35, 1.1), duration_s - t);
        s.notes.push_back(note);
        t += note.duration_s;
        if (uniform01(rng) < 0.3) t += uniform(rng, 0.08, 0.3);
        const int step = static_cast<int>(rng() % 9) - 4;
        midi = std::clamp(midi + step, low_midi, high_midi);
    }
    return s;
}

struct AccompanimentSpec {
    int root_midi = 45;
    double bpm = 110;
    double duration_s = 10;
    double peak = 0.3;
    int sample_rate = kSampleRate;
    std::uint64_t seed = 1;
};

/// Chord pad (I-V-vi-IV, one chord per bar) plus noise-based kick, snare and hats.
inline AudioBuffer synth_accompaniment(const AccompanimentSpec& spec) {
    const std::size_t n = samples_for(spec.duration_s, spec.sample_rate);
    const double sr = spec.sample_rate;
    const double beat = 60.0 / spec.bpm;
    const double bar = 4 * beat;
    constexpr std::array<std::array<int, 3>, 4> kChords{{{0, 4, 7}, {7, 11, 14}, {9, 12, 16}, {5, 9, 12}}};
    std::vector<double> out(n, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const auto chord = static_cast<std::size_t>(std::floor(t / bar)) % kChords.size();
        const double in_bar = std::fmod(t, bar);
        const double env = std::min({1.0, in_bar / 0.15, (bar - in_bar) / 0.15});
        double v = 0;
        for (int interval : kChords[chord]) {
            const double f = midi_to_hz(spec.root_midi + interval);
            for (int h = 1; h <= 4; ++h) v += std::sin(2 * std::numbers::pi * f * h * t) / (h * h);
        }
        out[i] = 0.25 * env * v;
    }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const auto eighths = static_cast<std::size_t>(spec.duration_s / (beat / 2)) + 1;
    for (std::size_t k = 0; k < eighths; ++k) {
        const auto start = static_cast<std::size_t>(std::llround(static_cast<double>(k) * beat / 2 * sr));
        const bool on_beat = k % 2 == 0;
        const std::size_t beat_no = (k / 2) % 4;
        double hp_prev_in = 0, hp_prev_out = 0, bp_state = 0;
        for (std::size_t j = 0; j < static_cast<std::size_t>(0.25 * sr) && start + j < n; ++j) {
            const double t = static_cast<double>(j) / sr;
            const double noise = g(rng);
            double v = 0;
            // Hi-hat: first-order high-passed noise, fast decay.
            const double hp = 0.9 * (hp_prev_out + noise - hp_prev_in);
            hp_prev_in = noise;
            hp_prev_out = hp;
            v += 0.15 * hp * std::exp(-t / 0.02);
            if (on_beat && (beat_no == 0 || beat_no == 2))
                v += 0.9 * std::sin(2 * std::numbers::pi * (50 + 60 * std::exp(-t / 0.03)) * t) * std::exp(-t / 0.12);
            if (on_beat && (beat_no == 1 || beat_no == 3)) {
                bp_state = 0.7 * bp_state + 0.3 * noise;
                v += 0.5 * bp_state * std::exp(-t / 0.06);
            }
            out[start + j] += v;
        }
    }

    double peak = 0;
    for (double v : out) peak = std::max(peak, std::abs(v));
    AudioBuffer buf{std::vector<float>(n, 0.0f), spec.sample_rate};
    if (peak > 0)
        for (std::size_t i = 0; i < n; ++i) buf.samples[i] = static_cast<float>(out[i] * spec.peak / peak);
    return buf;
}

}  // namespace tunedetect
