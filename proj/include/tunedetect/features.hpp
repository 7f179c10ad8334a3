#pragma once

// STFT power, triangular mel filterbank, and the normalized log-mel
// representation fed to the embedder.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <vector>

#include "tunedetect/audio.hpp"
#include "tunedetect/fft.hpp"

namespace tunedetect {

struct FeatureParams {
    std::size_t n_fft = 2048;
    std::size_t hop = 1024;
    std::size_t n_mels = 128;
    int sample_rate = kSampleRate;
    double fmin = 0.0;
    double fmax = kSampleRate / 2.0;
    double top_db = 80.0;
    double amin = 1e-10;

    [[nodiscard]] std::size_t n_bins() const { return n_fft / 2 + 1; }
    // Frames produced for n samples under centred framing.
    [[nodiscard]] std::size_t n_frames(std::size_t n_samples) const {
        return 1 + n_samples / hop;
    }
};

/// Row-major real matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }
};

inline std::vector<double> hann_periodic(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

namespace detail {

// Index into a signal of length n under repeated reflection (no edge repeat).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

}  // namespace detail

/// Power spectrogram, frames x (n_fft/2 + 1). Centred framing: the signal is
/// reflect-padded by n_fft/2 on both sides, so frame t is centred on sample
/// t*hop. An empty input yields one all-zero frame.
inline Matrix stft_power(const AudioBuffer& buf, const FeatureParams& p = {}) {
    const std::size_t n = buf.size();
    const std::size_t frames = p.n_frames(n);
    Matrix out(frames, p.n_bins());
    if (n == 0) return out;
    const auto window = hann_periodic(p.n_fft);
    Fft fft(p.n_fft);
    std::vector<double> frame(p.n_fft);
    const auto pad = static_cast<std::ptrdiff_t>(p.n_fft / 2);
    for (std::size_t t = 0; t < frames; ++t) {
        const auto start = static_cast<std::ptrdiff_t>(t * p.hop) - pad;
        for (std::size_t j = 0; j < p.n_fft; ++j) {
            auto idx = start + static_cast<std::ptrdiff_t>(j);
            std::size_t k = (idx >= 0 && idx < static_cast<std::ptrdiff_t>(n))
                                ? static_cast<std::size_t>(idx)
                                : detail::reflect_index(idx, n);
            frame[j] = buf.samples[k] * window[j];
        }
        fft.power_spectrum(frame, std::span<double>(out.data.data() + t * out.cols, out.cols));
    }
    return out;
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

struct MelFilterbank {
    Matrix weights;                    // n_mels x n_bins
    std::vector<double> centers_hz;    // n_mels
    std::vector<std::size_t> lo, hi;   // nonzero bin range [lo, hi) per filter
};

/// Triangular filters with centres equally spaced on the HTK mel scale.
inline MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sr,
                                    double fmin = 0.0, double fmax = -1.0) {
    if (n_mels < 1) throw DomainError("mel_filterbank: n_mels must be at least 1");
    if (fmax <= 0.0) fmax = sr / 2.0;
    const std::size_t n_bins = n_fft / 2 + 1;
    MelFilterbank fb;
    fb.weights = Matrix(n_mels, n_bins);
    const double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    fb.centers_hz.assign(edges.begin() + 1, edges.end() - 1);
    fb.lo.assign(n_mels, n_bins);
    fb.hi.assign(n_mels, 0);
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
        for (std::size_t k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * sr / static_cast<double>(n_fft);
            double w = 0.0;
            if (f > left && f < right)
                w = f <= centre ? (f - left) / (centre - left) : (right - f) / (right - centre);
            if (w > 0.0) {
                fb.weights(m, k) = w;
                fb.lo[m] = std::min(fb.lo[m], k);
                fb.hi[m] = std::max(fb.hi[m], k + 1);
            }
        }
        if (fb.hi[m] == 0) fb.lo[m] = 0;
    }
    return fb;
}

/// Mel power in dB (10 log10(p + amin)), frames x n_mels, before any clamping.
inline Matrix log_mel_db(const AudioBuffer& buf, const FeatureParams& p = {}) {
    const auto power = stft_power(buf, p);
    thread_local MelFilterbank fb;
    thread_local std::size_t fb_key = 0;
    const std::size_t key = p.n_mels * 1000003u + p.n_fft * 31u + static_cast<std::size_t>(p.sample_rate);
    if (fb_key != key || fb.weights.rows == 0) {
        fb = mel_filterbank(p.n_mels, p.n_fft, p.sample_rate, p.fmin, p.fmax);
        fb_key = key;
    }
    Matrix out(power.rows, p.n_mels);
    for (std::size_t t = 0; t < power.rows; ++t) {
        auto row = power.row(t);
        for (std::size_t m = 0; m < p.n_mels; ++m) {
            double acc = 0.0;
            for (std::size_t k = fb.lo[m]; k < fb.hi[m]; ++k) acc += fb.weights(m, k) * row[k];
            out(t, m) = 10.0 * std::log10(acc + p.amin);
        }
    }
    return out;
}

struct MelSpectrogram {
    std::size_t frames = 0;
    std::size_t n_mels = 0;
    std::vector<float> values;  // frames x n_mels, row-major, in [0, 1]

    [[nodiscard]] float at(std::size_t t, std::size_t m) const { return values[t * n_mels + m]; }
    bool operator==(const MelSpectrogram&) const = default;
};

/// Log-mel clamped to [max - top_db, max], then min-max scaled to [0, 1].
/// A spectrogram without dynamic range maps to all zeros.
inline MelSpectrogram melspectrogram(const AudioBuffer& buf, const FeatureParams& p = {}) {
    auto db = log_mel_db(buf, p);
    MelSpectrogram out;
    out.frames = db.rows;
    out.n_mels = db.cols;
    out.values.assign(db.data.size(), 0.0f);
    if (db.data.empty()) return out;
    const double top = *std::max_element(db.data.begin(), db.data.end());
    const double floor = top - p.top_db;
    double lo = top;
    for (auto& v : db.data) {
        v = std::max(v, floor);
        lo = std::min(lo, v);
    }
    const double range = top - lo;
    if (range <= 0.0) return out;
    for (std::size_t i = 0; i < db.data.size(); ++i)
        out.values[i] = static_cast<float>((db.data[i] - lo) / range);
    return out;
}

// ---------------------------------------------------------------------------
// Spectrogram cache files
//
//   offset  size  field
//   0       8     magic "TDMEL001"
//   8       4     u32 frames
//   12      4     u32 n_mels
//   16      4     u32 sample_rate
//   20      4     u32 n_fft
//   24      4     u32 hop
//   28      4     f32 top_db
//   32      4*F*M f32 values, row-major (frame-major)
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kMelMagic[8] = {'T', 'D', 'M', 'E', 'L', '0', '0', '1'};

inline std::string encode_mel(const MelSpectrogram& mel, const FeatureParams& p = {}) {
    std::string out(kMelMagic, 8);
    auto put_u32 = [&](std::uint32_t v) { detail::put_le32(out, v); };
    auto put_f32 = [&](float f) {
        std::uint32_t raw;
        std::memcpy(&raw, &f, 4);
        detail::put_le32(out, raw);
    };
    put_u32(static_cast<std::uint32_t>(mel.frames));
    put_u32(static_cast<std::uint32_t>(mel.n_mels));
    put_u32(static_cast<std::uint32_t>(p.sample_rate));
    put_u32(static_cast<std::uint32_t>(p.n_fft));
    put_u32(static_cast<std::uint32_t>(p.hop));
    put_f32(static_cast<float>(p.top_db));
    for (float v : mel.values) put_f32(v);
    return out;
}

inline MelSpectrogram decode_mel(std::string_view bytes, const std::string& name = "<memory>") {
    if (bytes.size() < 32 || std::memcmp(bytes.data(), kMelMagic, 8) != 0)
        throw FormatError(name + ": not a spectrogram cache file");
    const auto* d = reinterpret_cast<const unsigned char*>(bytes.data());
    MelSpectrogram mel;
    mel.frames = detail::read_le32(d + 8);
    mel.n_mels = detail::read_le32(d + 12);
    const std::size_t count = mel.frames * mel.n_mels;
    if (bytes.size() != 32 + 4 * count) throw FormatError(name + ": truncated spectrogram payload");
    mel.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t raw = detail::read_le32(d + 32 + 4 * i);
        std::memcpy(&mel.values[i], &raw, 4);
    }
    return mel;
}

inline void save_mel(const std::filesystem::path& path, const MelSpectrogram& mel,
                     const FeatureParams& p = {}) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    auto bytes = encode_mel(mel, p);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline MelSpectrogram load_mel(const std::filesystem::path& path) {
    return decode_mel(read_file_bytes(path), path.string());
}

}  // namespace tunedetect
