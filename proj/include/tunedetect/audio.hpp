#pragma once

// Mono audio container, RIFF/WAV I/O, band-limited resampling, and the
// fixed-length segmentation + energy gate used ahead of feature extraction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tunedetect/common.hpp"

namespace tunedetect {

struct AudioBuffer {
    std::vector<float> samples;
    int sample_rate = kSampleRate;

    AudioBuffer() = default;
    AudioBuffer(std::vector<float> s, int sr) : samples(std::move(s)), sample_rate(sr) {}

    [[nodiscard]] std::size_t size() const { return samples.size(); }
    [[nodiscard]] bool empty() const { return samples.empty(); }
    [[nodiscard]] double duration() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
    [[nodiscard]] float peak() const {
        float p = 0.0f;
        for (float s : samples) p = std::max(p, std::abs(s));
        return p;
    }
    bool operator==(const AudioBuffer&) const = default;
};

inline double energy(std::span<const float> samples) {
    double e = 0.0;
    for (float s : samples) e += static_cast<double>(s) * s;
    return e;
}

inline AudioBuffer silence(double seconds, int sr = kSampleRate) {
    return {std::vector<float>(static_cast<std::size_t>(std::llround(seconds * sr)), 0.0f), sr};
}

// ---------------------------------------------------------------------------
// WAV I/O
// ---------------------------------------------------------------------------

enum class WavEncoding { pcm16, float32 };

namespace detail {

inline std::uint32_t read_le32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_le16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_le32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_le16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

}  // namespace detail

/// Decode a RIFF/WAVE file. Accepts PCM16 and IEEE float32, one or two
/// channels; stereo is averaged to mono. int16 values are scaled by 1/32768.
inline AudioBuffer decode_wav(std::string_view bytes, const std::string& name = "<memory>") {
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    if (n < 12 || std::memcmp(data, "RIFF", 4) != 0 || std::memcmp(data + 8, "WAVE", 4) != 0)
        throw FormatError(name + ": not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* pcm = nullptr;
    std::size_t pcm_bytes = 0;
    bool have_fmt = false;

    std::size_t pos = 12;
    while (pos + 8 <= n) {
        const unsigned char* chunk = data + pos;
        std::uint32_t len = detail::read_le32(chunk + 4);
        const unsigned char* body = chunk + 8;
        std::size_t avail = std::min<std::size_t>(len, n - pos - 8);
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (avail < 16) throw FormatError(name + ": truncated fmt chunk");
            format = detail::read_le16(body);
            channels = detail::read_le16(body + 2);
            rate = detail::read_le32(body + 4);
            bits = detail::read_le16(body + 14);
            if (format == 0xFFFE && avail >= 26) format = detail::read_le16(body + 24);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            pcm = body;
            pcm_bytes = avail;
        }
        pos += 8 + static_cast<std::size_t>(len) + (len & 1u);
    }
    if (!have_fmt || pcm == nullptr) throw FormatError(name + ": missing fmt or data chunk");
    if (channels < 1 || channels > 2)
        throw FormatError(name + ": unsupported channel count " + std::to_string(channels));
    if (rate == 0) throw FormatError(name + ": zero sample rate");

    const bool is_pcm16 = format == 1 && bits == 16;
    const bool is_f32 = format == 3 && bits == 32;
    if (!is_pcm16 && !is_f32)
        throw FormatError(name + ": unsupported encoding (format " + std::to_string(format) +
                          ", " + std::to_string(bits) + " bits); need PCM16 or float32");

    const std::size_t width = bits / 8;
    const std::size_t frames = pcm_bytes / (width * channels);
    std::vector<float> out(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        float acc = 0.0f;
        for (std::size_t c = 0; c < channels; ++c) {
            const unsigned char* p = pcm + (i * channels + c) * width;
            float v;
            if (is_pcm16) {
                auto raw = static_cast<std::int16_t>(detail::read_le16(p));
                v = static_cast<float>(raw) / 32768.0f;
            } else {
                std::uint32_t raw = detail::read_le32(p);
                std::memcpy(&v, &raw, 4);
            }
            if (channels == 1) {
                acc = v;
            } else {
                acc += v;
            }
        }
        out[i] = channels == 1 ? acc : acc * 0.5f;
    }
    return {std::move(out), static_cast<int>(rate)};
}

inline AudioBuffer load_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_wav(bytes, path.string());
}

inline std::string encode_wav(const AudioBuffer& buf, WavEncoding enc = WavEncoding::float32) {
    const bool f32 = enc == WavEncoding::float32;
    const std::uint16_t bits = f32 ? 32 : 16;
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(buf.size() * (bits / 8));
    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    detail::put_le32(out, 36 + data_bytes);
    out += "WAVEfmt ";
    detail::put_le32(out, 16);
    detail::put_le16(out, f32 ? 3 : 1);
    detail::put_le16(out, 1);
    detail::put_le32(out, static_cast<std::uint32_t>(buf.sample_rate));
    detail::put_le32(out, static_cast<std::uint32_t>(buf.sample_rate) * (bits / 8));
    detail::put_le16(out, bits / 8);
    detail::put_le16(out, bits);
    out += "data";
    detail::put_le32(out, data_bytes);
    for (float s : buf.samples) {
        if (f32) {
            std::uint32_t raw;
            std::memcpy(&raw, &s, 4);
            detail::put_le32(out, raw);
        } else {
            double scaled = std::round(static_cast<double>(s) * 32768.0);
            scaled = std::clamp(scaled, -32768.0, 32767.0);
            detail::put_le16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
        }
    }
    return out;
}

inline void save_wav(const std::filesystem::path& path, const AudioBuffer& buf,
                     WavEncoding enc = WavEncoding::float32) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    auto bytes = encode_wav(buf, enc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Resampling: 64-tap Kaiser-windowed sinc
// ---------------------------------------------------------------------------

namespace detail {

class SincKernel {
public:
    static constexpr int kTaps = 64;
    static constexpr int kPhases = 1024;
    static constexpr double kBeta = 8.6;

    explicit SincKernel(double cutoff) : cutoff_(cutoff) {
        table_.resize(static_cast<std::size_t>(kTaps * kPhases + 1));
        const double half = kTaps / 2.0;
        const double norm = std::cyl_bessel_i(0.0, kBeta);
        for (std::size_t i = 0; i < table_.size(); ++i) {
            double x = static_cast<double>(i) / kPhases - half;  // in source samples
            double r = x / half;
            double win = std::abs(r) <= 1.0
                             ? std::cyl_bessel_i(0.0, kBeta * std::sqrt(1.0 - r * r)) / norm
                             : 0.0;
            double arg = std::numbers::pi * cutoff * x;
            double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
            table_[i] = cutoff * sinc * win;
        }
    }

    // Kernel value at offset x (source samples), x in [-32, 32].
    [[nodiscard]] double at(double x) const {
        double pos = (x + kTaps / 2.0) * kPhases;
        if (pos <= 0.0 || pos >= static_cast<double>(table_.size() - 1)) return 0.0;
        auto i = static_cast<std::size_t>(pos);
        double frac = pos - static_cast<double>(i);
        return table_[i] + frac * (table_[i + 1] - table_[i]);
    }

    [[nodiscard]] double cutoff() const { return cutoff_; }

private:
    double cutoff_;
    std::vector<double> table_;
};

}  // namespace detail

/// Read `src` at fractional positions `n * step` for n in [0, out_len).
/// `cutoff` is relative to the source Nyquist frequency.
inline std::vector<float> resample_positions(std::span<const float> src, double step,
                                             std::size_t out_len, double cutoff) {
    detail::SincKernel kernel(std::min(1.0, cutoff));
    std::vector<float> out(out_len, 0.0f);
    const auto n = static_cast<std::ptrdiff_t>(src.size());
    constexpr int half = detail::SincKernel::kTaps / 2;
    for (std::size_t k = 0; k < out_len; ++k) {
        double t = static_cast<double>(k) * step;
        auto base = static_cast<std::ptrdiff_t>(std::floor(t));
        double acc = 0.0;
        for (std::ptrdiff_t j = base - half + 1; j <= base + half; ++j) {
            if (j < 0 || j >= n) continue;
            acc += src[static_cast<std::size_t>(j)] * kernel.at(static_cast<double>(j) - t);
        }
        out[k] = static_cast<float>(acc);
    }
    return out;
}

inline AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
    if (target_rate <= 0) throw DomainError("resample: target rate must be positive");
    if (target_rate == buf.sample_rate) return buf;
    const double ratio = static_cast<double>(target_rate) / buf.sample_rate;
    auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(buf.size()) * ratio));
    return {resample_positions(buf.samples, 1.0 / ratio, out_len, ratio), target_rate};
}

// ---------------------------------------------------------------------------
// Pad/trim, segmentation, energy gate
// ---------------------------------------------------------------------------

inline std::size_t samples_for(double seconds, int sr) {
    return static_cast<std::size_t>(std::llround(seconds * sr));
}

/// Truncate or zero-pad at the end to exactly round(duration_s * sr) samples.
inline AudioBuffer pad_or_trim(const AudioBuffer& buf, double duration_s) {
    if (!(duration_s > 0.0)) throw DomainError("pad_or_trim: duration must be positive");
    AudioBuffer out = buf;
    out.samples.resize(samples_for(duration_s, buf.sample_rate), 0.0f);
    return out;
}

struct Segment {
    AudioBuffer buffer;
    std::size_t index = 0;
    std::string source_id;
    double energy = 0.0;  // sum of squared samples
};

/// Non-overlapping fixed windows. A trailing partial window is zero-padded
/// and kept only when it holds at least half a window of content.
inline std::vector<Segment> segment(const AudioBuffer& buf, double duration_s,
                                    const std::string& source_id = {}) {
    if (!(duration_s > 0.0)) throw DomainError("segment: duration must be positive");
    std::vector<Segment> out;
    const std::size_t len = samples_for(duration_s, buf.sample_rate);
    if (buf.empty() || len == 0) return out;
    for (std::size_t start = 0; start < buf.size(); start += len) {
        const std::size_t content = std::min(len, buf.size() - start);
        if (content < len && 2 * content < len) break;
        Segment seg;
        seg.buffer.sample_rate = buf.sample_rate;
        seg.buffer.samples.assign(buf.samples.begin() + static_cast<std::ptrdiff_t>(start),
                                  buf.samples.begin() + static_cast<std::ptrdiff_t>(start + content));
        seg.buffer.samples.resize(len, 0.0f);
        seg.index = out.size();
        seg.source_id = source_id;
        seg.energy = energy(seg.buffer.samples);
        out.push_back(std::move(seg));
    }
    return out;
}

inline constexpr double kDefaultGateRatio = 2e-5;  // 0.002 %

/// Keep segments whose energy reaches `ratio` times the track maximum.
/// A track whose loudest segment has zero energy yields nothing.
inline std::vector<Segment> energy_gate(std::vector<Segment> segments,
                                        double ratio = kDefaultGateRatio) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("energy_gate: ratio must lie in (0, 1)");
    double max_e = 0.0;
    for (const auto& s : segments) max_e = std::max(max_e, s.energy);
    std::vector<Segment> kept;
    if (max_e <= 0.0) return kept;
    const double threshold = ratio * max_e;
    for (auto& s : segments)
        if (s.energy >= threshold) kept.push_back(std::move(s));
    return kept;
}

/// Peak-normalize so max |s| = 1 only when the peak exceeds 1.
inline void normalize_if_clipping(AudioBuffer& buf) {
    float p = buf.peak();
    if (p > 1.0f) {
        for (auto& s : buf.samples) s /= p;
    }
}

inline AudioBuffer to_analysis_rate(AudioBuffer buf) {
    if (buf.sample_rate != kSampleRate) return resample(buf, kSampleRate);
    return buf;
}

}  // namespace tunedetect
