#pragma once

// Shared oracles for the unit tests.

#include <unistd.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "tunedetect/audio.hpp"

namespace tdtest {

inline tunedetect::AudioBuffer sine(double hz, double amp, double seconds, int sr = 44100, double phase = 0) {
    tunedetect::AudioBuffer b{std::vector<float>(static_cast<std::size_t>(std::llround(seconds * sr))), sr};
    for (std::size_t i = 0; i < b.size(); ++i)
        b.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / sr + phase));
    return b;
}

/// Sine whose frequency follows f(t) (Hz), integrated sample by sample.
template <class F>
tunedetect::AudioBuffer chirp(F&& f, double amp, double seconds, int sr = 44100, int harmonics = 1) {
    tunedetect::AudioBuffer b{std::vector<float>(static_cast<std::size_t>(std::llround(seconds * sr))), sr};
    double phase = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        double v = 0;
        for (int h = 1; h <= harmonics; ++h) v += std::sin(h * phase) / h;
        b.samples[i] = static_cast<float>(amp * v);
        phase += 2 * std::numbers::pi * f(static_cast<double>(i) / sr) / sr;
    }
    return b;
}

/// Frequency of the largest DFT magnitude, refined by parabolic
/// interpolation of log magnitudes. Direct DFT restricted to [lo, hi] Hz on a
/// Hann-windowed excerpt.
inline double dominant_frequency(const tunedetect::AudioBuffer& b, double lo = 50, double hi = 2000,
                                 std::size_t max_len = 1u << 15) {
    const std::size_t n = std::min(b.size(), max_len);
    const std::size_t off = (b.size() - n) / 2;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = b.samples[off + i] * (0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
    const double df = static_cast<double>(b.sample_rate) / static_cast<double>(n);
    const auto k0 = static_cast<std::size_t>(lo / df), k1 = static_cast<std::size_t>(hi / df);
    std::vector<double> mag(k1 + 2, 0.0);
    for (std::size_t k = k0 > 0 ? k0 - 1 : 0; k <= k1 + 1; ++k) {
        std::complex<double> acc = 0;
        const std::complex<double> w = std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
        std::complex<double> rot = 1;
        for (std::size_t i = 0; i < n; ++i) {
            acc += x[i] * rot;
            rot *= w;
            if ((i & 1023) == 1023) rot = std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k) * static_cast<double>(i + 1) / static_cast<double>(n));
        }
        mag[k] = std::abs(acc);
    }
    std::size_t best = std::max<std::size_t>(k0, 1);
    for (std::size_t k = std::max<std::size_t>(k0, 1); k <= k1; ++k)
        if (mag[k] > mag[best]) best = k;
    const double a = std::log(mag[best - 1] + 1e-30), c = std::log(mag[best] + 1e-30), d = std::log(mag[best + 1] + 1e-30);
    const double denom = a - 2 * c + d;
    const double shift = denom != 0 ? 0.5 * (a - d) / denom : 0.0;
    return (static_cast<double>(best) + shift) * df;
}

inline double correlation(std::span<const float> a, std::span<const float> b) {
    const std::size_t n = std::min(a.size(), b.size());
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ab += static_cast<double>(a[i]) * b[i];
        aa += static_cast<double>(a[i]) * a[i];
        bb += static_cast<double>(b[i]) * b[i];
    }
    return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

struct TempPath {
    std::filesystem::path path;
    TempPath() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "tdtest-XXXXXX").string();
        path = ::mkdtemp(tmpl.data());
    }
    ~TempPath() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace tdtest
