#pragma once

// Robustness transforms: Gaussian noise, resample-style speed change, time
// shift, MP3 round trip through an external codec, and the random chain.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <random>

#include "tunedetect/audio.hpp"
#include "tunedetect/config.hpp"
#include "tunedetect/random.hpp"

namespace tunedetect {

enum class Transform { noise, speed, shift };

inline const char* transform_name(Transform t) {
    switch (t) {
        case Transform::noise: return "noise";
        case Transform::speed: return "speed";
        case Transform::shift: return "shift";
    }
    return "?";
}

inline Transform parse_transform(const std::string& s) {
    if (s == "noise") return Transform::noise;
    if (s == "speed") return Transform::speed;
    if (s == "shift") return Transform::shift;
    throw FormatError("unknown transform '" + s + "' (expected noise, speed or shift)");
}

struct AugmentConfig {
    double noise_min = 0.001, noise_max = 0.015;
    double speed_min = 0.80, speed_max = 1.25;
    double shift_min_s = -0.5, shift_max_s = 0.5;
    double apply_prob = 0.5;
    int mp3_kbps_min = 32, mp3_kbps_max = 64;
    std::uint64_t seed = 1;
    std::vector<Transform> order{Transform::noise, Transform::speed, Transform::shift};

    void validate() const {
        if (!(apply_prob >= 0.0 && apply_prob <= 1.0)) throw DomainError("augment: apply_prob must lie in [0, 1]");
        if (noise_min < 0 || noise_max < noise_min) throw DomainError("augment: bad noise range");
        if (speed_min < 0.5 || speed_max > 2.0 || speed_max < speed_min) throw DomainError("augment: bad speed range");
        if (shift_max_s < shift_min_s) throw DomainError("augment: bad shift range");
        if (mp3_kbps_min <= 0 || mp3_kbps_max < mp3_kbps_min) throw DomainError("augment: bad bitrate range");
    }
};

inline AugmentConfig augment_config_from(const KeyValues& kv, AugmentConfig c = {}) {
    c.noise_min = kv.get_double("augment.noise_min", c.noise_min);
    c.noise_max = kv.get_double("augment.noise_max", c.noise_max);
    c.speed_min = kv.get_double("augment.speed_min", c.speed_min);
    c.speed_max = kv.get_double("augment.speed_max", c.speed_max);
    c.shift_min_s = kv.get_double("augment.shift_min_s", c.shift_min_s);
    c.shift_max_s = kv.get_double("augment.shift_max_s", c.shift_max_s);
    c.apply_prob = kv.get_double("augment.apply_prob", c.apply_prob);
    c.mp3_kbps_min = static_cast<int>(kv.get_uint("augment.mp3_kbps_min", static_cast<std::uint64_t>(c.mp3_kbps_min)));
    c.mp3_kbps_max = static_cast<int>(kv.get_uint("augment.mp3_kbps_max", static_cast<std::uint64_t>(c.mp3_kbps_max)));
    c.seed = kv.get_uint("augment.seed", c.seed);
    if (auto o = kv.get("augment.order")) {
        c.order.clear();
        for (const auto& s : split(*o, ',')) c.order.push_back(parse_transform(trim(s)));
    }
    c.validate();
    return c;
}

/// in + amplitude * N(0, 1) per sample, clipped to [-1, 1].
inline AudioBuffer add_noise(const AudioBuffer& buf, double amplitude, std::mt19937_64& rng) {
    if (amplitude < 0) throw DomainError("add_noise: amplitude must be non-negative");
    AudioBuffer out = buf;
    if (amplitude == 0) return out;
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& s : out.samples) s = static_cast<float>(std::clamp(s + amplitude * g(rng), -1.0, 1.0));
    return out;
}

/// Tempo and pitch both scale by `factor`; length becomes round(len / factor).
inline AudioBuffer change_speed(const AudioBuffer& buf, double factor) {
    if (!(factor >= 0.5 && factor <= 2.0)) throw DomainError("change_speed: factor must lie in [0.5, 2]");
    if (factor == 1.0) return buf;
    const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(buf.size()) / factor));
    return {resample_positions(buf.samples, factor, out_len, 1.0 / factor), buf.sample_rate};
}

/// Positive shifts delay content; the length is unchanged.
inline AudioBuffer time_shift(const AudioBuffer& buf, double shift_s) {
    if (std::abs(shift_s) > buf.duration() + 1e-12) throw DomainError("time_shift: shift exceeds buffer duration");
    const auto k = static_cast<std::ptrdiff_t>(std::llround(shift_s * buf.sample_rate));
    const auto n = static_cast<std::ptrdiff_t>(buf.size());
    AudioBuffer out{std::vector<float>(buf.size(), 0.0f), buf.sample_rate};
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::ptrdiff_t src = i - k;
        if (src >= 0 && src < n) out.samples[static_cast<std::size_t>(i)] = buf.samples[static_cast<std::size_t>(src)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// External codec
// ---------------------------------------------------------------------------

/// Shell command templates; {in}, {out} and {kbps} are substituted.
struct CodecCommands {
    std::string encode;
    std::string decode;
};

inline constexpr const char* kEnvMp3Encode = "TUNEDETECT_MP3_ENCODE";
inline constexpr const char* kEnvMp3Decode = "TUNEDETECT_MP3_DECODE";

inline std::optional<std::filesystem::path> find_in_path(const std::string& exe) {
    auto path = env("PATH");
    if (!path) return std::nullopt;
    for (const auto& dir : split(*path, ':')) {
        if (dir.empty()) continue;
        std::filesystem::path p = std::filesystem::path(dir) / exe;
        if (::access(p.c_str(), X_OK) == 0) return p;
    }
    return std::nullopt;
}

inline CodecCommands ffmpeg_codec(const std::string& ffmpeg = "ffmpeg") {
    return {ffmpeg + " -hide_banner -loglevel error -y -i {in} -codec:a libmp3lame -b:a {kbps}k {out}",
            ffmpeg + " -hide_banner -loglevel error -y -i {in} -ac 1 -ar 44100 -c:a pcm_s16le {out}"};
}

/// Precedence: environment, then config keys mp3_encode / mp3_decode, then
/// ffmpeg found on PATH. Empty templates mean no codec.
inline CodecCommands resolve_codec(const KeyValues& cfg = {}) {
    CodecCommands c;
    if (find_in_path("ffmpeg")) c = ffmpeg_codec();
    if (auto v = cfg.get("mp3_encode")) c.encode = *v;
    if (auto v = cfg.get("mp3_decode")) c.decode = *v;
    if (auto v = env(kEnvMp3Encode)) c.encode = *v;
    if (auto v = env(kEnvMp3Decode)) c.decode = *v;
    return c;
}

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char ch : s) {
        if (ch == '\'') out += "'\\''";
        else out += ch;
    }
    return out + "'";
}

inline std::string substitute(std::string tmpl, const std::string& key, const std::string& value) {
    for (std::size_t pos = tmpl.find(key); pos != std::string::npos; pos = tmpl.find(key, pos + value.size()))
        tmpl.replace(pos, key.size(), value);
    return tmpl;
}

/// Runs a shell command; exit status 126/127 (not executable / not found)
/// maps to CodecMissing, any other failure to Error.
inline void run_command(const std::string& cmd, const std::string& what) {
    const int status = std::system(cmd.c_str());
    if (status == -1) throw Error(what + ": could not spawn shell");
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    if (code == 126 || code == 127) throw CodecMissing(what + ": command not available: " + cmd);
    if (code != 0) throw Error(what + ": command failed with exit code " + std::to_string(code) + ": " + cmd);
}

/// Private directory removed on scope exit, including on error paths.
class TempDir {
public:
    explicit TempDir(const std::string& prefix = "tunedetect") {
        std::string tmpl = (std::filesystem::temp_directory_path() / (prefix + "-XXXXXX")).string();
        if (::mkdtemp(tmpl.data()) == nullptr) throw Error("cannot create temporary directory");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Encode at `kbps`, decode, and trim/pad back to the input length.
inline AudioBuffer mp3_roundtrip(const AudioBuffer& buf, int kbps, const CodecCommands& codec) {
    if (codec.encode.empty() || codec.decode.empty())
        throw CodecMissing("mp3_roundtrip: no codec configured (set " + std::string(kEnvMp3Encode) + " and " +
                           kEnvMp3Decode + ", or install ffmpeg)");
    if (kbps <= 0) throw DomainError("mp3_roundtrip: bitrate must be positive");
    TempDir dir("tunedetect-mp3");
    const auto wav_in = dir.path() / "in.wav";
    const auto mp3 = dir.path() / "enc.mp3";
    const auto wav_out = dir.path() / "out.wav";
    save_wav(wav_in, buf, WavEncoding::pcm16);
    auto expand = [&](const std::string& tmpl, const std::filesystem::path& in, const std::filesystem::path& out) {
        return substitute(substitute(substitute(tmpl, "{in}", shell_quote(in.string())), "{out}",
                                     shell_quote(out.string())),
                          "{kbps}", std::to_string(kbps));
    };
    run_command(expand(codec.encode, wav_in, mp3), "mp3 encode");
    run_command(expand(codec.decode, mp3, wav_out), "mp3 decode");
    AudioBuffer out = load_wav(wav_out);
    if (out.sample_rate != buf.sample_rate) out = resample(out, buf.sample_rate);
    out.samples.resize(buf.size(), 0.0f);
    return out;
}

// ---------------------------------------------------------------------------
// Random chain with provenance
// ---------------------------------------------------------------------------

struct AppliedTransform {
    Transform kind = Transform::noise;
    double value = 0;        // amplitude, speed factor, or shift in seconds
    std::uint64_t seed = 0;  // noise generator seed (noise only)
    bool operator==(const AppliedTransform&) const = default;
};

struct AugmentRecord {
    std::vector<AppliedTransform> applied;
    bool operator==(const AugmentRecord&) const = default;

    [[nodiscard]] bool applies(Transform t) const {
        return std::any_of(applied.begin(), applied.end(), [t](const auto& a) { return a.kind == t; });
    }

    /// e.g. "noise:0.0042:123456;speed:1.1" ("none" when empty).
    [[nodiscard]] std::string to_string() const {
        if (applied.empty()) return "none";
        std::string s;
        for (const auto& a : applied) {
            if (!s.empty()) s += ";";
            s += std::string(transform_name(a.kind)) + ":" + fmt_double(a.value);
            if (a.kind == Transform::noise) s += ":" + std::to_string(a.seed);
        }
        return s;
    }

    static AugmentRecord parse(const std::string& text) {
        AugmentRecord r;
        if (trim(text) == "none" || trim(text).empty()) return r;
        for (const auto& item : split(text, ';')) {
            auto parts = split(item, ':');
            if (parts.size() < 2) throw FormatError("augment record: bad item '" + item + "'");
            AppliedTransform a;
            a.kind = parse_transform(parts[0]);
            a.value = std::stod(parts[1]);
            if (a.kind == Transform::noise) {
                if (parts.size() != 3) throw FormatError("augment record: noise needs a seed");
                a.seed = std::stoull(parts[2]);
            }
            r.applied.push_back(a);
        }
        return r;
    }
};

inline AudioBuffer apply_transform(const AudioBuffer& buf, const AppliedTransform& t) {
    switch (t.kind) {
        case Transform::noise: {
            std::mt19937_64 rng(t.seed);
            return add_noise(buf, t.value, rng);
        }
        case Transform::speed: return change_speed(buf, t.value);
        case Transform::shift: return time_shift(buf, std::clamp(t.value, -buf.duration(), buf.duration()));
    }
    return buf;
}

/// Re-applies a recorded chain exactly.
inline AudioBuffer apply_record(const AudioBuffer& buf, const AugmentRecord& record) {
    AudioBuffer out = buf;
    for (const auto& t : record.applied) out = apply_transform(out, t);
    return out;
}

/// Draws the chain: per transform in `cfg.order`, one coin with
/// P(apply) = apply_prob, then (if applied) its parameter.
inline AugmentRecord draw_chain(const AugmentConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    AugmentRecord r;
    for (Transform t : cfg.order) {
        if (!(uniform01(rng) < cfg.apply_prob)) continue;
        AppliedTransform a;
        a.kind = t;
        switch (t) {
            case Transform::noise:
                a.value = uniform(rng, cfg.noise_min, cfg.noise_max);
                a.seed = rng();
                break;
            case Transform::speed: a.value = uniform(rng, cfg.speed_min, cfg.speed_max); break;
            case Transform::shift: a.value = uniform(rng, cfg.shift_min_s, cfg.shift_max_s); break;
        }
        r.applied.push_back(a);
    }
    return r;
}

inline std::pair<AudioBuffer, AugmentRecord> random_chain(const AudioBuffer& buf, const AugmentConfig& cfg,
                                                          std::mt19937_64& rng) {
    auto record = draw_chain(cfg, rng);
    return {apply_record(buf, record), record};
}

}  // namespace tunedetect
