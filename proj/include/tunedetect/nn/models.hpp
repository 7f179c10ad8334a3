#pragma once

// Spectrogram embedder (compact CNN + projection) and the segment classifier.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tunedetect/features.hpp"
#include "tunedetect/nn/ops.hpp"

namespace tunedetect::nn {

struct ConvBlockSpec {
    std::size_t out_channels = 16;
    std::size_t stride = 1;
    bool operator==(const ConvBlockSpec&) const = default;
};

struct EmbedderConfig {
    std::vector<ConvBlockSpec> blocks{{16, 2}, {32, 1}, {64, 1}, {128, 1}};
    std::size_t input_frames = 431;
    std::size_t input_mels = 128;
    std::size_t embedding_dim = 512;
    bool l2_normalize = true;
    double margin = 0.2;
    std::size_t batch_size = 64;
    double learning_rate = 1e-4;
    std::size_t max_epochs = 30;
    std::size_t patience = 10;
    std::uint64_t seed = 1;

    void validate() const {
        if (embedding_dim < 2) throw DomainError("EmbedderConfig: embedding_dim must be >= 2");
        if (!(margin > 0.0)) throw DomainError("EmbedderConfig: margin must be positive");
        if (blocks.empty()) throw DomainError("EmbedderConfig: need at least one conv block");
        if (batch_size < 4) throw DomainError("EmbedderConfig: batch must hold 2 samples of 2 classes");
    }

    // [channels, frames, mels] after the conv stack.
    [[nodiscard]] Shape feature_shape() const {
        std::size_t c = 1, h = input_frames, w = input_mels;
        for (const auto& b : blocks) {
            h = (h + 2 - 3) / b.stride + 1;
            w = (w + 2 - 3) / b.stride + 1;
            h /= 2;
            w /= 2;
            c = b.out_channels;
            if (h == 0 || w == 0) throw DomainError("EmbedderConfig: input too small for conv stack");
        }
        return {c, h, w};
    }
};

struct ClassifierConfig {
    std::size_t input_dim = 512;
    std::vector<std::size_t> hidden_dims{256, 64};
    std::size_t batch_size = 64;
    double learning_rate = 1e-5;
    std::size_t max_epochs = 400;
    std::size_t patience = 20;
    std::uint64_t seed = 1;
};

template <class T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

namespace detail {

// Draws in double so float and double models built from one seed agree.
template <class T>
Var<T> init_param(Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return Var<T>(std::move(t), true);
}

template <class T>
Var<T> zeros_param(Shape shape) {
    return Var<T>(Tensor<T>(std::move(shape)), true);
}

}  // namespace detail

using EmbeddingVector = std::vector<float>;

/// Conv blocks (3x3 conv, ReLU, 2x2 max-pool), mean over time, then a linear
/// projection to the embedding, optionally L2-normalized.
template <class T>
class Embedder {
public:
    explicit Embedder(EmbedderConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937_64 rng(cfg_.seed);
        std::size_t in = 1;
        for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
            const std::size_t out = cfg_.blocks[i].out_channels;
            const double std_he = std::sqrt(2.0 / static_cast<double>(in * 9));
            params_.push_back({"conv" + std::to_string(i) + ".weight",
                               detail::init_param<T>({out, in, 3, 3}, std_he, rng)});
            params_.push_back({"conv" + std::to_string(i) + ".bias", detail::zeros_param<T>({out})});
            in = out;
        }
        const auto fs = cfg_.feature_shape();
        const std::size_t flat = fs[0] * fs[2];
        params_.push_back({"proj.weight",
                           detail::init_param<T>({cfg_.embedding_dim, flat},
                                                 std::sqrt(1.0 / static_cast<double>(flat)), rng)});
        params_.push_back({"proj.bias", detail::zeros_param<T>({cfg_.embedding_dim})});
    }

    [[nodiscard]] const EmbedderConfig& config() const { return cfg_; }
    [[nodiscard]] ParamList<T>& params() { return params_; }
    [[nodiscard]] const ParamList<T>& params() const { return params_; }

    /// input: [1, frames, mels] -> [1, embedding_dim]
    [[nodiscard]] Var<T> forward(const Var<T>& input) const {
        const auto& s = input.shape();
        if (s.size() != 3 || s[0] != 1 || s[1] != cfg_.input_frames || s[2] != cfg_.input_mels)
            throw DomainError("embed: expected input [1," + std::to_string(cfg_.input_frames) + "," +
                              std::to_string(cfg_.input_mels) + "], got " + shape_str(s));
        Var<T> x = input;
        for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
            x = conv2d(x, params_[2 * i].var, params_[2 * i + 1].var, cfg_.blocks[i].stride, 1);
            x = maxpool2x2(relu(x));
        }
        x = mean_over_time(x);
        x = reshape(x, {1, x.value().size()});
        const std::size_t p = 2 * cfg_.blocks.size();
        x = linear(x, params_[p].var, params_[p + 1].var);
        return cfg_.l2_normalize ? l2_normalize(x) : x;
    }

    [[nodiscard]] Var<T> input_from(const MelSpectrogram& mel) const {
        if (mel.frames != cfg_.input_frames || mel.n_mels != cfg_.input_mels)
            throw DomainError("embed: spectrogram is " + std::to_string(mel.frames) + "x" +
                              std::to_string(mel.n_mels) + ", model expects " +
                              std::to_string(cfg_.input_frames) + "x" + std::to_string(cfg_.input_mels));
        Tensor<T> t({1, mel.frames, mel.n_mels});
        for (std::size_t i = 0; i < mel.values.size(); ++i) t[i] = static_cast<T>(mel.values[i]);
        return Var<T>(std::move(t));
    }

private:
    EmbedderConfig cfg_;
    ParamList<T> params_;
};

/// Deterministic inference; no graph is recorded.
template <class T>
EmbeddingVector embed(const Embedder<T>& model, const MelSpectrogram& mel) {
    NoGradGuard guard;
    auto out = model.forward(model.input_from(mel));
    return EmbeddingVector(out.value().data.begin(), out.value().data.end());
}

/// Dense ReLU stack ending in a single sigmoid unit.
template <class T>
class Classifier {
public:
    explicit Classifier(ClassifierConfig cfg) : cfg_(std::move(cfg)) {
        std::mt19937_64 rng(cfg_.seed);
        std::size_t in = cfg_.input_dim;
        std::size_t layer = 0;
        for (std::size_t h : cfg_.hidden_dims) {
            add_layer(layer++, in, h, std::sqrt(2.0 / static_cast<double>(in)), rng);
            in = h;
        }
        add_layer(layer, in, 1, std::sqrt(1.0 / static_cast<double>(in)), rng);
    }

    [[nodiscard]] const ClassifierConfig& config() const { return cfg_; }
    [[nodiscard]] ParamList<T>& params() { return params_; }
    [[nodiscard]] const ParamList<T>& params() const { return params_; }

    /// x: [N, input_dim] -> probabilities [N, 1]
    [[nodiscard]] Var<T> forward(const Var<T>& x) const {
        const auto& s = x.shape();
        if (s.size() != 2 || s[1] != cfg_.input_dim)
            throw DomainError("classify: expected [N," + std::to_string(cfg_.input_dim) + "], got " +
                              shape_str(s));
        Var<T> h = x;
        const std::size_t layers = params_.size() / 2;
        for (std::size_t i = 0; i < layers; ++i) {
            h = linear(h, params_[2 * i].var, params_[2 * i + 1].var);
            if (i + 1 < layers) h = relu(h);
        }
        return sigmoid(h);
    }

private:
    void add_layer(std::size_t idx, std::size_t in, std::size_t out, double stddev, std::mt19937_64& rng) {
        params_.push_back({"fc" + std::to_string(idx) + ".weight", detail::init_param<T>({out, in}, stddev, rng)});
        params_.push_back({"fc" + std::to_string(idx) + ".bias", detail::zeros_param<T>({out})});
    }

    ClassifierConfig cfg_;
    ParamList<T> params_;
};

template <class T>
double classify(const Classifier<T>& model, std::span<const float> f) {
    if (f.size() != model.config().input_dim)
        throw DomainError("classify: expected " + std::to_string(model.config().input_dim) +
                          "-dim input, got " + std::to_string(f.size()));
    NoGradGuard guard;
    Tensor<T> x({1, f.size()});
    for (std::size_t i = 0; i < f.size(); ++i) x[i] = static_cast<T>(f[i]);
    return static_cast<double>(model.forward(Var<T>(std::move(x))).value()[0]);
}

/// Copy parameter values between models of identical layout (any precision).
template <class Dst, class Src>
void copy_params(ParamList<Dst>& dst, const ParamList<Src>& src) {
    if (dst.size() != src.size()) throw DomainError("copy_params: layout mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        auto& d = dst[i].var.mutable_value();
        const auto& s = src[i].var.value();
        if (d.shape != s.shape) throw DomainError("copy_params: shape mismatch for " + dst[i].name);
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<Dst>(s[k]);
    }
}

}  // namespace tunedetect::nn
