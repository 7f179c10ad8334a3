#pragma once

// Training loops. Both are single-threaded and deterministic for a fixed seed.

#include <functional>
#include <limits>
#include <map>
#include <random>

#include "tunedetect/nn/checkpoint.hpp"
#include "tunedetect/nn/optim.hpp"
#include "tunedetect/random.hpp"

namespace tunedetect::nn {

namespace detail {

template <class T>
ParamList<T> snapshot(const ParamList<T>& params) {
    ParamList<T> out;
    for (const auto& p : params) out.push_back({p.name, Var<T>(p.var.value(), false)});
    return out;
}

}  // namespace detail

/// Batches alternate classes so each holds two labels whenever the data allows.
inline std::vector<std::vector<std::size_t>> balanced_batches(std::span<const int> labels, std::size_t batch_size,
                                                              std::mt19937_64& rng) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::vector<std::vector<std::size_t>> pools;
    for (auto& [_, idx] : by_class) {
        shuffle_in_place(idx, rng);
        pools.push_back(std::move(idx));
    }
    std::vector<std::size_t> order;
    for (std::size_t k = 0;; ++k) {
        bool any = false;
        for (const auto& pool : pools)
            if (k < pool.size()) {
                order.push_back(pool[k]);
                any = true;
            }
        if (!any) break;
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < order.size(); s += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + batch_size)));
    // A runt batch that cannot form triplets joins its predecessor.
    if (batches.size() > 1) {
        std::map<int, std::size_t> counts;
        for (auto i : batches.back()) ++counts[labels[i]];
        std::size_t usable = 0;
        for (auto& [_, c] : counts) usable += c >= 2;
        if (counts.size() < 2 || usable < 1) {
            auto tail = std::move(batches.back());
            batches.pop_back();
            batches.back().insert(batches.back().end(), tail.begin(), tail.end());
        }
    }
    return batches;
}

/// Mean hinge loss over every valid (a, p, n) triplet of the batch.
template <class T>
double batch_all_triplet_loss(const Tensor<T>& e, std::span<const int> labels, double margin, std::size_t* count = nullptr) {
    const std::size_t n = e.dim(0), d = e.dim(1);
    auto row = [&](std::size_t i) { return std::span<const T>(e.data.data() + i * d, d); };
    std::vector<double> dist(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dist[i * n + j] = static_cast<double>(squared_distance(row(i), row(j)));
    double total = 0;
    std::size_t c = 0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t p = 0; p < n; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            for (std::size_t k = 0; k < n; ++k) {
                if (labels[k] == labels[a]) continue;
                total += std::max(0.0, dist[a * n + p] - dist[a * n + k] + margin);
                ++c;
            }
        }
    if (count) *count = c;
    return c ? total / static_cast<double>(c) : 0.0;
}

struct EmbedderEpoch {
    std::size_t epoch = 0;
    double train_loss = 0;   // mean mined semi-hard loss
    double val_loss = 0;     // batch-all loss on the validation set
    std::size_t triplets = 0;
};

struct ClassifierEpoch {
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_accuracy = 0;  // percent
};

template <class Model, class Epoch>
struct TrainResult {
    Model model;
    std::vector<Epoch> history;
    std::size_t best_epoch = 0;  // 0: initial parameters retained
};

struct LabeledMels {
    std::vector<MelSpectrogram> mels;
    std::vector<int> labels;
    [[nodiscard]] std::size_t size() const { return mels.size(); }
};

struct LabeledEmbeddings {
    std::vector<EmbeddingVector> features;
    std::vector<int> labels;
    [[nodiscard]] std::size_t size() const { return features.size(); }
};

namespace detail {

inline void require_two_classes(std::span<const int> labels, const char* what, std::size_t min_per_class) {
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    std::size_t ok = 0;
    for (auto& [_, c] : counts) ok += c >= min_per_class;
    if (counts.size() < 2 || ok < 2)
        throw DomainError(std::string(what) + ": need at least two classes with " + std::to_string(min_per_class) +
                          " samples each");
}

template <class T>
Tensor<T> embed_all(const Embedder<T>& model, const std::vector<MelSpectrogram>& mels) {
    const std::size_t d = model.config().embedding_dim;
    Tensor<T> out({mels.size(), d});
    for (std::size_t i = 0; i < mels.size(); ++i) {
        auto e = embed(model, mels[i]);
        std::copy(e.begin(), e.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return out;
}

}  // namespace detail

template <class T>
double validation_triplet_loss(const Embedder<T>& model, const LabeledMels& val, std::size_t batch_size,
                               std::uint64_t seed) {
    NoGradGuard guard;
    std::mt19937_64 rng(seed);
    auto batches = balanced_batches(val.labels, batch_size, rng);
    const auto all = detail::embed_all(model, val.mels);
    const std::size_t d = model.config().embedding_dim;
    double total = 0;
    std::size_t weight = 0;
    for (const auto& b : batches) {
        Tensor<T> e({b.size(), d});
        std::vector<int> lab;
        for (std::size_t r = 0; r < b.size(); ++r) {
            std::copy_n(all.data.begin() + static_cast<std::ptrdiff_t>(b[r] * d), d,
                        e.data.begin() + static_cast<std::ptrdiff_t>(r * d));
            lab.push_back(val.labels[b[r]]);
        }
        std::size_t c = 0;
        double l = batch_all_triplet_loss(e, lab, model.config().margin, &c);
        total += l * static_cast<double>(c);
        weight += c;
    }
    return weight ? total / static_cast<double>(weight) : 0.0;
}

/// Adam on mined semi-hard triplets, early-stopped on validation loss; the
/// best parameters seen (including the initial ones) are returned.
template <class T = float>
TrainResult<Embedder<T>, EmbedderEpoch> train_embedder(const LabeledMels& train, const LabeledMels& val,
                                                       const EmbedderConfig& cfg,
                                                       const std::function<void(const EmbedderEpoch&)>& on_epoch = {}) {
    cfg.validate();
    if (train.mels.size() != train.labels.size() || val.mels.size() != val.labels.size())
        throw DomainError("train_embedder: label count mismatch");
    detail::require_two_classes(train.labels, "train_embedder", 2);
    const bool has_val = !val.mels.empty();
    if (has_val) detail::require_two_classes(val.labels, "train_embedder (validation)", 2);

    Embedder<T> model(cfg);
    Adam<T> opt(model.params(), cfg.learning_rate);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const std::uint64_t val_seed = cfg.seed + 17;
    const T margin = static_cast<T>(cfg.margin);

    const LabeledMels& monitor = has_val ? val : train;
    double best = validation_triplet_loss(model, monitor, cfg.batch_size, val_seed);
    TrainResult<Embedder<T>, EmbedderEpoch> result{model, {}, 0};
    ParamList<T> best_params = detail::snapshot(model.params());
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        auto batches = balanced_batches(train.labels, cfg.batch_size, rng);
        double loss_sum = 0;
        std::size_t n_loss = 0, n_trip = 0;
        for (const auto& b : batches) {
            std::vector<Var<T>> rows;
            std::vector<int> lab;
            rows.reserve(b.size());
            for (auto i : b) {
                rows.push_back(model.forward(model.input_from(train.mels[i])));
                lab.push_back(train.labels[i]);
            }
            auto e = stack_rows(rows);
            auto triplets = mine_semi_hard(e.value(), std::span<const int>(lab), margin);
            if (triplets.empty()) continue;
            opt.zero_grad();
            auto loss = triplet_loss_mean(e, triplets, margin);
            backward(loss);
            opt.step();
            loss_sum += static_cast<double>(loss.value()[0]);
            ++n_loss;
            n_trip += triplets.size();
        }
        EmbedderEpoch rec;
        rec.epoch = epoch;
        rec.train_loss = n_loss ? loss_sum / static_cast<double>(n_loss) : 0.0;
        rec.val_loss = validation_triplet_loss(model, monitor, cfg.batch_size, val_seed);
        rec.triplets = n_trip;
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (rec.val_loss < best) {
            best = rec.val_loss;
            best_params = detail::snapshot(model.params());
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    copy_params(model.params(), best_params);
    result.model = model;
    return result;
}

template <class T>
double bce_eval(const Classifier<T>& model, const LabeledEmbeddings& data, double* accuracy = nullptr) {
    NoGradGuard guard;
    if (data.features.empty()) {
        if (accuracy) *accuracy = 0;
        return 0.0;
    }
    double total = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double y = classify(model, data.features[i]);
        total += bce_loss(y, data.labels[i]);
        correct += (y > 0.5) == (data.labels[i] == 1);
    }
    if (accuracy) *accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
    return total / static_cast<double>(data.size());
}

/// Mini-batch BCE with Adam; keeps the parameters with the lowest validation
/// loss (the initial parameters count as epoch 0).
template <class T = float>
TrainResult<Classifier<T>, ClassifierEpoch> train_classifier(
    const LabeledEmbeddings& train, const LabeledEmbeddings& val, const ClassifierConfig& cfg,
    const std::function<void(const ClassifierEpoch&)>& on_epoch = {}) {
    if (train.features.size() != train.labels.size() || val.features.size() != val.labels.size())
        throw DomainError("train_classifier: label count mismatch");
    for (int l : train.labels)
        if (l != 0 && l != 1) throw DomainError("train_classifier: labels must be 0 or 1");
    detail::require_two_classes(train.labels, "train_classifier", 1);
    if (cfg.batch_size == 0) throw DomainError("train_classifier: batch_size must be positive");

    Classifier<T> model(cfg);
    Adam<T> opt(model.params(), cfg.learning_rate);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const LabeledEmbeddings& monitor = val.features.empty() ? train : val;
    double best = bce_eval(model, monitor);
    ParamList<T> best_params = detail::snapshot(model.params());
    TrainResult<Classifier<T>, ClassifierEpoch> result{model, {}, 0};
    std::size_t since_best = 0;
    const std::size_t dim = cfg.input_dim;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_in_place(order, rng);
        double loss_sum = 0;
        std::size_t n_batches = 0;
        for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - s);
            Tensor<T> x({n, dim});
            std::vector<T> t(n);
            for (std::size_t r = 0; r < n; ++r) {
                const auto& f = train.features[order[s + r]];
                if (f.size() != dim) throw DomainError("train_classifier: feature dimension mismatch");
                for (std::size_t c = 0; c < dim; ++c) x[r * dim + c] = static_cast<T>(f[c]);
                t[r] = static_cast<T>(train.labels[order[s + r]]);
            }
            opt.zero_grad();
            auto loss = bce_mean(model.forward(Var<T>(std::move(x))), std::span<const T>(t));
            backward(loss);
            opt.step();
            loss_sum += static_cast<double>(loss.value()[0]);
            ++n_batches;
        }
        ClassifierEpoch rec;
        rec.epoch = epoch;
        rec.train_loss = n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0;
        rec.val_loss = bce_eval(model, monitor, &rec.val_accuracy);
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (rec.val_loss < best) {
            best = rec.val_loss;
            best_params = detail::snapshot(model.params());
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    copy_params(model.params(), best_params);
    result.model = model;
    return result;
}

inline void write_history_csv(const std::filesystem::path& path, const std::vector<EmbedderEpoch>& h) {
    std::string out = "epoch,train_loss,val_loss,triplets\n";
    for (const auto& r : h)
        out += std::to_string(r.epoch) + "," + fmt_double(r.train_loss) + "," + fmt_double(r.val_loss) + "," +
               std::to_string(r.triplets) + "\n";
    write_bytes(path, out);
}

inline void write_history_csv(const std::filesystem::path& path, const std::vector<ClassifierEpoch>& h) {
    std::string out = "epoch,train_loss,val_loss,val_accuracy\n";
    for (const auto& r : h)
        out += std::to_string(r.epoch) + "," + fmt_double(r.train_loss) + "," + fmt_double(r.val_loss) + "," +
               fmt_double(r.val_accuracy) + "\n";
    write_bytes(path, out);
}

}  // namespace tunedetect::nn
