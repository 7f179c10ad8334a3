#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tunedetect/nn/checkpoint.hpp"
#include "tunedetect/nn/gradcheck.hpp"
#include "tunedetect/nn/train.hpp"

using namespace tunedetect;
using namespace tunedetect::nn;

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double sigma = 1.0) {
    std::normal_distribution<double> g(0.0, sigma);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = g(rng);
    return t;
}

MelSpectrogram random_mel(std::size_t frames, std::size_t mels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    MelSpectrogram m{frames, mels, std::vector<float>(frames * mels)};
    for (auto& v : m.values) v = u(rng);
    return m;
}

double distance(const EmbeddingVector& a, const EmbeddingVector& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

double norm(const EmbeddingVector& a) {
    double s = 0;
    for (float v : a) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

EmbedderConfig toy_embedder_config() {
    EmbedderConfig c;
    c.blocks = {{4, 1}, {8, 1}};
    c.input_frames = 32;
    c.input_mels = 16;
    c.embedding_dim = 8;
    c.batch_size = 16;
    c.learning_rate = 1e-3;
    c.max_epochs = 25;
    c.patience = 25;
    c.seed = 3;
    return c;
}

// Mel spectrogram (32 frames x 16 mels) of a noisy tone with random amplitude.
MelSpectrogram toy_tone(double hz, std::mt19937_64& rng) {
    FeatureParams fp;
    fp.n_mels = 16;
    const double amp = uniform(rng, 0.1, 0.8);
    auto b = tdtest::sine(hz * uniform(rng, 0.98, 1.02), amp, 31.0 * 1024.0 / 44100.0 + 1e-6, 44100,
                          uniform(rng, 0.0, 6.28));
    std::normal_distribution<float> g(0.0f, 0.05f);
    for (auto& s : b.samples) s += g(rng);
    return melspectrogram(b, fp);
}

}  // namespace

// ----------------------------------------------------------------------------
// Embedder

TEST(Tensor, StorageIsCacheLineAligned) {
    for (std::size_t n : {1u, 3u, 17u, 1000u}) {
        nn::Tensor<float> t({n});
        auto copy = t;
        const nn::Tensor<double> d({n, 2});
        EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data.data()) % 64, 0u);
        EXPECT_EQ(reinterpret_cast<std::uintptr_t>(copy.data.data()) % 64, 0u);
        EXPECT_EQ(reinterpret_cast<std::uintptr_t>(d.data.data()) % 64, 0u);
    }
}

TEST(Embed, UnitNormDeterministicAndLocallySmooth) {
    Embedder<float> model(EmbedderConfig{});
    auto mel = random_mel(431, 128, 1);
    auto e1 = embed(model, mel);
    ASSERT_EQ(e1.size(), 512u);
    EXPECT_NEAR(norm(e1), 1.0, 1e-5);
    EXPECT_EQ(embed(model, mel), e1);
    auto bumped = mel;
    for (std::size_t i = 0; i < bumped.values.size(); i += 7) bumped.values[i] += 1e-6f;
    EXPECT_LT(distance(embed(model, bumped), e1), 1e-3);
}

TEST(Embed, DimensionMismatchIsError) {
    Embedder<float> model(toy_embedder_config());
    EXPECT_THROW(embed(model, random_mel(431, 128, 2)), DomainError);
}

TEST(Embed, ConfigValidation) {
    auto c = toy_embedder_config();
    c.embedding_dim = 1;
    EXPECT_THROW(Embedder<float>{c}, DomainError);
    c = toy_embedder_config();
    c.margin = 0;
    EXPECT_THROW(Embedder<float>{c}, DomainError);
}

TEST(Embed, FloatAndDoubleModelsAgree) {
    auto cfg = toy_embedder_config();
    Embedder<float> f(cfg);
    Embedder<double> d(cfg);
    auto mel = random_mel(32, 16, 5);
    EXPECT_LT(distance(embed(f, mel), embed(d, mel)), 1e-5);
}

// ----------------------------------------------------------------------------
// Triplet loss and mining

TEST(TripletLoss, Examples) {
    const std::vector<double> a{0.0, 0.0}, p{std::sqrt(0.30), 0.0}, n{0.0, std::sqrt(0.40)};
    EXPECT_NEAR(triplet_loss<double>(a, p, n, 0.2), 0.10, 1e-12);
    const std::vector<double> eq{0.0, std::sqrt(0.30)};
    EXPECT_NEAR(triplet_loss<double>(a, p, eq, 0.2), 0.2, 1e-12);
    const std::vector<double> far{0.0, 1.0};
    EXPECT_EQ(triplet_loss<double>(a, p, far, 0.2), 0.0);
}

TEST(TripletLoss, TranslationInvariant) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        auto t = random_tensor({4, 6}, rng);
        std::span<const double> a(t.data.data(), 6), p(t.data.data() + 6, 6), n(t.data.data() + 12, 6),
            c(t.data.data() + 18, 6);
        std::vector<double> a2(6), p2(6), n2(6);
        for (int i = 0; i < 6; ++i) {
            a2[i] = a[i] + c[i];
            p2[i] = p[i] + c[i];
            n2[i] = n[i] + c[i];
        }
        EXPECT_NEAR(triplet_loss<double>(a, p, n, 0.2), triplet_loss<double>(a2, p2, n2, 0.2), 1e-12);
    }
}

TEST(MineSemiHard, MatchesBruteForceOnEightItems) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        auto e = random_tensor({8, 3}, rng, 0.4);
        std::vector<int> labels{0, 0, 0, 0, 1, 1, 1, 1};
        shuffle_in_place(labels, rng);
        auto mined = mine_semi_hard(e, std::span<const int>(labels), 0.2);
        ASSERT_EQ(mined, tdtest::brute_force_semi_hard(e, labels, 0.2));
        for (const auto& t : mined) EXPECT_EQ(labels[t.anchor], labels[t.positive]);
    }
}

TEST(MineSemiHard, MatchesBruteForceOnAllSmallBatches) {
    std::mt19937_64 rng(1000);
    std::size_t semi_seen = 0, fallback_seen = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng() % 15;
        const std::size_t d = 1 + rng() % 4;
        const int classes = 1 + static_cast<int>(rng() % 3);
        auto e = random_tensor({n, d}, rng, 0.3);
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng() % static_cast<std::uint64_t>(classes));
        auto mined = mine_semi_hard(e, std::span<const int>(labels), 0.2);
        ASSERT_EQ(mined, tdtest::brute_force_semi_hard(e, labels, 0.2)) << "trial " << trial;
        for (const auto& t : mined) {
            const double dap = squared_distance<double>({e.data.data() + t.anchor * d, d}, {e.data.data() + t.positive * d, d});
            const double dan = squared_distance<double>({e.data.data() + t.anchor * d, d}, {e.data.data() + t.negative * d, d});
            (dan > dap ? semi_seen : fallback_seen)++;
        }
    }
    EXPECT_GT(semi_seen, 0u);
    EXPECT_GT(fallback_seen, 0u);
}

TEST(MineSemiHard, SingleClassIsEmpty) {
    std::mt19937_64 rng(9);
    auto e = random_tensor({6, 4}, rng);
    std::vector<int> labels(6, 1);
    EXPECT_TRUE(mine_semi_hard(e, std::span<const int>(labels), 0.2).empty());
}

// ----------------------------------------------------------------------------
// Gradient checks (double precision)

TEST(GradCheck, ConvolutionBlock) {
    std::mt19937_64 rng(11);
    for (std::size_t stride : {1u, 2u}) {
        Var<double> x(random_tensor({2, 7, 6}, rng), true);
        Var<double> w(random_tensor({3, 2, 3, 3}, rng, 0.5), true);
        Var<double> b(random_tensor({3}, rng), true);
        auto res = grad_check({x, w, b}, [&] { return sum_all(sigmoid(conv2d(x, w, b, stride, 1))); }, 30);
        EXPECT_LT(res.max_rel_error, 1e-4) << "stride " << stride;
        EXPECT_GT(res.checked, 0u);
    }
}

TEST(GradCheck, PoolingTimeMeanAndProjection) {
    std::mt19937_64 rng(12);
    Var<double> x(random_tensor({3, 8, 6}, rng), true);
    Var<double> w(random_tensor({4, 9}, rng), true);
    Var<double> b(random_tensor({4}, rng), true);
    auto res = grad_check({x, w, b}, [&] {
        auto h = mean_over_time(maxpool2x2(x));
        return sum_all(sigmoid(l2_normalize(linear(reshape(h, {1, 9}), w, b))));
    });
    EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, DenseReluBce) {
    ClassifierConfig cfg;
    cfg.input_dim = 6;
    cfg.hidden_dims = {5, 4};
    cfg.seed = 5;
    Classifier<double> model(cfg);
    std::mt19937_64 rng(13);
    for (auto& p : model.params())
        if (p.name.ends_with(".bias")) p.var.mutable_value() = random_tensor(p.var.shape(), rng, 0.1);
    Var<double> x(random_tensor({7, 6}, rng), true);
    std::vector<double> t{1, 0, 1, 1, 0, 0, 1};
    std::vector<Var<double>> inputs{x};
    for (auto& p : model.params()) inputs.push_back(p.var);
    auto res = grad_check(inputs, [&] { return bce_mean(model.forward(x), std::span<const double>(t)); }, 20);
    EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, TripletLossAwayFromHinge) {
    std::mt19937_64 rng(14);
    const double margin = 0.2;
    Var<double> e(random_tensor({6, 4}, rng, 0.4), true);
    std::vector<Triplet> all, kept;
    for (std::size_t a = 0; a < 6; ++a)
        for (std::size_t p = 0; p < 6; ++p)
            for (std::size_t n = 0; n < 6; ++n)
                if (a != p && a != n && p != n) all.push_back({a, p, n});
    const auto& v = e.value().data;
    for (const auto& t : all) {
        const double slack = squared_distance<double>({v.data() + t.anchor * 4, 4}, {v.data() + t.positive * 4, 4}) -
                             squared_distance<double>({v.data() + t.anchor * 4, 4}, {v.data() + t.negative * 4, 4}) +
                             margin;
        if (std::abs(slack) > 1e-3) kept.push_back(t);
    }
    ASSERT_GT(kept.size(), 10u);
    auto res = grad_check({e}, [&] { return triplet_loss_mean(e, kept, margin); }, 24);
    EXPECT_LT(res.max_rel_error, 1e-4);
    auto normed = grad_check({e}, [&] {
        auto n = l2_normalize(e);
        return triplet_loss_mean(n, mine_semi_hard(n.value(), std::span<const int>(std::vector<int>{0, 0, 0, 1, 1, 1}), margin), margin);
    }, 24);
    EXPECT_LT(normed.max_rel_error, 1e-4);
}

// ----------------------------------------------------------------------------
// BCE and classifier

TEST(Bce, ClosedFormsAndClamp) {
    EXPECT_NEAR(bce_loss(0.5, 1), std::log(2.0), 1e-12);
    EXPECT_NEAR(bce_loss(0.5, 0), std::log(2.0), 1e-12);
    EXPECT_LT(bce_loss(1.0 - 1e-9, 1), 1e-6);
    EXPECT_NEAR(bce_loss(0.0, 1), -std::log(kBceClamp), 1e-9);
    EXPECT_TRUE(std::isfinite(bce_loss(1.0, 0)));

    Var<double> y(Tensor<double>({1, 1}, std::vector<double>{0.5}), true);
    std::vector<double> t{1.0};
    auto loss = bce_mean(y, std::span<const double>(t));
    backward(loss);
    EXPECT_NEAR(y.grad()[0], -2.0, 1e-12);
}

TEST(Classify, ZeroWeightsGiveOneHalf) {
    Classifier<float> model(ClassifierConfig{});
    for (auto& p : model.params()) p.var.mutable_value().fill(0.0f);
    std::vector<float> f(512, 0.3f);
    EXPECT_EQ(classify(model, f), 0.5);
}

TEST(Classify, OutputInsideUnitIntervalAndMonotoneInBias) {
    Classifier<double> model(ClassifierConfig{});
    std::mt19937_64 rng(15);
    std::normal_distribution<float> g;
    std::vector<float> f(512);
    for (auto& v : f) v = g(rng);
    double prev = classify(model, f);
    EXPECT_GT(prev, 0.0);
    EXPECT_LT(prev, 1.0);
    auto& bias = model.params().back().var.mutable_value();
    for (int step = 0; step < 10; ++step) {
        bias[0] += 0.25;
        const double y = classify(model, f);
        EXPECT_GT(y, prev);
        EXPECT_LT(y, 1.0);
        prev = y;
    }
    EXPECT_THROW(classify(model, std::vector<float>(10)), DomainError);
}

// ----------------------------------------------------------------------------
// Optimizer and training

TEST(Adam, ZeroLearningRateLeavesParameters) {
    Classifier<float> model(ClassifierConfig{});
    const auto before = tunedetect::nn::detail::snapshot(model.params());
    Adam<float> opt(model.params(), 0.0);
    std::vector<float> t(4, 1.0f);
    Tensor<float> x({4, 512}, 0.5f);
    opt.zero_grad();
    backward(bce_mean(model.forward(Var<float>(x)), std::span<const float>(t)));
    opt.step();
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(model.params()[i].var.value(), before[i].var.value());
}

TEST(TrainEmbedder, ZeroLearningRateKeepsInitialModel) {
    auto cfg = toy_embedder_config();
    cfg.learning_rate = 0.0;
    cfg.max_epochs = 2;
    std::mt19937_64 rng(16);
    LabeledMels data;
    for (int i = 0; i < 8; ++i) {
        data.mels.push_back(toy_tone(i % 2 ? 440.0 : 2000.0, rng));
        data.labels.push_back(i % 2);
    }
    auto result = train_embedder<float>(data, {}, cfg);
    Embedder<float> fresh(cfg);
    for (std::size_t i = 0; i < fresh.params().size(); ++i)
        EXPECT_EQ(result.model.params()[i].var.value(), fresh.params()[i].var.value());
}

TEST(TrainEmbedder, RejectsSingleClass) {
    LabeledMels data;
    for (int i = 0; i < 4; ++i) {
        data.mels.push_back(random_mel(32, 16, static_cast<std::uint64_t>(i)));
        data.labels.push_back(0);
    }
    EXPECT_THROW(train_embedder<float>(data, {}, toy_embedder_config()), DomainError);
}

TEST(TrainEmbedder, SeparatesTwoTones) {
    auto cfg = toy_embedder_config();
    std::mt19937_64 rng(17);
    LabeledMels train, val, test;
    auto fill = [&](LabeledMels& d, int n) {
        for (int i = 0; i < n; ++i) {
            d.mels.push_back(toy_tone(i % 2 ? 330.0 : 660.0, rng));
            d.labels.push_back(i % 2);
        }
    };
    fill(train, 32);
    fill(val, 16);
    fill(test, 16);
    std::vector<EmbedderEpoch> seen;
    auto result = train_embedder<float>(train, val, cfg, [&](const EmbedderEpoch& e) { seen.push_back(e); });
    ASSERT_EQ(seen.size(), result.history.size());
    ASSERT_FALSE(result.history.empty());

    // Running minimum of the validation loss is non-increasing and improves on the start.
    double running = std::numeric_limits<double>::infinity();
    for (const auto& h : result.history) {
        EXPECT_LE(std::min(running, h.val_loss), running);
        running = std::min(running, h.val_loss);
    }
    EXPECT_LT(running, validation_triplet_loss(Embedder<float>(cfg), val, cfg.batch_size, cfg.seed + 17));

    std::vector<EmbeddingVector> e;
    for (const auto& m : test.mels) e.push_back(embed(result.model, m));
    double max_intra = 0, min_inter = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < e.size(); ++i)
        for (std::size_t j = i + 1; j < e.size(); ++j) {
            const double d = distance(e[i], e[j]);
            if (test.labels[i] == test.labels[j]) {
                max_intra = std::max(max_intra, d);
            } else {
                min_inter = std::min(min_inter, d);
            }
        }
    EXPECT_GT(min_inter, max_intra);
}

TEST(TrainEmbedder, DeterministicForSeed) {
    auto cfg = toy_embedder_config();
    cfg.max_epochs = 2;
    std::mt19937_64 rng(18);
    LabeledMels data;
    for (int i = 0; i < 12; ++i) {
        data.mels.push_back(toy_tone(i % 2 ? 500.0 : 1500.0, rng));
        data.labels.push_back(i % 2);
    }
    auto a = train_embedder<float>(data, {}, cfg);
    auto b = train_embedder<float>(data, {}, cfg);
    EXPECT_EQ(encode_checkpoint(to_keyvalues(cfg), a.model.params()),
              encode_checkpoint(to_keyvalues(cfg), b.model.params()));
}

namespace {

LabeledEmbeddings two_clusters(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.0f, 0.3f);
    LabeledEmbeddings d;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        EmbeddingVector f(dim);
        for (std::size_t c = 0; c < dim; ++c) f[c] = g(rng) + (label ? 1.0f : -1.0f) * (c < 4 ? 1.0f : 0.0f);
        d.features.push_back(std::move(f));
        d.labels.push_back(label);
    }
    return d;
}

ClassifierConfig toy_classifier_config() {
    ClassifierConfig c;
    c.input_dim = 16;
    c.hidden_dims = {16, 8};
    c.batch_size = 16;
    c.learning_rate = 1e-2;
    c.max_epochs = 60;
    c.patience = 60;
    c.seed = 2;
    return c;
}

}  // namespace

TEST(TrainClassifier, SeparableClustersAndFlippedLabels) {
    auto cfg = toy_classifier_config();
    auto train = two_clusters(200, 16, 1), val = two_clusters(100, 16, 2);
    auto result = train_classifier<float>(train, val, cfg);
    double acc = 0;
    bce_eval(result.model, val, &acc);
    EXPECT_GE(acc, 99.0);

    auto flip = [](LabeledEmbeddings d) {
        for (auto& l : d.labels) l = 1 - l;
        return d;
    };
    double acc_on_flipped = 0;
    bce_eval(result.model, flip(val), &acc_on_flipped);
    EXPECT_NEAR(acc_on_flipped, 100.0 - acc, 1e-9);

    auto flipped = train_classifier<float>(flip(train), flip(val), cfg);
    double acc_flipped = 0;
    bce_eval(flipped.model, flip(val), &acc_flipped);
    EXPECT_GE(acc_flipped, 99.0);
}

TEST(TrainClassifier, ZeroEpochsReturnsInitialModel) {
    auto cfg = toy_classifier_config();
    cfg.max_epochs = 0;
    auto result = train_classifier<float>(two_clusters(20, 16, 3), {}, cfg);
    Classifier<float> fresh(cfg);
    EXPECT_TRUE(result.history.empty());
    EXPECT_EQ(result.best_epoch, 0u);
    for (std::size_t i = 0; i < fresh.params().size(); ++i)
        EXPECT_EQ(result.model.params()[i].var.value(), fresh.params()[i].var.value());
}

TEST(TrainClassifier, RejectsSingleLabel) {
    auto d = two_clusters(10, 16, 4);
    std::fill(d.labels.begin(), d.labels.end(), 1);
    EXPECT_THROW(train_classifier<float>(d, {}, toy_classifier_config()), DomainError);
    d.labels[0] = 2;
    EXPECT_THROW(train_classifier<float>(d, {}, toy_classifier_config()), DomainError);
}

TEST(BalancedBatches, EveryBatchHoldsTwoClassesAndCoversAll) {
    std::vector<int> labels;
    for (int i = 0; i < 70; ++i) labels.push_back(i < 30 ? 0 : 1);
    std::mt19937_64 rng(19);
    auto batches = balanced_batches(std::span<const int>(labels), 16, rng);
    std::vector<int> seen(labels.size(), 0);
    for (const auto& b : batches) {
        std::set<int> classes;
        for (auto i : b) {
            classes.insert(labels[i]);
            ++seen[i];
        }
        EXPECT_EQ(classes.size(), 2u);
    }
    for (int s : seen) EXPECT_EQ(s, 1);
}

// ----------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, EmbedderRoundTrip) {
    auto cfg = toy_embedder_config();
    cfg.seed = 99;
    Embedder<float> model(cfg);
    tdtest::TempPath dir;
    save_embedder(dir.path / "ck" / "embedder.ckpt", model);
    auto loaded = load_embedder(dir.path / "ck" / "embedder.ckpt");
    EXPECT_EQ(loaded.config().blocks, cfg.blocks);
    EXPECT_EQ(loaded.config().embedding_dim, cfg.embedding_dim);
    EXPECT_EQ(loaded.config().input_frames, cfg.input_frames);
    auto mel = random_mel(32, 16, 7);
    EXPECT_EQ(embed(loaded, mel), embed(model, mel));
    EXPECT_THROW(load_classifier(dir.path / "ck" / "embedder.ckpt"), FormatError);
}

TEST(Checkpoint, ClassifierRoundTripAndCorruption) {
    auto cfg = toy_classifier_config();
    Classifier<float> model(cfg);
    tdtest::TempPath dir;
    save_classifier(dir.path / "c.ckpt", model);
    auto loaded = load_classifier(dir.path / "c.ckpt");
    EXPECT_EQ(loaded.config().hidden_dims, cfg.hidden_dims);
    std::vector<float> f(16, 0.25f);
    EXPECT_EQ(classify(loaded, f), classify(model, f));

    const auto bytes = read_file_bytes(dir.path / "c.ckpt");
    EXPECT_EQ(bytes.substr(0, 8), "TDCKPT01");
    EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    EXPECT_THROW(decode_checkpoint("garbage"), FormatError);
}
