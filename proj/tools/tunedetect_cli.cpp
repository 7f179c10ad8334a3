// tunedetect: command-line front end.
// Exit codes: 0 ok, 1 detection positive (detect --gate), 2 error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>

#include "tunedetect/featcache.hpp"
#include "tunedetect/pipeline.hpp"

namespace td = tunedetect;
namespace fs = std::filesystem;

namespace {

void info(const std::string& msg) { std::cerr << msg << '\n'; }

void report_file(const fs::path& p) { std::cout << "wrote " << p.string() << " fnv1a64=" << td::file_hash(p) << '\n'; }

struct Common {
    std::string config_path;
    td::KeyValues config;

    void load() {
        if (!config_path.empty()) config = td::KeyValues::load(config_path);
    }
};

std::vector<std::string> parse_splits(const std::string& s) {
    std::vector<std::string> out;
    for (const auto& x : td::split(s, ','))
        if (!td::trim(x).empty()) out.push_back(td::trim(x));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pitch-correction synthesis and detection toolkit"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config_path, "key = value configuration file")->check(CLI::ExistingFile);

    // tune ------------------------------------------------------------------
    auto* tune = app.add_subcommand("tune", "Apply nearest-note pitch correction to a WAV file");
    std::string tune_in, tune_out, tune_csv;
    double tune_fmin = 65, tune_fmax = 1047;
    tune->add_option("input", tune_in, "input WAV")->required()->check(CLI::ExistingFile);
    tune->add_option("output", tune_out, "output WAV")->required();
    tune->add_option("--pitch-csv", tune_csv, "write the source pitch track as CSV");
    tune->add_option("--fmin", tune_fmin, "lowest tracked pitch (Hz)");
    tune->add_option("--fmax", tune_fmax, "highest tracked pitch (Hz)");

    // dataset build ---------------------------------------------------------
    auto* dataset = app.add_subcommand("dataset", "Dataset construction");
    dataset->require_subcommand(1);
    auto* build = dataset->add_subcommand("build", "Build D1, D2D3, D4 or SYNTH pairs and a manifest");
    std::string ds_kind = "SYNTH", ds_src, ds_out;
    td::SynthCorpusConfig synth_cfg;
    bool no_acc = false;
    double val_fraction = 0.1;
    std::uint64_t ds_seed = 1;
    build->add_option("--kind", ds_kind, "SYNTH, D1, D2D3 or D4")
        ->check(CLI::IsMember({"SYNTH", "D1", "D2D3", "D4"}));
    build->add_option("--src", ds_src, "source directory (D1: vocal recordings; D2D3/D4: one folder per song)");
    build->add_option("--out", ds_out, "output directory")->required();
    build->add_option("--n-train", synth_cfg.n_train, "SYNTH training pairs");
    build->add_option("--n-val", synth_cfg.n_val, "SYNTH validation pairs");
    build->add_option("--n-test", synth_cfg.n_test, "SYNTH test pairs");
    build->add_option("--clip-seconds", synth_cfg.clip_s, "SYNTH train/val clip length");
    build->add_option("--test-seconds", synth_cfg.test_song_s, "SYNTH test song length");
    build->add_flag("--no-accompaniment", no_acc, "SYNTH: vocal pairs only");
    build->add_option("--val-fraction", val_fraction, "D1/D2D3: share of performers/songs held out");
    build->add_option("--seed", ds_seed, "random seed");

    // features --------------------------------------------------------------
    auto* features = app.add_subcommand("features", "Cache gated mel-spectrogram segments of a manifest");
    std::string ft_manifest, ft_out, ft_splits = "train,val,test";
    features->add_option("--manifest", ft_manifest, "manifest CSV or its directory")->required();
    features->add_option("--out", ft_out, "cache directory")->required();
    features->add_option("--splits", ft_splits, "comma-separated splits to cache");

    // train -----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Model training");
    train->require_subcommand(1);
    auto* train_emb = train->add_subcommand("embedder", "Train the triplet embedder");
    auto* train_cls = train->add_subcommand("classifier", "Train the segment classifier on frozen embeddings");
    std::string tr_features, tr_out, tr_history, tr_embedder, tr_kind;
    std::optional<std::size_t> tr_epochs, tr_batch, tr_patience;
    std::optional<double> tr_lr;
    std::optional<std::uint64_t> tr_seed;
    for (auto* sc : {train_emb, train_cls}) {
        sc->add_option("--features", tr_features, "feature cache directory")->required();
        sc->add_option("--out", tr_out, "checkpoint path")->required();
        sc->add_option("--history", tr_history, "loss history CSV");
        sc->add_option("--kind", tr_kind, "restrict to vocal_pair or song_pair");
        sc->add_option("--epochs", tr_epochs, "maximum epochs");
        sc->add_option("--batch", tr_batch, "batch size");
        sc->add_option("--lr", tr_lr, "learning rate");
        sc->add_option("--patience", tr_patience, "early-stopping patience (epochs)");
        sc->add_option("--seed", tr_seed, "random seed");
    }
    train_cls->add_option("--embedder", tr_embedder, "embedder checkpoint")->required()->check(CLI::ExistingFile);

    // detect ----------------------------------------------------------------
    auto* detect = app.add_subcommand("detect", "Score one file and print the song verdict");
    std::string dt_in, dt_emb, dt_cls, dt_csv;
    double tau_seg = 0.5;
    std::size_t tau_cnt = 1;
    std::optional<double> tau_frac;
    bool gate = false;
    detect->add_option("input", dt_in, "input WAV")->required()->check(CLI::ExistingFile);
    detect->add_option("--embedder", dt_emb, "embedder checkpoint")->required()->check(CLI::ExistingFile);
    detect->add_option("--classifier", dt_cls, "classifier checkpoint")->required()->check(CLI::ExistingFile);
    detect->add_option("--segments-csv", dt_csv, "write per-segment likelihoods");
    detect->add_option("--tau-seg", tau_seg, "segment threshold");
    detect->add_option("--tau-cnt", tau_cnt, "positive segments required");
    detect->add_option("--tau-frac", tau_frac, "fraction of segments required (overrides --tau-cnt)");
    detect->add_flag("--gate", gate, "exit 1 when the verdict is positive");

    // sweep -----------------------------------------------------------------
    auto* sweep = app.add_subcommand("sweep", "Song-level metrics across count thresholds");
    std::string sw_manifest, sw_emb, sw_cls, sw_out, sw_cache, sw_split = "test";
    td::SweepOptions sw_opt;
    sweep->add_option("--manifest", sw_manifest, "manifest CSV or directory")->required();
    sweep->add_option("--embedder", sw_emb, "embedder checkpoint");
    sweep->add_option("--classifier", sw_cls, "classifier checkpoint");
    sweep->add_option("--out", sw_out, "report CSV")->required();
    sweep->add_option("--cache", sw_cache, "likelihood cache CSV (read when it exists, written otherwise)");
    sweep->add_option("--split", sw_split, "manifest split to evaluate");
    sweep->add_option("--tau-seg", sw_opt.tau_seg, "segment threshold");
    sweep->add_option("--tau-max", sw_opt.tau_cnt_max, "largest count threshold (0: most segments seen)");
    sweep->add_flag("--fraction-mode", sw_opt.fraction_mode, "sweep segment fractions instead of counts");

    // robustness ------------------------------------------------------------
    auto* robust = app.add_subcommand("robustness", "Evaluate under MP3 or random post-processing");
    std::string rb_manifest, rb_emb, rb_cls, rb_out, rb_prov, rb_mode = "random_processing";
    std::optional<std::uint64_t> rb_seed;
    std::optional<double> rb_prob;
    robust->add_option("--manifest", rb_manifest, "manifest CSV or directory")->required();
    robust->add_option("--embedder", rb_emb, "embedder checkpoint")->required()->check(CLI::ExistingFile);
    robust->add_option("--classifier", rb_cls, "classifier checkpoint")->required()->check(CLI::ExistingFile);
    robust->add_option("--mode", rb_mode, "mp3 or random_processing")->check(CLI::IsMember({"mp3", "random_processing"}));
    robust->add_option("--out", rb_out, "report CSV")->required();
    robust->add_option("--provenance", rb_prov, "per-song transform record CSV");
    robust->add_option("--seed", rb_seed, "augmentation seed");
    robust->add_option("--apply-prob", rb_prob, "per-transform probability");
    robust->add_option("--tau-seg", tau_seg, "segment threshold");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        common.load();
        const auto& cfg = common.config;
        const auto detect_opt = td::detect_options_from(cfg);

        if (*tune) {
            td::PitchParams pp;
            pp.fmin = tune_fmin;
            pp.fmax = tune_fmax;
            auto vocal = td::to_analysis_rate(td::load_wav(tune_in));
            auto r = td::autotune_detailed(vocal, pp);
            td::save_wav(tune_out, r.output);
            report_file(tune_out);
            if (!tune_csv.empty()) {
                r.source_track.write_csv(tune_csv);
                report_file(tune_csv);
            }
            return 0;
        }

        if (*build) {
            const fs::path out(ds_out);
            if (ds_kind == "SYNTH") {
                synth_cfg = td::synth_corpus_config_from(cfg.with_prefix("synth."), synth_cfg);
                synth_cfg.with_accompaniment = !no_acc && synth_cfg.with_accompaniment;
                if (build->count("--seed")) synth_cfg.seed = ds_seed;
                auto rep = td::build_synth_corpus(out, synth_cfg, info);
                std::cout << "pairs " << rep.pairs << " label_valid " << rep.label_valid << '\n';
                report_file(out / "manifest.csv");
                return 0;
            }
            if (ds_src.empty()) throw td::Error("--src is required for " + ds_kind);
            if (ds_kind == "D1") {
                td::D1Config c;
                c.val_fraction = val_fraction;
                c.seed = ds_seed;
                td::build_d1(ds_src, out, c, info);
                report_file(out / "manifest.csv");
            } else {
                td::StemConfig c;
                c.val_fraction = val_fraction;
                c.seed = ds_seed;
                if (ds_kind == "D2D3") {
                    auto m = td::build_d2_d3(ds_src, out, c, info);
                    report_file(m.vocals.root / "manifest.csv");
                    report_file(m.songs.root / "manifest.csv");
                } else {
                    auto m = td::build_d4(ds_src, out, c, info);
                    report_file(m.root / "manifest.csv");
                }
            }
            return 0;
        }

        if (*features) {
            auto m = td::DatasetManifest::load(ft_manifest);
            auto c = td::build_feature_cache(m, ft_out, parse_splits(ft_splits), detect_opt.segment_s, detect_opt.gate_ratio);
            std::cout << "cached " << c.items.size() << " segments\n";
            report_file(fs::path(ft_out) / "index.csv");
            return 0;
        }

        if (*train_emb || *train_cls) {
            auto cache = td::FeatureCache::load(tr_features);
            const bool emb = train_emb->parsed();
            const auto t0 = std::chrono::steady_clock::now();
            auto elapsed = [&] {
                return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            };
            if (emb) {
                auto ec = td::nn::embedder_config_from(cfg.with_prefix("embedder."));
                if (tr_epochs) ec.max_epochs = *tr_epochs;
                if (tr_batch) ec.batch_size = *tr_batch;
                if (tr_lr) ec.learning_rate = *tr_lr;
                if (tr_patience) ec.patience = *tr_patience;
                if (tr_seed) ec.seed = *tr_seed;
                auto tr = cache.labeled("train", tr_kind);
                auto va = cache.labeled("val", tr_kind);
                info("embedder: " + std::to_string(tr.size()) + " train / " + std::to_string(va.size()) + " val segments");
                auto res = td::nn::train_embedder<float>(tr, va, ec, [&](const td::nn::EmbedderEpoch& r) {
                    info("epoch " + std::to_string(r.epoch) + " train " + td::fmt_fixed(r.train_loss, 5) + " val " +
                         td::fmt_fixed(r.val_loss, 5) + " triplets " + std::to_string(r.triplets) + " (" +
                         td::fmt_fixed(elapsed(), 1) + " s)");
                });
                td::nn::save_embedder(tr_out, res.model);
                std::cout << "best_epoch " << res.best_epoch << '\n';
                report_file(tr_out);
                if (!tr_history.empty()) {
                    td::nn::write_history_csv(tr_history, res.history);
                    report_file(tr_history);
                }
            } else {
                auto cc = td::nn::classifier_config_from(cfg.with_prefix("classifier."));
                if (tr_epochs) cc.max_epochs = *tr_epochs;
                if (tr_batch) cc.batch_size = *tr_batch;
                if (tr_lr) cc.learning_rate = *tr_lr;
                if (tr_patience) cc.patience = *tr_patience;
                if (tr_seed) cc.seed = *tr_seed;
                const auto embedder = td::nn::load_embedder(tr_embedder);
                cc.input_dim = embedder.config().embedding_dim;
                auto embed_split = [&](const std::string& split) {
                    td::nn::LabeledEmbeddings out;
                    for (const auto& it : cache.items) {
                        if (it.split != split || (!tr_kind.empty() && it.kind != tr_kind)) continue;
                        out.features.push_back(td::nn::embed(embedder, td::load_mel(cache.dir / it.mel_path)));
                        out.labels.push_back(it.label);
                    }
                    return out;
                };
                auto tr = embed_split("train");
                auto va = embed_split("val");
                info("classifier: " + std::to_string(tr.size()) + " train / " + std::to_string(va.size()) + " val embeddings");
                auto res = td::nn::train_classifier<float>(tr, va, cc, [&](const td::nn::ClassifierEpoch& r) {
                    if (r.epoch % 10 == 0 || r.epoch == 1)
                        info("epoch " + std::to_string(r.epoch) + " train " + td::fmt_fixed(r.train_loss, 5) + " val " +
                             td::fmt_fixed(r.val_loss, 5) + " acc " + td::fmt_fixed(r.val_accuracy, 2));
                });
                td::nn::save_classifier(tr_out, res.model);
                std::cout << "best_epoch " << res.best_epoch << '\n';
                report_file(tr_out);
                if (!tr_history.empty()) {
                    td::nn::write_history_csv(tr_history, res.history);
                    report_file(tr_history);
                }
            }
            return 0;
        }

        if (*detect) {
            auto models = td::DetectorModels::load(dt_emb, dt_cls);
            auto scores = td::detect_segments(td::load_wav(dt_in), models, detect_opt);
            if (detect_opt.separator.empty()) info("note: no separator configured; input treated as an isolated vocal");
            auto y = td::likelihoods(scores);
            auto v = tau_frac ? td::song_verdict_fraction(y, tau_seg, *tau_frac) : td::song_verdict(y, tau_seg, tau_cnt);
            if (!dt_csv.empty()) {
                std::string csv = "segment_index,start_s,likelihood\n";
                for (const auto& s : scores)
                    csv += std::to_string(s.index) + "," + td::fmt_fixed(static_cast<double>(s.index) * detect_opt.segment_s, 3) +
                           "," + td::fmt_double(s.likelihood) + "\n";
                td::nn::write_bytes(dt_csv, csv);
                report_file(dt_csv);
            }
            std::cout << "segments " << v.n_segments << " positive " << v.positives << " required " << v.tau_cnt
                      << " verdict " << (v.is_autotuned ? "autotuned" : "not_autotuned") << '\n';
            return gate && v.is_autotuned ? 1 : 0;
        }

        if (*sweep) {
            auto m = td::DatasetManifest::load(sw_manifest);
            std::vector<td::SongScores> scores;
            if (!sw_cache.empty() && fs::exists(sw_cache)) {
                scores = td::scores_from_csv(td::read_file_bytes(sw_cache));
                info("using cached likelihoods from " + sw_cache);
            } else {
                if (sw_emb.empty() || sw_cls.empty()) throw td::Error("sweep: --embedder and --classifier are required");
                auto models = td::DetectorModels::load(sw_emb, sw_cls);
                scores = td::score_manifest(m, models, detect_opt, sw_split);
                if (!sw_cache.empty()) {
                    td::nn::write_bytes(sw_cache, td::scores_to_csv(scores));
                    report_file(sw_cache);
                }
            }
            auto rep = td::threshold_sweep(scores, sw_opt, "clean");
            td::nn::write_bytes(sw_out, rep.to_csv());
            report_file(sw_out);
            std::cout << "segment_accuracy " << td::fmt_fixed(rep.segment.accuracy, 2) << " best_song_accuracy "
                      << td::fmt_fixed(rep.curve.empty() ? 0.0 : rep.best().m.accuracy, 2) << '\n';
            return 0;
        }

        if (*robust) {
            auto m = td::DatasetManifest::load(rb_manifest);
            auto models = td::DetectorModels::load(rb_emb, rb_cls);
            auto ac = td::augment_config_from(cfg);
            if (rb_seed) ac.seed = *rb_seed;
            if (rb_prob) ac.apply_prob = *rb_prob;
            td::SweepOptions so;
            so.tau_seg = tau_seg;
            auto res = td::robustness_eval(m, models, ac, td::parse_robustness_mode(rb_mode), detect_opt, so,
                                           td::resolve_codec(cfg));
            td::nn::write_bytes(rb_out, res.report.to_csv());
            report_file(rb_out);
            if (!rb_prov.empty()) {
                td::nn::write_bytes(rb_prov, td::provenance_csv(res.scores));
                report_file(rb_prov);
            }
            std::cout << "segment_accuracy " << td::fmt_fixed(res.report.segment.accuracy, 2) << " best_song_accuracy "
                      << td::fmt_fixed(res.report.curve.empty() ? 0.0 : res.report.best().m.accuracy, 2) << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
