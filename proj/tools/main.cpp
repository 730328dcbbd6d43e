// carl: synth | train | eval | export-embeddings

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "carl/config.hpp"
#include "carl/errors.hpp"
#include "carl/eval.hpp"
#include "carl/json_io.hpp"
#include "carl/trainer.hpp"

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<carl::MetricsRow>& log) {
    std::ofstream out(path);
    if (!out) throw carl::DataError("cannot write " + path);
    out << "step,l_mccl,l_ptd,l_total,lr,momentum,eval_r_valence,eval_r_arousal\n";
    for (const auto& row : log) {
        out << row.step << ',' << fmt_double(row.l_mccl) << ',' << fmt_double(row.l_ptd) << ','
            << fmt_double(row.l_total) << ',' << fmt_double(row.lr) << ','
            << fmt_double(row.momentum) << ','
            << (row.eval_r_valence ? fmt_double(*row.eval_r_valence) : "") << ','
            << (row.eval_r_arousal ? fmt_double(*row.eval_r_arousal) : "") << '\n';
    }
}

void write_string_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw carl::DataError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

carl::TrainState load_compatible_checkpoint(const std::string& path) {
    auto state = carl::load_checkpoint(path);
    if (state.cfg.encoder.vocab_size != carl::kVocabSize)
        throw carl::ConfigError("checkpoint " + path + " uses vocab_size " +
                                std::to_string(state.cfg.encoder.vocab_size) +
                                ", incompatible with the byte-level tokenizer (" +
                                std::to_string(carl::kVocabSize) + ")");
    return state;
}

int cmd_synth(std::size_t n_per_quadrant, double noise, std::uint64_t seed,
              const std::string& out) {
    auto corpus = carl::generate_synthetic(n_per_quadrant, noise, seed);
    carl::save_corpus(out, corpus);
    std::cout << "wrote " << corpus.size() << " records to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& corpus_override,
              const std::string& preset_override, const std::string& resume_path,
              const std::string& out_dir) {
    carl::RunConfig run;
    if (!config_path.empty()) run = carl::load_run_config(config_path);
    if (!preset_override.empty()) {
        // --preset wins over whatever the config file set
        carl::apply_preset(run.carl, preset_override);
        run.preset = preset_override;
    }
    if (!corpus_override.empty()) run.corpus = corpus_override;
    if (run.corpus.empty()) throw carl::ConfigError("train: no corpus given (--corpus or config)");

    auto corpus = carl::load_corpus(run.corpus, {run.scale_lo, run.scale_hi});
    std::filesystem::create_directories(out_dir);

    carl::TrainResult result;
    if (!resume_path.empty()) {
        auto state = load_compatible_checkpoint(resume_path);
        result = carl::run_training(corpus, state);
    } else {
        result = carl::run_training(corpus, run.carl);
    }
    write_string_file(out_dir + "/final.ckpt", result.final_checkpoint);
    write_string_file(out_dir + "/best.ckpt", result.best_checkpoint);
    write_metrics_csv(out_dir + "/metrics.csv", result.log);
    std::cout << "trained " << result.log.size() << " steps; best step " << result.best_step
              << " (mean probe r " << result.best_metric << ")\n"
              << "wrote " << out_dir << "/{final.ckpt,best.ckpt,metrics.csv}\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& corpus_path, double scale_lo,
             double scale_hi, const std::string& tasks_arg, const std::string& out_path,
             const std::string& pca_out, std::uint64_t split_seed) {
    static const std::set<std::string> valid{"valence", "arousal", "classification", "geometry",
                                             "pca"};
    std::set<std::string> tasks;
    if (tasks_arg == "all") {
        tasks = valid;
    } else {
        std::stringstream ss(tasks_arg);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!valid.count(item)) {
                std::string names;
                for (const auto& v : valid) names += (names.empty() ? "" : ", ") + v;
                throw carl::ConfigError("eval: unknown task '" + item + "' (valid: " + names +
                                        ", or all)");
            }
            tasks.insert(item);
        }
    }

    auto state = load_compatible_checkpoint(ckpt_path);
    auto corpus = carl::load_corpus(corpus_path, {scale_lo, scale_hi});
    const std::size_t n = corpus.size(), d = state.cfg.encoder.d_model;
    auto emb = carl::embed_corpus(state.online, state.cfg.encoder, corpus);

    std::vector<double> valence(n), arousal(n);
    std::vector<std::string> emotions(n);
    for (std::size_t i = 0; i < n; ++i) {
        valence[i] = corpus.records[i].valence;
        arousal[i] = corpus.records[i].arousal;
        emotions[i] = corpus.records[i].emotion;
    }

    nlohmann::json report;
    report["checkpoint"] = ckpt_path;
    report["corpus"] = corpus_path;
    report["n_records"] = n;
    auto probe_json = [](const carl::ProbeReport& r) {
        nlohmann::json j{{"task", r.task}};
        if (r.task == "regression") {
            j["mae"] = r.mae;
            j["pearson_r"] = r.pearson_r;
            j["spearman_rho"] = r.spearman_rho;
        } else {
            j["accuracy"] = r.accuracy;
            j["precision"] = r.precision;
            j["recall"] = r.recall;
            j["f1"] = r.f1;
        }
        return j;
    };
    if (tasks.count("valence"))
        report["valence"] = probe_json(carl::regression_probe(emb, n, d, valence, split_seed));
    if (tasks.count("arousal"))
        report["arousal"] = probe_json(carl::regression_probe(emb, n, d, arousal, split_seed));
    if (tasks.count("classification")) {
        for (const auto& e : emotions)
            if (e.empty())
                throw carl::DataError("eval: classification task needs emotion tags on every record");
        report["classification"] =
            probe_json(carl::classification_probe(emb, n, d, emotions, split_seed));
    }
    if (tasks.count("geometry")) {
        auto pairs = carl::emotion_positive_pairs(emotions);
        if (pairs.empty())
            throw carl::DataError("eval: geometry task needs same-emotion pairs in the corpus");
        report["geometry"] = {{"alignment", carl::alignment(emb, n, d, pairs)},
                              {"uniformity", carl::uniformity(emb, n, d)}};
    }
    if (tasks.count("pca")) {
        auto pca = carl::pca_project(emb, n, d, 2);
        report["pca"] = {{"explained_fraction", pca.explained_fraction}};
        if (!pca_out.empty()) {
            std::ofstream out(pca_out);
            if (!out) throw carl::DataError("cannot write " + pca_out);
            out << "id,pc1,pc2,emotion\n";
            for (std::size_t i = 0; i < n; ++i) {
                const double pc1 = pca.dims > 0 ? pca.coords[i * pca.dims] : 0.0;
                const double pc2 = pca.dims > 1 ? pca.coords[i * pca.dims + 1] : 0.0;
                out << i << ',' << fmt_double(pc1) << ',' << fmt_double(pc2) << ','
                    << emotions[i] << '\n';
            }
            report["pca"]["coords_csv"] = pca_out;
        }
    }

    if (out_path.empty()) {
        std::cout << report.dump(2) << "\n";
    } else {
        std::ofstream out(out_path);
        if (!out) throw carl::DataError("cannot write " + out_path);
        out << report.dump(2) << "\n";
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& corpus_path, double scale_lo,
               double scale_hi, const std::string& out_path, const std::string& format) {
    auto state = load_compatible_checkpoint(ckpt_path);
    auto corpus = carl::load_corpus(corpus_path, {scale_lo, scale_hi});
    const std::size_t n = corpus.size(), d = state.cfg.encoder.d_model;
    auto emb = carl::embed_corpus(state.online, state.cfg.encoder, corpus);
    if (format == "csv") {
        std::ofstream out(out_path);
        if (!out) throw carl::DataError("cannot write " + out_path);
        for (std::size_t i = 0; i < n; ++i) {
            out << i;
            for (std::size_t j = 0; j < d; ++j) out << ',' << fmt_double(emb[i * d + j]);
            out << '\n';
        }
    } else if (format == "bin") {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw carl::DataError("cannot write " + out_path);
        out.write(reinterpret_cast<const char*>(emb.data()),
                  static_cast<std::streamsize>(emb.size() * sizeof(double)));
        nlohmann::json sidecar{{"n", n}, {"d", d}};
        std::ofstream side(out_path + ".json");
        side << sidecar.dump() << "\n";
    } else {
        throw carl::ConfigError("export-embeddings: format must be csv or bin");
    }
    std::cout << "wrote " << n << " x " << d << " embeddings to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CARL: momentum continuous-label contrastive learning with perturbed-token "
                 "detection"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic valence-arousal corpus");
    std::size_t n_per_quadrant = 200;
    double noise = 0.1;
    std::uint64_t seed = 7;
    std::string out = "corpus.jsonl";
    synth->add_option("--n-per-quadrant", n_per_quadrant, "records per quadrant");
    synth->add_option("--noise", noise, "uniform label noise half-width");
    synth->add_option("--seed", seed, "RNG seed");
    synth->add_option("--out", out, "output JSON-lines path");

    // train
    auto* train = app.add_subcommand("train", "run CARL training");
    std::string config_path, corpus_path, preset, resume_path, out_dir = ".";
    train->add_option("--config", config_path, "TOML or JSON config file");
    train->add_option("--corpus", corpus_path, "corpus JSON-lines path (overrides config)");
    train->add_option("--preset", preset, "paper | desk | smoke");
    train->add_option("--resume", resume_path, "checkpoint to resume from");
    train->add_option("--out-dir", out_dir, "directory for checkpoints and metrics.csv");

    // eval
    auto* eval = app.add_subcommand("eval", "probe a checkpoint on a corpus");
    std::string ckpt, eval_corpus, tasks = "all", report_out, pca_out;
    double scale_lo = -1.0, scale_hi = 1.0;
    std::uint64_t split_seed = 42;
    eval->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    eval->add_option("--corpus", eval_corpus, "corpus path")->required();
    eval->add_option("--tasks", tasks, "comma list: valence,arousal,classification,geometry,pca");
    eval->add_option("--out", report_out, "report JSON path (stdout if omitted)");
    eval->add_option("--pca-out", pca_out, "PCA coordinates CSV path");
    eval->add_option("--scale-lo", scale_lo, "raw label scale lower bound");
    eval->add_option("--scale-hi", scale_hi, "raw label scale upper bound");
    eval->add_option("--split-seed", split_seed, "probe train/test split seed");

    // export-embeddings
    auto* exp = app.add_subcommand("export-embeddings", "write sentence embeddings");
    std::string exp_ckpt, exp_corpus, exp_out = "embeddings.csv", exp_format = "csv";
    double exp_lo = -1.0, exp_hi = 1.0;
    exp->add_option("--checkpoint", exp_ckpt, "checkpoint path")->required();
    exp->add_option("--corpus", exp_corpus, "corpus path")->required();
    exp->add_option("--out", exp_out, "output path");
    exp->add_option("--format", exp_format, "csv | bin (bin writes a JSON sidecar)");
    exp->add_option("--scale-lo", exp_lo, "raw label scale lower bound");
    exp->add_option("--scale-hi", exp_hi, "raw label scale upper bound");

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(n_per_quadrant, noise, seed, out);
        if (train->parsed())
            return cmd_train(config_path, corpus_path, preset, resume_path, out_dir);
        if (eval->parsed())
            return cmd_eval(ckpt, eval_corpus, scale_lo, scale_hi, tasks, report_out, pca_out,
                            split_seed);
        if (exp->parsed())
            return cmd_export(exp_ckpt, exp_corpus, exp_lo, exp_hi, exp_out, exp_format);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const carl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const carl::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const carl::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
