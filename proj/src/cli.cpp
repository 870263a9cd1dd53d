#include "hnll/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>

#include "hnll/corpus.hpp"
#include "hnll/diagnostics.hpp"
#include "hnll/error.hpp"
#include "hnll/experiment.hpp"
#include "hnll/gradcheck.hpp"
#include "hnll/io_util.hpp"
#include "hnll/trainer.hpp"

namespace fs = std::filesystem;

namespace hnll {

namespace {

struct TrainFlags {
    std::string loss = "mse";
    std::string diag_transform = "softplus-clamp";
    std::string diag_weighting = "per-component";
    std::vector<std::size_t> hidden{256};
    TrainConfig cfg;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_loss) {
    if (with_loss) cmd->add_option("--loss", f.loss, "mae | mse | sisdr | nll-diag | nll-block | hybrid")->capture_default_str();
    cmd->add_option("--delta", f.cfg.delta, "Cholesky diagonal floor")->capture_default_str();
    cmd->add_option("--beta", f.cfg.beta, "uncertainty weighting exponent")->capture_default_str();
    cmd->add_option("--alpha", f.cfg.alpha, "hybrid NLL weight")->capture_default_str();
    cmd->add_option("--lr", f.cfg.lr)->capture_default_str();
    cmd->add_option("--batch-size", f.cfg.batch_size)->capture_default_str();
    cmd->add_option("--epochs", f.cfg.epochs)->capture_default_str();
    cmd->add_option("--grad-clip", f.cfg.grad_clip, "global norm; 0 disables")->capture_default_str();
    cmd->add_option("--seed", f.cfg.seed)->capture_default_str();
    cmd->add_option("--hidden", f.hidden, "trunk layer sizes")->capture_default_str()->delimiter(',');
    cmd->add_option("--context", f.cfg.model.context_frames, "frames of context on each side")->capture_default_str();
    cmd->add_option("--diag-transform", f.diag_transform, "softplus-clamp | clamp")->capture_default_str();
    cmd->add_option("--chol-head-gain", f.cfg.model.chol_head_gain)->capture_default_str();
    cmd->add_flag("--residual-mean", f.cfg.model.residual_mean, "predict the mean as noisy input plus a correction");
    cmd->add_option("--diag-weighting", f.diag_weighting, "per-component | per-bin-min")->capture_default_str();
}

TrainConfig resolve_train(TrainFlags& f, bool with_loss) {
    TrainConfig c = f.cfg;
    if (with_loss) c.loss = parse_loss(f.loss);
    c.model.hidden_sizes = f.hidden;
    c.model.diag_transform = parse_diag_transform(f.diag_transform);
    if (f.diag_weighting == "per-component") c.diag_weighting = DiagWeighting::PerComponent;
    else if (f.diag_weighting == "per-bin-min") c.diag_weighting = DiagWeighting::PerBinMin;
    else throw ConfigError("unknown --diag-weighting '" + f.diag_weighting + "'");
    c.validate();
    return c;
}

std::vector<Utterance> load_corpus_split(const std::string& corpus, const std::string& split, std::size_t frame_len,
                                         std::size_t hop) {
    auto u = load_split(resolve_manifest(corpus), split, frame_len, hop);
    if (u.empty()) throw ConfigError("corpus split '" + split + "' is empty");
    return u;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Heteroscedastic Gaussian NLL speech enhancement toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // gen-corpus
    CorpusConfig corpus_cfg;
    std::string corpus_out;
    std::vector<std::string> noise_kinds{"white", "pink", "babble-proxy"};
    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
    gen->add_option("--out", corpus_out, "output directory")->required();
    gen->add_option("--seed", corpus_cfg.seed)->capture_default_str();
    gen->add_option("--n-train", corpus_cfg.n_train)->capture_default_str();
    gen->add_option("--n-val", corpus_cfg.n_val)->capture_default_str();
    gen->add_option("--n-test", corpus_cfg.n_test)->capture_default_str();
    gen->add_option("--snr-lo", corpus_cfg.snr_train_lo_db)->capture_default_str();
    gen->add_option("--snr-hi", corpus_cfg.snr_train_hi_db)->capture_default_str();
    gen->add_option("--snr-test", corpus_cfg.snr_test_list_db)->capture_default_str()->delimiter(',');
    gen->add_option("--duration", corpus_cfg.duration_s)->capture_default_str();
    gen->add_option("--sample-rate", corpus_cfg.sample_rate)->capture_default_str();
    gen->add_option("--noise-kinds", noise_kinds)->capture_default_str()->delimiter(',');

    // train
    TrainFlags train_flags;
    std::string train_corpus, train_out;
    auto* tr = app.add_subcommand("train", "train a model and keep the best validation checkpoint");
    tr->add_option("--corpus", train_corpus, "corpus directory or manifest")->required();
    tr->add_option("--out", train_out, "output directory")->required();
    add_train_flags(tr, train_flags, true);
    bool train_eval = true;
    tr->add_option("--evaluate", train_eval, "also evaluate on the test split")->capture_default_str();

    // evaluate
    std::string eval_model, eval_corpus, eval_out, eval_split = "test";
    auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a corpus split");
    ev->add_option("--model", eval_model, "checkpoint path")->required();
    ev->add_option("--corpus", eval_corpus)->required();
    ev->add_option("--out", eval_out, "output directory")->required();
    ev->add_option("--split", eval_split)->capture_default_str();

    // grad-check
    GradCheckConfig gc;
    auto* gcc = app.add_subcommand("grad-check", "finite-difference check of analytic gradients");
    gcc->add_option("--loss", gc.loss, "mae | mse | sisdr | nll-diag | nll-block | hybrid | model")->capture_default_str();
    gcc->add_option("--delta", gc.delta)->capture_default_str();
    gcc->add_option("--beta", gc.beta)->capture_default_str();
    gcc->add_option("--alpha", gc.alpha)->capture_default_str();
    gcc->add_option("--trials", gc.trials)->capture_default_str();
    gcc->add_option("--tol", gc.tol)->capture_default_str();
    gcc->add_option("--step", gc.step)->capture_default_str();
    gcc->add_option("--seed", gc.seed)->capture_default_str();
    gcc->add_flag("!--unfrozen-weights", gc.freeze_weights, "let finite differences move the uncertainty weights");

    // qq
    std::string qq_model, qq_corpus, qq_out, qq_split = "test", qq_mode = "marginal";
    std::vector<std::size_t> qq_bins{10, 40, 80};
    std::size_t qq_k = 99;
    auto* qq = app.add_subcommand("qq", "export Q-Q points of standardized residuals");
    qq->add_option("--model", qq_model)->required();
    qq->add_option("--corpus", qq_corpus)->required();
    qq->add_option("--out", qq_out, "CSV path")->required();
    qq->add_option("--split", qq_split)->capture_default_str();
    qq->add_option("--bins", qq_bins, "frequency bins")->capture_default_str()->delimiter(',');
    qq->add_option("--k", qq_k, "quantiles per series")->capture_default_str();
    qq->add_option("--standardize", qq_mode, "marginal | whitened")->capture_default_str();

    // undersample-demo
    UndersampleConfig us;
    std::string us_out, us_opt = "sgd";
    std::vector<double> us_deltas{1e-4, 1e-2}, us_betas{0.0, 0.5};
    bool us_fixed = false;
    auto* ud = app.add_subcommand("undersample-demo", "two-bin toy showing the undersampling effect");
    ud->add_option("--out", us_out, "output directory")->required();
    ud->add_option("--deltas", us_deltas)->capture_default_str()->delimiter(',');
    ud->add_option("--betas", us_betas)->capture_default_str()->delimiter(',');
    ud->add_option("--steps", us.steps)->capture_default_str();
    ud->add_option("--lr", us.lr)->capture_default_str();
    ud->add_option("--samples", us.samples)->capture_default_str();
    ud->add_option("--seed", us.seed)->capture_default_str();
    ud->add_option("--optimizer", us_opt, "sgd | adam")->capture_default_str();
    ud->add_flag("--fixed-sigma", us_fixed, "hold sigma at the true per-bin value");

    // compare
    std::string cmp_a, cmp_b;
    auto* cmp = app.add_subcommand("compare", "paired t-test between two eval_items.csv files");
    cmp->add_option("--a", cmp_a)->required();
    cmp->add_option("--b", cmp_b)->required();

    // run-experiment
    std::string ex_spec, ex_preset, ex_corpus, ex_out;
    std::vector<std::string> ex_compare;
    TrainFlags ex_flags;
    std::string ex_nll_transform = "clamp";
    auto* ex = app.add_subcommand("run-experiment", "train and compare a grid of variants");
    ex->add_option("--spec", ex_spec, "experiment JSON");
    ex->add_option("--preset", ex_preset, "desk | sweep");
    ex->add_option("--corpus", ex_corpus);
    ex->add_option("--out", ex_out);
    ex->add_option("--compare", ex_compare, "two variant names")->delimiter(',')->expected(2);
    ex->add_option("--nll-diag-transform", ex_nll_transform, "diagonal transform for preset NLL variants")
        ->capture_default_str();
    add_train_flags(ex, ex_flags, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            corpus_cfg.noise_kinds.clear();
            for (const auto& k : noise_kinds) corpus_cfg.noise_kinds.push_back(parse_noise_kind(k));
            corpus_cfg.validate();
            out << to_json(corpus_cfg).dump(2) << "\n";
            const auto m = build_corpus(corpus_cfg, corpus_out);
            out << "wrote " << m.size() << " entries to " << corpus_out << "\n";
            return 0;
        }
        if (*tr) {
            const TrainConfig cfg = resolve_train(train_flags, true);
            out << to_json(cfg).dump(2) << "\n";
            const fs::path manifest = resolve_manifest(train_corpus);
            const auto train_set = load_corpus_split(train_corpus, "train", cfg.frame_len, cfg.hop);
            const auto val_set = load_split(manifest, "val", cfg.frame_len, cfg.hop);
            TrainResult r = train(cfg, train_set, val_set, [&](const EpochRecord& e) {
                out << "epoch " << e.epoch << " train_loss=" << fmt(e.train_loss) << " val_si_sdr=" << fmt(e.val_si_sdr)
                    << " val_loss=" << fmt(e.val_loss) << " clip_events=" << e.clip_events << "\n";
                out.flush();
            });
            write_train_outputs(train_out, cfg, r);
            out << "best epoch " << r.best_epoch << "\n";
            if (train_eval) {
                const auto test_set = load_split(manifest, "test", cfg.frame_len, cfg.hop);
                if (!test_set.empty()) {
                    const EvalReport rep = evaluate(r.best, test_set);
                    write_eval_outputs(train_out, rep);
                    out << eval_summary_csv(rep);
                }
            }
            return 0;
        }
        if (*ev) {
            const Checkpoint ck = load_checkpoint(eval_model);
            const std::size_t frame_len = 2 * (ck.config.bins - 1);
            nlohmann::json echo = {{"model", eval_model}, {"corpus", eval_corpus}, {"split", eval_split}};
            out << echo.dump(2) << "\n";
            std::vector<std::string> missing;
            const auto set = load_split(resolve_manifest(eval_corpus), eval_split, frame_len, frame_len / 2, &missing);
            for (const auto& m : missing) err << "missing: " << m << "\n";
            if (set.empty()) throw ConfigError("corpus split '" + eval_split + "' has no readable items");
            const EvalReport rep = evaluate(ck, set);
            echo["missing"] = missing;
            write_eval_outputs(eval_out, rep);
            write_file_atomic(fs::path(eval_out) / "eval_config.json", echo.dump(2) + "\n");
            out << eval_summary_csv(rep);
            return 0;
        }
        if (*gcc) {
            nlohmann::json echo = {{"loss", gc.loss}, {"delta", gc.delta}, {"beta", gc.beta}, {"alpha", gc.alpha},
                                   {"trials", gc.trials}, {"tol", gc.tol},   {"step", gc.step}, {"seed", gc.seed},
                                   {"freeze_weights", gc.freeze_weights}};
            out << echo.dump(2) << "\n";
            const GradCheckReport r = run_grad_check(gc);
            out << "grad-check loss=" << gc.loss << " trials=" << r.trials << " coordinates=" << r.coordinates
                << " max_rel_error=" << fmt(r.max_rel_error) << " tol=" << fmt(gc.tol) << " "
                << (r.passed ? "PASS" : "FAIL") << "\n";
            return r.passed ? 0 : 2;
        }
        if (*qq) {
            const Checkpoint ck = load_checkpoint(qq_model);
            QQStandardize mode;
            if (qq_mode == "marginal") mode = QQStandardize::Marginal;
            else if (qq_mode == "whitened") mode = QQStandardize::Whitened;
            else throw ConfigError("unknown --standardize '" + qq_mode + "'");
            nlohmann::json echo = {{"model", qq_model}, {"corpus", qq_corpus}, {"split", qq_split},
                                   {"bins", qq_bins},   {"k", qq_k},           {"standardize", qq_mode}};
            out << echo.dump(2) << "\n";
            const std::size_t frame_len = 2 * (ck.config.bins - 1);
            const auto set = load_corpus_split(qq_corpus, qq_split, frame_len, frame_len / 2);
            std::string csv = "theoretical,empirical,freq_bin,part\n";
            for (std::size_t bin : qq_bins) {
                for (QQPart part : {QQPart::Real, QQPart::Imag}) {
                    std::vector<double> r, s;
                    for (const auto& u : set) {
                        const ModelOutput mo = forward(ck.params, ck.config, u.noisy_spec);
                        collect_standardization(u.clean_spec, mo.pred, bin, part, mode, r, s);
                    }
                    const QQSeries series = qq_points(r, s, qq_k);
                    const LineFit fit = qq_fit(series);
                    for (auto [th, em] : series.points)
                        csv += fmt(th) + "," + fmt(em) + "," + std::to_string(bin) + "," + to_string(part) + "\n";
                    out << "bin=" << bin << " part=" << to_string(part) << " n=" << r.size()
                        << " slope=" << fmt(fit.slope) << " intercept=" << fmt(fit.intercept) << "\n";
                }
            }
            write_file_atomic(qq_out, csv);
            fs::path cfg_path = qq_out;
            cfg_path += ".config.json";
            write_file_atomic(cfg_path, echo.dump(2) + "\n");
            return 0;
        }
        if (*ud) {
            if (us_opt == "sgd") us.optimizer = ToyOptimizer::Sgd;
            else if (us_opt == "adam") us.optimizer = ToyOptimizer::Adam;
            else throw ConfigError("unknown --optimizer '" + us_opt + "'");
            us.learn_sigma = !us_fixed;
            nlohmann::json echo = to_json(us);
            echo["deltas"] = us_deltas;
            echo["betas"] = us_betas;
            echo.erase("delta");
            echo.erase("beta");
            out << echo.dump(2) << "\n";
            fs::create_directories(us_out);
            std::string summary = "delta,beta,sq_error_low,sq_error_high,ratio,mean_grad_low,mean_grad_high\n";
            for (double d : us_deltas) {
                for (double b : us_betas) {
                    UndersampleConfig c = us;
                    c.delta = d;
                    c.beta = b;
                    const UndersampleResult r = undersample_demo(c);
                    const auto& last = r.trace.back();
                    write_file_atomic(fs::path(us_out) / ("trace_d" + fmt(d) + "_b" + fmt(b) + ".csv"),
                                      undersample_csv(r));
                    summary += fmt(d) + "," + fmt(b) + "," + fmt(last.sq_error[0]) + "," + fmt(last.sq_error[1]) + "," +
                               fmt(r.error_ratio()) + "," + fmt(last.mean_grad[0]) + "," + fmt(last.mean_grad[1]) + "\n";
                }
            }
            write_file_atomic(fs::path(us_out) / "summary.csv", summary);
            write_file_atomic(fs::path(us_out) / "config.json", echo.dump(2) + "\n");
            out << summary;
            return 0;
        }
        if (*cmp) {
            auto read_items = [](const std::string& path) {
                std::map<std::string, double> m;
                std::istringstream in(read_file(path));
                std::string line;
                std::getline(in, line);
                if (line.rfind("id,", 0) != 0) throw ConfigError(path + ": not an eval_items.csv file");
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    std::vector<std::string> cols;
                    std::stringstream ss(line);
                    std::string c;
                    while (std::getline(ss, c, ',')) cols.push_back(c);
                    if (cols.size() < 4) throw ConfigError(path + ": malformed row");
                    m[cols[0]] = std::stod(cols[3]);
                }
                return m;
            };
            const auto a = read_items(cmp_a);
            const auto b = read_items(cmp_b);
            std::vector<double> xa, xb;
            for (const auto& [id, v] : a) {
                auto it = b.find(id);
                if (it == b.end()) throw ConfigError("compare: id " + id + " missing from " + cmp_b);
                xa.push_back(v);
                xb.push_back(it->second);
            }
            if (xa.size() != b.size()) throw ConfigError("compare: the two files cover different utterances");
            const TTestResult r = paired_t_test(xa, xb);
            double md = 0.0;
            for (std::size_t i = 0; i < xa.size(); ++i) md += xa[i] - xb[i];
            md /= static_cast<double>(xa.size());
            out << "paired t-test on per-utterance SI-SDR (a - b), mean difference " << fmt(md) << " dB\n";
            out << format_t_test(r) << "\n";
            return 0;
        }
        if (*ex) {
            ExperimentSpec spec;
            if (!ex_spec.empty()) {
                nlohmann::json j;
                try {
                    j = nlohmann::json::parse(read_file(ex_spec));
                } catch (const nlohmann::json::exception& e) {
                    throw ConfigError(ex_spec + ": " + e.what());
                }
                spec = experiment_spec_from_json(j);
            } else if (!ex_preset.empty()) {
                TrainConfig base = resolve_train(ex_flags, false);
                spec.seed = base.seed;
                spec.variants = preset_variants(ex_preset, base);
                const DiagTransform t = parse_diag_transform(ex_nll_transform);
                for (auto& v : spec.variants)
                    if (uses_covariance(v.train.loss)) v.train.model.diag_transform = t;
            } else {
                throw ConfigError("run-experiment needs --spec or --preset");
            }
            if (!ex_corpus.empty()) spec.corpus = ex_corpus;
            if (!ex_out.empty()) spec.out_dir = ex_out;
            if (!ex_compare.empty()) spec.compare = std::make_pair(ex_compare[0], ex_compare[1]);
            spec.validate();
            out << to_json(spec).dump(2) << "\n";
            const ExperimentReport rep = run_experiment(spec);
            out << comparison_csv(rep);
            if (rep.ttest) out << rep.ttest_a << " vs " << rep.ttest_b << ": " << format_t_test(*rep.ttest) << "\n";
            for (const auto& o : rep.outcomes)
                if (!o.ok) err << "variant " << o.name << " failed: " << o.error << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace hnll
