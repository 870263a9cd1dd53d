#include "hnll/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <set>
#include <thread>

#include "hnll/error.hpp"
#include "hnll/io_util.hpp"
#include "hnll/rng.hpp"

namespace fs = std::filesystem;

namespace hnll {

// ---- undersampling toy ----------------------------------------------------

void UndersampleConfig::validate() const {
    if (!(delta > 0.0)) throw ConfigError("undersample: delta must be positive");
    if (!(beta >= 0.0)) throw ConfigError("undersample: beta must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("undersample: lr must be positive");
    if (samples < 2 || samples % 2) throw ConfigError("undersample: samples must be even and >= 2");
    if (!(var_low > 0.0) || !(var_high > 0.0)) throw ConfigError("undersample: variances must be positive");
    if (!(init_sigma > 0.0)) throw ConfigError("undersample: init_sigma must be positive");
}

nlohmann::json to_json(const UndersampleConfig& c) {
    return {{"delta", c.delta},           {"beta", c.beta},
            {"steps", c.steps},           {"lr", c.lr},
            {"samples", c.samples},       {"seed", c.seed},
            {"var_low", c.var_low},       {"var_high", c.var_high},
            {"target_mean", c.target_mean}, {"init_sigma", c.init_sigma},
            {"learn_sigma", c.learn_sigma}, {"optimizer", c.optimizer == ToyOptimizer::Sgd ? "sgd" : "adam"}};
}

double UndersampleResult::error_ratio() const {
    if (trace.empty()) return 0.0;
    const auto& s = trace.back();
    return s.sq_error[1] / s.sq_error[0];
}

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

UndersampleResult undersample_demo(const UndersampleConfig& cfg) {
    cfg.validate();
    constexpr std::size_t F = 2;
    const std::size_t T = cfg.samples;
    const double sd[F] = {std::sqrt(cfg.var_low), std::sqrt(cfg.var_high)};

    // Antithetic standard-normal draws rescaled so every (bin, part) column
    // has mean exactly 0 and mean square exactly 1.
    Rng rng(cfg.seed);
    Spectrogram x(T, F);
    for (std::size_t f = 0; f < F; ++f) {
        for (int part = 0; part < 2; ++part) {
            std::vector<double> e(T);
            for (std::size_t t = 0; t < T / 2; ++t) {
                e[t] = rng.normal();
                e[t + T / 2] = -e[t];
            }
            double ms = 0.0;
            for (double v : e) ms += v * v;
            const double k = 1.0 / std::sqrt(ms / static_cast<double>(T));
            for (std::size_t t = 0; t < T; ++t) {
                double& dst = part == 0 ? x.re_at(t, f) : x.im_at(t, f);
                dst = cfg.target_mean + sd[f] * e[t] * k;
            }
        }
    }

    // Parameters: mean[f][part], raw sigma[f][part].
    std::vector<double> params(8, 0.0);
    const double s0 = std::log(std::expm1(cfg.init_sigma));
    for (std::size_t i = 4; i < 8; ++i) params[i] = s0;
    AdamState adam;

    UndersampleResult res;
    auto snapshot = [&](std::size_t step, double loss, const DensityPrediction& pred) {
        UndersampleStep s;
        s.step = step;
        s.loss = loss;
        for (std::size_t f = 0; f < F; ++f) {
            std::vector<double> r, v;
            double sig = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                r.push_back(pred.mean.re_at(t, f) - x.re_at(t, f));
                v.push_back(pred.chol.at(0, t, f) * pred.chol.at(0, t, f));
                r.push_back(pred.mean.im_at(t, f) - x.im_at(t, f));
                v.push_back(pred.chol.at(1, t, f) * pred.chol.at(1, t, f));
            }
            sig = 0.5 * (pred.chol.at(0, 0, f) + pred.chol.at(1, 0, f));
            s.mean_grad[f] = undersampling_gradient_estimate(r, v);
            const double er = params[2 * f] - cfg.target_mean;
            const double ei = params[2 * f + 1] - cfg.target_mean;
            s.sq_error[f] = 0.5 * (er * er + ei * ei);
            s.sigma[f] = sig;
        }
        res.trace.push_back(s);
    };

    for (std::size_t step = 0;; ++step) {
        DensityPrediction pred;
        pred.mean = Spectrogram(T, F);
        std::vector<double> raw(2 * T * F);
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t t = 0; t < T; ++t) {
                pred.mean.re_at(t, f) = params[2 * f];
                pred.mean.im_at(t, f) = params[2 * f + 1];
                for (std::size_t part = 0; part < 2; ++part) {
                    raw[part * T * F + t * F + f] =
                        cfg.learn_sigma ? softplus(params[4 + 2 * f + part]) : sd[f];
                }
            }
        }
        pred.chol = CholeskyField::from_raw(CovLayout::Diagonal, T, F, std::move(raw), cfg.delta);
        const LossReport rep = diag_nll(x, pred, cfg.beta);
        snapshot(step, rep.value, pred);
        if (step == cfg.steps) break;

        std::vector<double> g(8, 0.0);
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t t = 0; t < T; ++t) {
                g[2 * f] += rep.grad_mean.re_at(t, f);
                g[2 * f + 1] += rep.grad_mean.im_at(t, f);
                if (cfg.learn_sigma) {
                    for (std::size_t part = 0; part < 2; ++part) {
                        g[4 + 2 * f + part] += rep.grad_chol[part * T * F + t * F + f];
                    }
                }
            }
        }
        if (cfg.learn_sigma)
            for (std::size_t i = 4; i < 8; ++i) g[i] *= sigmoid(params[i]);

        if (cfg.optimizer == ToyOptimizer::Adam) {
            adam_step(params, g, adam, cfg.lr, step);
        } else {
            for (std::size_t i = 0; i < 8; ++i) {
                if (!std::isfinite(g[i])) throw NonFiniteError("undersample: non-finite gradient", step);
                params[i] -= cfg.lr * g[i];
            }
        }
    }
    return res;
}

std::string undersample_csv(const UndersampleResult& r) {
    std::string s = "step,loss,mean_grad_low,mean_grad_high,sq_error_low,sq_error_high,sigma_low,sigma_high\n";
    for (const auto& p : r.trace) {
        s += std::to_string(p.step) + "," + format_double(p.loss) + "," + format_double(p.mean_grad[0]) + "," +
             format_double(p.mean_grad[1]) + "," + format_double(p.sq_error[0]) + "," + format_double(p.sq_error[1]) +
             "," + format_double(p.sigma[0]) + "," + format_double(p.sigma[1]) + "\n";
    }
    return s;
}

// ---- experiments ----------------------------------------------------------

void ExperimentSpec::validate() const {
    if (variants.empty()) throw ConfigError("experiment: no variants");
    std::set<std::string> names;
    for (const auto& v : variants) {
        if (v.name.empty()) throw ConfigError("experiment: variant name is empty");
        if (v.name.find_first_of("/\\,\n") != std::string::npos)
            throw ConfigError("experiment: variant name '" + v.name + "' contains a reserved character");
        if (!names.insert(v.name).second) throw ConfigError("experiment: duplicate variant name '" + v.name + "'");
        v.train.validate();
    }
    if (compare) {
        if (!names.count(compare->first) || !names.count(compare->second))
            throw ConfigError("experiment: compare names must refer to variants");
        if (compare->first == compare->second) throw ConfigError("experiment: compare needs two distinct variants");
    }
    if (corpus.empty()) throw ConfigError("experiment: corpus path is empty");
    if (out_dir.empty()) throw ConfigError("experiment: output directory is empty");
}

ExperimentSpec experiment_spec_from_json(const nlohmann::json& j) {
    ExperimentSpec s;
    try {
        s.corpus = j.value("corpus", std::string());
        s.out_dir = j.value("out", std::string());
        s.seed = j.value("seed", s.seed);
        if (j.contains("compare")) {
            const auto& c = j.at("compare");
            if (!c.is_array() || c.size() != 2) throw ConfigError("experiment: compare must be [a, b]");
            s.compare = std::make_pair(c[0].get<std::string>(), c[1].get<std::string>());
        }
        for (const auto& v : j.value("variants", nlohmann::json::array())) {
            Variant var;
            var.name = v.at("name").get<std::string>();
            var.train = train_config_from_json(v);
            if (!v.contains("seed")) var.train.seed = s.seed;
            s.variants.push_back(std::move(var));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment spec: ") + e.what());
    }
    return s;
}

nlohmann::json to_json(const ExperimentSpec& s) {
    nlohmann::json vars = nlohmann::json::array();
    for (const auto& v : s.variants) {
        nlohmann::json j = to_json(v.train);
        j["name"] = v.name;
        vars.push_back(j);
    }
    nlohmann::json j = {{"corpus", s.corpus.string()}, {"out", s.out_dir.string()}, {"seed", s.seed}, {"variants", vars}};
    if (s.compare) j["compare"] = {s.compare->first, s.compare->second};
    return j;
}

namespace {

std::string delta_tag(double d) {
    std::string s = format_double(d);
    return s;
}

Variant nll_variant(const TrainConfig& base, double delta, double beta) {
    Variant v;
    v.train = base;
    v.train.loss = LossKind::NllBlock;
    v.train.delta = delta;
    v.train.beta = beta;
    v.name = "nll-block_d" + delta_tag(delta) + "_b" + format_double(beta);
    return v;
}

}  // namespace

std::vector<Variant> preset_variants(const std::string& name, const TrainConfig& base) {
    std::vector<Variant> out;
    auto simple = [&](LossKind k) {
        Variant v;
        v.train = base;
        v.train.loss = k;
        v.name = to_string(k);
        out.push_back(v);
    };
    if (name == "desk") {
        simple(LossKind::Mse);
        simple(LossKind::SiSdr);
        out.push_back(nll_variant(base, 0.01, 0.5));
        out.push_back(nll_variant(base, 0.0001, 0.0));
    } else if (name == "sweep") {
        simple(LossKind::Mse);
        simple(LossKind::SiSdr);
        for (double d : {0.0001, 0.001, 0.01, 0.05})
            for (double b : {0.0, 0.5}) out.push_back(nll_variant(base, d, b));
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected desk or sweep)");
    }
    return out;
}

std::size_t worker_count(std::size_t jobs) {
    std::size_t n = 1;
    if (const char* env = std::getenv("HNLL_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) n = static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

void write_eval_outputs(const fs::path& out_dir, const EvalReport& r) {
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "eval_items.csv", eval_items_csv(r));
    write_file_atomic(out_dir / "eval_summary.csv", eval_summary_csv(r));
}

namespace {

PipelineResult run_pipeline(const TrainConfig& cfg, const std::vector<Utterance>& train_set,
                            const std::vector<Utterance>& val_set, const std::vector<Utterance>& test_set,
                            const fs::path& out_dir) {
    PipelineResult r;
    r.train = train(cfg, train_set, val_set);
    r.eval = evaluate(r.train.best, test_set);
    write_train_outputs(out_dir, cfg, r.train);
    write_eval_outputs(out_dir, r.eval);
    return r;
}

}  // namespace

PipelineResult train_and_evaluate(const TrainConfig& cfg, const fs::path& manifest, const fs::path& out_dir) {
    const auto tr = load_split(manifest, "train", cfg.frame_len, cfg.hop);
    const auto va = load_split(manifest, "val", cfg.frame_len, cfg.hop);
    const auto te = load_split(manifest, "test", cfg.frame_len, cfg.hop);
    return run_pipeline(cfg, tr, va, te, out_dir);
}

ExperimentReport run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    const fs::path manifest = resolve_manifest(spec.corpus);
    const std::size_t frame_len = spec.variants.front().train.frame_len;
    const std::size_t hop = spec.variants.front().train.hop;
    for (const auto& v : spec.variants)
        if (v.train.frame_len != frame_len || v.train.hop != hop)
            throw ConfigError("experiment: all variants must share the STFT configuration");
    const auto tr = load_split(manifest, "train", frame_len, hop);
    const auto va = load_split(manifest, "val", frame_len, hop);
    const auto te = load_split(manifest, "test", frame_len, hop);

    fs::create_directories(spec.out_dir);
    write_file_atomic(spec.out_dir / "experiment.json", to_json(spec).dump(2) + "\n");

    ExperimentReport rep;
    rep.outcomes.resize(spec.variants.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < spec.variants.size(); i = next++) {
            const auto& v = spec.variants[i];
            auto& o = rep.outcomes[i];
            o.name = v.name;
            o.train = v.train;
            try {
                PipelineResult r = run_pipeline(v.train, tr, va, te, spec.out_dir / v.name);
                o.eval = std::move(r.eval);
                o.best_epoch = r.train.best_epoch;
                o.ok = true;
            } catch (const std::exception& e) {
                o.ok = false;
                o.error = e.what();
            }
        }
    };
    const std::size_t nw = worker_count(spec.variants.size());
    if (nw == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < nw; ++k) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::set<double> buckets;
    for (const auto& u : te) buckets.insert(u.snr_db);
    rep.snr_buckets.assign(buckets.begin(), buckets.end());

    std::string a, b;
    if (spec.compare) {
        a = spec.compare->first;
        b = spec.compare->second;
    } else if (spec.variants.size() >= 2) {
        a = spec.variants[0].name;
        b = spec.variants[1].name;
    }
    std::string ttest_text;
    if (!a.empty()) {
        const VariantOutcome* oa = nullptr;
        const VariantOutcome* ob = nullptr;
        for (const auto& o : rep.outcomes) {
            if (o.name == a) oa = &o;
            if (o.name == b) ob = &o;
        }
        rep.ttest_a = a;
        rep.ttest_b = b;
        if (oa && ob && oa->ok && ob->ok && oa->eval.items.size() >= 2) {
            std::vector<double> xa, xb;
            for (const auto& s : oa->eval.items) xa.push_back(s.si_sdr_enhanced);
            for (const auto& s : ob->eval.items) xb.push_back(s.si_sdr_enhanced);
            rep.ttest = paired_t_test(xa, xb);
            ttest_text = "paired t-test on per-utterance test SI-SDR: " + a + " vs " + b + "\n" +
                         format_t_test(*rep.ttest) + "\n";
        } else {
            ttest_text = "paired t-test skipped: " + a + " vs " + b + " (a variant failed or too few items)\n";
        }
    }
    write_file_atomic(spec.out_dir / "comparison.csv", comparison_csv(rep));
    if (!ttest_text.empty()) write_file_atomic(spec.out_dir / "ttest.txt", ttest_text);
    return rep;
}

std::string comparison_csv(const ExperimentReport& r) {
    std::string s = "variant,loss,delta,beta,diag_transform,status,best_epoch";
    for (double b : r.snr_buckets) s += ",si_sdr_" + format_double(b) + "db";
    for (double b : r.snr_buckets) s += ",improvement_" + format_double(b) + "db";
    s += ",mean_si_sdr,nll\n";
    for (const auto& o : r.outcomes) {
        s += o.name + "," + to_string(o.train.loss) + "," + format_double(o.train.delta) + "," +
             format_double(o.train.beta) + "," + to_string(o.train.model.diag_transform) + ",";
        if (!o.ok) {
            std::string msg = o.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            s += "failed: " + msg + ",";
            for (std::size_t k = 0; k < 2 * r.snr_buckets.size() + 2; ++k) s += ",";
            s += "\n";
            continue;
        }
        s += "ok," + std::to_string(o.best_epoch);
        auto bucket = [&](double snr) -> const BucketSummary* {
            for (const auto& b : o.eval.buckets)
                if (b.snr_db == snr) return &b;
            return nullptr;
        };
        for (double b : r.snr_buckets) {
            const auto* bs = bucket(b);
            s += "," + (bs ? format_double(bs->si_sdr_enhanced) : std::string());
        }
        for (double b : r.snr_buckets) {
            const auto* bs = bucket(b);
            s += "," + (bs ? format_double(bs->improvement) : std::string());
        }
        s += "," + format_double(o.eval.mean_si_sdr) + "," + format_double(o.eval.mean_nll) + "\n";
    }
    return s;
}

}  // namespace hnll
