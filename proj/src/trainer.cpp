#include "hnll/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "hnll/error.hpp"
#include "hnll/io_util.hpp"
#include "hnll/rng.hpp"
#include "hnll/wav.hpp"

namespace fs = std::filesystem;

namespace hnll {

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::Mae: return "mae";
        case LossKind::Mse: return "mse";
        case LossKind::SiSdr: return "sisdr";
        case LossKind::NllDiag: return "nll-diag";
        case LossKind::NllBlock: return "nll-block";
        case LossKind::Hybrid: return "hybrid";
    }
    return "?";
}

LossKind parse_loss(const std::string& s) {
    if (s == "mae") return LossKind::Mae;
    if (s == "mse") return LossKind::Mse;
    if (s == "sisdr") return LossKind::SiSdr;
    if (s == "nll-diag") return LossKind::NllDiag;
    if (s == "nll-block") return LossKind::NllBlock;
    if (s == "hybrid") return LossKind::Hybrid;
    throw ConfigError("unknown loss '" + s + "' (expected mae, mse, sisdr, nll-diag, nll-block or hybrid)");
}

bool uses_covariance(LossKind k) {
    return k == LossKind::NllDiag || k == LossKind::NllBlock || k == LossKind::Hybrid;
}

ModelConfig TrainConfig::resolved_model() const {
    ModelConfig m = model;
    m.delta = delta;
    m.bins = frame_len / 2 + 1;
    if (loss == LossKind::NllDiag) m.layout = CovLayout::Diagonal;
    if (loss == LossKind::NllBlock || loss == LossKind::Hybrid) m.layout = CovLayout::Block2;
    return m;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(delta > 0.0) && uses_covariance(loss)) throw ConfigError("train: delta must be positive for NLL losses");
    if (!(delta > 0.0)) throw ConfigError("train: delta must be positive");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("train: beta must be >= 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("train: alpha must lie in [0, 1]");
    if (!std::isfinite(grad_clip)) throw ConfigError("train: grad_clip must be finite");
    if (hop * 2 != frame_len) throw ConfigError("train: hop must be frame_len / 2");
    resolved_model().validate();
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"loss", to_string(c.loss)},
            {"delta", c.delta},
            {"beta", c.beta},
            {"alpha", c.alpha},
            {"diag_weighting", c.diag_weighting == DiagWeighting::PerComponent ? "per-component" : "per-bin-min"},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"grad_clip", c.grad_clip},
            {"seed", c.seed},
            {"frame_len", c.frame_len},
            {"hop", c.hop},
            {"auto_feature_norm", c.auto_feature_norm},
            {"model", to_json(c.model)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        if (j.contains("loss")) c.loss = parse_loss(j.at("loss").get<std::string>());
        c.delta = j.value("delta", c.delta);
        c.beta = j.value("beta", c.beta);
        c.alpha = j.value("alpha", c.alpha);
        if (j.contains("diag_weighting")) {
            const auto w = j.at("diag_weighting").get<std::string>();
            if (w == "per-component") c.diag_weighting = DiagWeighting::PerComponent;
            else if (w == "per-bin-min") c.diag_weighting = DiagWeighting::PerBinMin;
            else throw ConfigError("train: unknown diag_weighting '" + w + "'");
        }
        c.lr = j.value("lr", c.lr);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.grad_clip = j.value("grad_clip", c.grad_clip);
        c.seed = j.value("seed", c.seed);
        c.frame_len = j.value("frame_len", c.frame_len);
        c.hop = j.value("hop", c.hop);
        c.auto_feature_norm = j.value("auto_feature_norm", c.auto_feature_norm);
        if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& s, double lr,
               std::size_t batch_id) {
    if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient sizes differ");
    for (double g : grads)
        if (!std::isfinite(g))
            throw NonFiniteError("adam: non-finite gradient in batch " + std::to_string(batch_id), batch_id);
    if (s.m.size() != params.size()) {
        s.m.assign(params.size(), 0.0);
        s.v.assign(params.size(), 0.0);
        s.step = 0;
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
        const double mh = s.m[i] / c1;
        const double vh = s.v[i] / c2;
        params[i] -= lr * mh / (std::sqrt(vh) + s.eps);
    }
}

bool clip_global_norm(std::vector<double>& grads, double max_norm) {
    if (!(max_norm > 0.0)) return false;
    double ss = 0.0;
    for (double g : grads) ss += g * g;
    const double norm = std::sqrt(ss);
    if (!(norm > max_norm)) return false;
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
    return true;
}

std::vector<Utterance> load_split(const fs::path& manifest, const std::string& split, std::size_t frame_len,
                                  std::size_t hop, std::vector<std::string>* missing) {
    const auto entries = read_manifest(manifest);
    const fs::path root = manifest.parent_path();
    std::vector<Utterance> out;
    for (const auto& e : entries) {
        if (e.split != split) continue;
        Utterance u;
        u.id = e.id;
        u.snr_db = e.snr_db;
        try {
            u.clean = read_wav(root / e.clean_path);
            u.noisy = read_wav(root / e.noisy_path);
            if (u.clean.size() != u.noisy.size())
                throw InvalidCorpusItem("corpus item " + e.id + ": clean and noisy lengths differ");
        } catch (const std::exception& err) {
            if (!missing) throw;
            missing->push_back(e.id + ": " + err.what());
            continue;
        }
        u.clean_spec = stft(u.clean, frame_len, hop);
        u.noisy_spec = stft(u.noisy, frame_len, hop);
        out.push_back(std::move(u));
    }
    return out;
}

namespace {

LossReport compute_loss(const TrainConfig& cfg, const DensityPrediction& pred, const Utterance& u) {
    switch (cfg.loss) {
        case LossKind::Mae: return mae_loss(u.clean_spec, pred.mean);
        case LossKind::Mse: return mse_loss(u.clean_spec, pred.mean);
        case LossKind::SiSdr: return spectral_si_sdr_loss(pred.mean, u.clean);
        case LossKind::NllDiag: return diag_nll(u.clean_spec, pred, cfg.beta, cfg.diag_weighting);
        case LossKind::NllBlock: return block_nll(u.clean_spec, pred, cfg.beta);
        case LossKind::Hybrid: return hybrid_loss(u.clean_spec, pred, u.clean, cfg.alpha, cfg.beta);
    }
    throw ConfigError("unknown loss");
}

double feature_norm_for(const std::vector<Utterance>& set) {
    double ss = 0.0;
    std::size_t n = 0;
    for (const auto& u : set) {
        for (double v : u.noisy_spec.re) ss += v * v;
        for (double v : u.noisy_spec.im) ss += v * v;
        n += 2 * u.noisy_spec.cells();
    }
    if (n == 0 || ss <= 0.0) return 1.0;
    return 1.0 / std::sqrt(ss / static_cast<double>(n));
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

ItemResult item_loss_and_grad(const TrainConfig& cfg, const ModelParams& params, const ModelConfig& mcfg,
                              const Utterance& u, bool want_grad) {
    ModelOutput out = forward(params, mcfg, u.noisy_spec, uses_covariance(cfg.loss));
    LossReport rep = compute_loss(cfg, out.pred, u);
    ItemResult r;
    r.loss = rep.value;
    if (want_grad) r.grad = backward(params, mcfg, out.cache, rep, !uses_covariance(cfg.loss));
    return r;
}

TrainResult train(const TrainConfig& cfg, const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& val_set, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty() && cfg.epochs > 0) throw ConfigError("train: training split is empty");
    ModelConfig mcfg = cfg.resolved_model();
    if (cfg.auto_feature_norm) mcfg.feature_norm = feature_norm_for(train_set);
    mcfg.seed = derive_seed(cfg.seed, 1);

    TrainResult result;
    result.best.config = mcfg;
    result.best.params = init_params(mcfg);
    result.best.meta = {{"train", to_json(cfg)}, {"best_epoch", 0}};
    if (cfg.epochs == 0) return result;

    ModelParams params = result.best.params;
    AdamState adam;
    Rng shuffle_rng(derive_seed(cfg.seed, 2));
    std::vector<std::size_t> order(train_set.size());
    double best_val = -std::numeric_limits<double>::infinity();
    std::size_t batch_id = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(std::span<std::size_t>(order));

        EpochRecord rec;
        rec.epoch = epoch;
        double loss_sum = 0.0;
        std::vector<double> grad(params.size());
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_id) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                ItemResult ir = item_loss_and_grad(cfg, params, mcfg, train_set[order[k]]);
                if (!std::isfinite(ir.loss))
                    throw NonFiniteError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                             std::to_string(batch_id),
                                         batch_id);
                batch_loss += ir.loss;
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += ir.grad[i];
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (double& g : grad) g *= inv;
            loss_sum += batch_loss;
            if (clip_global_norm(grad, cfg.grad_clip)) ++rec.clip_events;
            adam_step(params.values, grad, adam, cfg.lr, batch_id);
        }
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());

        std::vector<double> sdr, vloss;
        for (const auto& u : val_set) {
            ModelOutput out = forward(params, mcfg, u.noisy_spec, uses_covariance(cfg.loss));
            vloss.push_back(compute_loss(cfg, out.pred, u).value);
            const Waveform est = istft(out.pred.mean);
            sdr.push_back(si_sdr(est.samples, u.clean.samples));
        }
        rec.val_si_sdr = mean_of(sdr);
        rec.val_loss = mean_of(vloss);
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (result.best_epoch == 0 || rec.val_si_sdr > best_val) {
            best_val = rec.val_si_sdr;
            result.best_epoch = epoch;
            result.best.params = params;
            result.best.meta["best_epoch"] = epoch;
            result.best.meta["best_val_si_sdr"] = rec.val_si_sdr;
        }
    }
    return result;
}

std::string history_csv(const std::vector<EpochRecord>& h) {
    std::string s = "epoch,train_loss,val_si_sdr,val_loss,clip_events\n";
    for (const auto& r : h) {
        s += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.val_si_sdr) + "," +
             format_double(r.val_loss) + "," + std::to_string(r.clip_events) + "\n";
    }
    return s;
}

void write_train_outputs(const fs::path& out_dir, const TrainConfig& cfg, const TrainResult& r) {
    fs::create_directories(out_dir);
    nlohmann::json frozen = to_json(cfg);
    frozen["resolved_model"] = to_json(r.best.config);
    write_file_atomic(out_dir / "config.json", frozen.dump(2) + "\n");
    write_file_atomic(out_dir / "history.csv", history_csv(r.history));
    save_checkpoint(out_dir / "model.ckpt", r.best);
}

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<Utterance>& set) {
    EvalReport rep;
    std::map<double, std::vector<const UtteranceScore*>> by_snr;
    rep.items.reserve(set.size());
    for (const auto& u : set) {
        ModelOutput out = forward(ckpt.params, ckpt.config, u.noisy_spec);
        UtteranceScore s;
        s.id = u.id;
        s.snr_db = u.snr_db;
        s.si_sdr_noisy = si_sdr(u.noisy.samples, u.clean.samples);
        s.si_sdr_enhanced = si_sdr(istft(out.pred.mean).samples, u.clean.samples);
        s.nll = ckpt.config.layout == CovLayout::Diagonal ? diag_nll(u.clean_spec, out.pred, 0.0).value
                                                          : block_nll(u.clean_spec, out.pred, 0.0).value;
        rep.items.push_back(s);
    }
    std::vector<double> sdr, nll;
    for (const auto& s : rep.items) {
        by_snr[s.snr_db].push_back(&s);
        sdr.push_back(s.si_sdr_enhanced);
        nll.push_back(s.nll);
    }
    rep.mean_si_sdr = mean_of(sdr);
    rep.mean_nll = mean_of(nll);
    for (const auto& [snr, items] : by_snr) {
        BucketSummary b;
        b.snr_db = snr;
        b.count = items.size();
        for (const auto* s : items) {
            b.si_sdr_noisy += s->si_sdr_noisy;
            b.si_sdr_enhanced += s->si_sdr_enhanced;
            b.nll += s->nll;
        }
        const double n = static_cast<double>(b.count);
        b.si_sdr_noisy /= n;
        b.si_sdr_enhanced /= n;
        b.nll /= n;
        b.improvement = b.si_sdr_enhanced - b.si_sdr_noisy;
        rep.buckets.push_back(b);
    }
    return rep;
}

std::string eval_items_csv(const EvalReport& r) {
    std::string s = "id,snr_db,si_sdr_noisy,si_sdr_enhanced,improvement,nll\n";
    for (const auto& i : r.items) {
        s += i.id + "," + format_double(i.snr_db) + "," + format_double(i.si_sdr_noisy) + "," +
             format_double(i.si_sdr_enhanced) + "," + format_double(i.si_sdr_enhanced - i.si_sdr_noisy) + "," +
             format_double(i.nll) + "\n";
    }
    return s;
}

std::string eval_summary_csv(const EvalReport& r) {
    std::string s = "snr_db,count,si_sdr_noisy,si_sdr_enhanced,improvement,nll\n";
    for (const auto& b : r.buckets) {
        s += format_double(b.snr_db) + "," + std::to_string(b.count) + "," + format_double(b.si_sdr_noisy) + "," +
             format_double(b.si_sdr_enhanced) + "," + format_double(b.improvement) + "," + format_double(b.nll) + "\n";
    }
    return s;
}

}  // namespace hnll
