#include "hnll/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "hnll/dsp.hpp"
#include "hnll/error.hpp"
#include "hnll/losses.hpp"
#include "hnll/model.hpp"
#include "hnll/rng.hpp"

namespace hnll {

double grad_rel_error(double a, double n) {
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    return std::abs(a - n) / denom;
}

namespace {

constexpr std::size_t kFrameLen = 8;
constexpr std::size_t kHop = 4;
constexpr std::size_t kSignalLen = 16;

struct Instance {
    Waveform clean;
    Spectrogram x;
    Spectrogram mu;
    CovLayout layout = CovLayout::Block2;
    std::vector<double> raw;
};

Instance make_instance(Rng& rng, CovLayout layout, double delta) {
    Instance in;
    in.clean.samples.resize(kSignalLen);
    for (double& v : in.clean.samples) v = rng.normal();
    in.x = stft(in.clean, kFrameLen, kHop);
    in.mu = Spectrogram::zeros_like(in.x);
    for (double& v : in.mu.re) v = rng.normal();
    for (double& v : in.mu.im) v = rng.normal();
    in.layout = layout;
    const std::size_t planes = CholeskyField::planes_for(layout);
    const std::size_t cells = in.x.cells();
    in.raw.resize(planes * cells);
    for (std::size_t p = 0; p < planes; ++p) {
        const bool diag = layout == CovLayout::Diagonal || p != 1;
        for (std::size_t i = 0; i < cells; ++i)
            in.raw[p * cells + i] = diag ? delta + rng.uniform(0.2, 1.5) : 0.5 * rng.normal();
    }
    return in;
}

LossReport eval_loss(const GradCheckConfig& cfg, const Instance& in, const Spectrogram& mu,
                     const std::vector<double>& raw, std::span<const double> w = {}) {
    if (cfg.loss == "mse") return mse_loss(in.x, mu);
    if (cfg.loss == "mae") return mae_loss(in.x, mu);
    if (cfg.loss == "sisdr") return spectral_si_sdr_loss(mu, in.clean);
    DensityPrediction pred;
    pred.mean = mu;
    pred.chol = CholeskyField::from_raw(in.layout, in.x.frames, in.x.bins, raw, cfg.delta);
    if (cfg.loss == "nll-diag") return diag_nll(in.x, pred, cfg.beta, DiagWeighting::PerComponent, w);
    if (cfg.loss == "nll-block") return block_nll(in.x, pred, cfg.beta, w);
    if (cfg.loss == "hybrid") return hybrid_loss(in.x, pred, in.clean, cfg.alpha, cfg.beta, w);
    throw ConfigError("grad-check: unknown loss '" + cfg.loss + "'");
}

void check_loss_trial(const GradCheckConfig& cfg, Rng& rng, GradCheckReport& rep) {
    const bool cov = cfg.loss == "nll-diag" || cfg.loss == "nll-block" || cfg.loss == "hybrid";
    const CovLayout layout = cfg.loss == "nll-diag" ? CovLayout::Diagonal : CovLayout::Block2;
    Instance in = make_instance(rng, layout, cfg.delta);
    const LossReport base = eval_loss(cfg, in, in.mu, in.raw);
    const std::span<const double> w =
        cfg.freeze_weights ? std::span<const double>(base.weights) : std::span<const double>();
    const double h = cfg.step;

    auto compare = [&](double analytic, const std::function<double(double)>& f) {
        const double num = (f(h) - f(-h)) / (2.0 * h);
        rep.max_rel_error = std::max(rep.max_rel_error, grad_rel_error(analytic, num));
        ++rep.coordinates;
    };

    for (int part = 0; part < 2; ++part) {
        auto& plane = part == 0 ? in.mu.re : in.mu.im;
        const auto& gplane = part == 0 ? base.grad_mean.re : base.grad_mean.im;
        for (std::size_t i = 0; i < plane.size(); ++i) {
            compare(gplane[i], [&](double e) {
                Spectrogram m = in.mu;
                (part == 0 ? m.re : m.im)[i] = plane[i] + e;
                return eval_loss(cfg, in, m, in.raw, w).value;
            });
        }
    }
    if (cov) {
        for (std::size_t i = 0; i < in.raw.size(); ++i) {
            compare(base.grad_chol[i], [&](double e) {
                std::vector<double> r = in.raw;
                r[i] += e;
                return eval_loss(cfg, in, in.mu, r, w).value;
            });
        }
    }
}

void check_model_trial(const GradCheckConfig& cfg, Rng& rng, GradCheckReport& rep) {
    ModelConfig mc;
    mc.hidden_sizes = {4};
    mc.bins = 5;
    mc.context_frames = 1;
    mc.layout = CovLayout::Block2;
    mc.delta = cfg.delta;
    mc.chol_head_gain = 1.0;
    mc.residual_mean = (rng.next_u64() & 1) != 0;
    mc.seed = rng.next_u64();
    ModelParams params = init_params(mc);
    for (double& v : params.values) v += 0.3 * rng.normal();

    const std::size_t T = 3;
    Spectrogram noisy(T, mc.bins), clean(T, mc.bins);
    for (std::size_t i = 0; i < noisy.cells(); ++i) {
        noisy.re[i] = rng.normal();
        noisy.im[i] = rng.normal();
        clean.re[i] = 0.5 * rng.normal();
        clean.im[i] = 0.5 * rng.normal();
    }
    std::vector<double> frozen;
    auto loss_at = [&](const ModelParams& p) {
        ModelOutput out = forward(p, mc, noisy);
        return block_nll(clean, out.pred, cfg.beta, frozen);
    };
    ModelOutput out = forward(params, mc, noisy);
    // Skip draws with a diagonal entry near the clamp kink.
    for (std::size_t plane : {std::size_t{0}, std::size_t{2}})
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < mc.bins; ++f)
                if (std::abs(out.pred.chol.at(plane, t, f) - mc.delta) < 1e-3) return;
    const LossReport rep0 = block_nll(clean, out.pred, cfg.beta);
    if (cfg.freeze_weights) frozen = rep0.weights;
    const std::vector<double> g = backward(params, mc, out.cache, rep0);
    const double h = cfg.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        ModelParams pp = params, pm = params;
        pp.values[i] += h;
        pm.values[i] -= h;
        const double num = (loss_at(pp).value - loss_at(pm).value) / (2.0 * h);
        rep.max_rel_error = std::max(rep.max_rel_error, grad_rel_error(g[i], num));
        ++rep.coordinates;
    }
}

}  // namespace

GradCheckReport run_grad_check(const GradCheckConfig& cfg) {
    if (cfg.trials == 0) throw ConfigError("grad-check: trials must be >= 1");
    if (!(cfg.tol > 0.0)) throw ConfigError("grad-check: tol must be positive");
    if (!(cfg.step > 0.0)) throw ConfigError("grad-check: step must be positive");
    if (!(cfg.delta > 0.0)) throw ConfigError("grad-check: delta must be positive");
    static const char* known[] = {"mae", "mse", "sisdr", "nll-diag", "nll-block", "hybrid", "model"};
    if (std::find(std::begin(known), std::end(known), cfg.loss) == std::end(known))
        throw ConfigError("grad-check: unknown loss '" + cfg.loss + "'");

    Rng rng(cfg.seed);
    GradCheckReport rep;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        if (cfg.loss == "model") check_model_trial(cfg, rng, rep);
        else check_loss_trial(cfg, rng, rep);
        ++rep.trials;
    }
    rep.passed = rep.max_rel_error <= cfg.tol;
    return rep;
}

}  // namespace hnll
