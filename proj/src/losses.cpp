#include "hnll/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hnll/error.hpp"

namespace hnll {

CholeskyField CholeskyField::from_raw(CovLayout layout, std::size_t frames, std::size_t bins,
                                      std::vector<double> raw, double delta) {
    if (!(delta > 0.0)) throw ConfigError("cholesky field: delta must be > 0");
    CholeskyField field;
    field.layout = layout;
    field.frames = frames;
    field.bins = bins;
    field.delta = delta;
    if (raw.size() != planes_for(layout) * frames * bins) throw ShapeError("cholesky field: raw size mismatch");
    field.values = std::move(raw);
    field.clamped.assign(field.values.size(), 0);
    const std::size_t cells = frames * bins;
    for (std::size_t p = 0; p < field.planes(); ++p) {
        if (!field.is_diagonal_plane(p)) continue;
        for (std::size_t i = p * cells; i < (p + 1) * cells; ++i) {
            if (field.values[i] < delta) {
                field.values[i] = delta;
                field.clamped[i] = 1;
            }
        }
    }
    return field;
}

Chol2 CholeskyField::block(std::size_t t, std::size_t f) const {
    if (layout == CovLayout::Diagonal) return Chol2{at(0, t, f), 0.0, at(1, t, f)};
    return Chol2{at(0, t, f), at(1, t, f), at(2, t, f)};
}

namespace {

void check_same(const Spectrogram& a, const Spectrogram& b, const char* who) {
    if (!a.same_shape(b) || a.re.size() != b.re.size() || a.im.size() != b.im.size())
        throw ShapeError(std::string(who) + ": spectrogram shape mismatch");
    if (a.cells() == 0) throw ShapeError(std::string(who) + ": empty spectrogram");
}

void check_pred(const Spectrogram& x, const DensityPrediction& pred, CovLayout want, const char* who) {
    check_same(x, pred.mean, who);
    const auto& c = pred.chol;
    if (c.layout != want) throw ShapeError(std::string(who) + ": wrong covariance layout");
    if (c.frames != x.frames || c.bins != x.bins || c.values.size() != c.planes() * c.cells())
        throw ShapeError(std::string(who) + ": cholesky field shape mismatch");
    if (c.clamped.size() != c.values.size()) throw ShapeError(std::string(who) + ": clamp mask size mismatch");
}

void check_finite(double v, const char* who) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(who) + ": non-finite loss value", 0);
}

}  // namespace

LossReport mse_loss(const Spectrogram& x, const Spectrogram& mu) {
    check_same(x, mu, "mse_loss");
    const std::size_t cells = x.cells();
    const double inv_n = 1.0 / static_cast<double>(2 * cells);
    LossReport r;
    r.grad_mean = Spectrogram::zeros_like(mu);
    double acc = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
        const double dr = mu.re[i] - x.re[i];
        const double di = mu.im[i] - x.im[i];
        acc += dr * dr + di * di;
        r.grad_mean.re[i] = 2.0 * dr * inv_n;
        r.grad_mean.im[i] = 2.0 * di * inv_n;
    }
    r.value = acc * inv_n;
    return r;
}

LossReport mae_loss(const Spectrogram& x, const Spectrogram& mu) {
    check_same(x, mu, "mae_loss");
    const std::size_t cells = x.cells();
    const double inv_n = 1.0 / static_cast<double>(2 * cells);
    auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    LossReport r;
    r.grad_mean = Spectrogram::zeros_like(mu);
    double acc = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
        const double dr = mu.re[i] - x.re[i];
        const double di = mu.im[i] - x.im[i];
        acc += std::abs(dr) + std::abs(di);
        r.grad_mean.re[i] = sign(dr) * inv_n;
        r.grad_mean.im[i] = sign(di) * inv_n;
    }
    r.value = acc * inv_n;
    return r;
}

WaveLoss si_sdr_loss(std::span<const double> est, std::span<const double> ref) {
    if (est.size() != ref.size()) throw ShapeError("si_sdr_loss: length mismatch");
    const std::size_t n = ref.size();
    double dot = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += est[i] * ref[i];
        rr += ref[i] * ref[i];
    }
    if (!(rr > 0.0)) throw ConfigError("si_sdr_loss: reference has zero energy");
    const double alpha = dot / rr;
    std::vector<double> s(n), e(n);
    double ss = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = alpha * ref[i];
        e[i] = est[i] - s[i];
        ss += s[i] * s[i];
        nn += e[i] * e[i];
    }
    WaveLoss out;
    out.grad.assign(n, 0.0);
    if (!(ss > 0.0)) {
        out.value = kSiSdrCapDb;
        return out;
    }
    const double ratio_db = nn > 0.0 ? 10.0 * std::log10(ss / nn) : kSiSdrCapDb;
    if (ratio_db >= kSiSdrCapDb) {
        out.value = -kSiSdrCapDb;
        return out;
    }
    if (ratio_db <= -kSiSdrCapDb) {
        out.value = kSiSdrCapDb;
        return out;
    }
    out.value = -ratio_db;
    // d/de 10 log10(|s|^2 / |e - s|^2) = (10 / ln 10) (2 s / |s|^2 - 2 (e - s) / |e - s|^2)
    const double k = 10.0 / std::numbers::ln10;
    for (std::size_t i = 0; i < n; ++i) out.grad[i] = -k * (2.0 * s[i] / ss - 2.0 * e[i] / nn);
    return out;
}

LossReport spectral_si_sdr_loss(const Spectrogram& mu, const Waveform& ref) {
    const Waveform est = istft(mu);
    const WaveLoss wl = si_sdr_loss(est.samples, ref.samples);
    LossReport r;
    r.value = wl.value;
    r.grad_mean = istft_adjoint(mu, wl.grad);
    return r;
}

LossReport diag_nll(const Spectrogram& x, const DensityPrediction& pred, double beta, DiagWeighting weighting,
                    std::span<const double> fixed_weights) {
    check_pred(x, pred, CovLayout::Diagonal, "diag_nll");
    if (!fixed_weights.empty() && fixed_weights.size() != 2 * x.cells())
        throw ShapeError("diag_nll: fixed_weights size mismatch");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("diag_nll: beta must lie in [0, 1]");
    const auto& chol = pred.chol;
    const auto& mu = pred.mean;
    const std::size_t cells = x.cells();
    const double inv_n = 1.0 / static_cast<double>(2 * cells);

    LossReport r;
    r.grad_mean = Spectrogram::zeros_like(mu);
    r.grad_chol.assign(chol.values.size(), 0.0);
    r.aux.assign(2 * cells, 0.0);
    r.weights.assign(2 * cells, 1.0);

    double acc = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
        const double s_re = chol.values[i];
        const double s_im = chol.values[cells + i];
        double shared_w = 1.0;
        if (weighting == DiagWeighting::PerBinMin && beta > 0.0)
            shared_w = std::pow(std::min(s_re * s_re, s_im * s_im), beta);

        for (std::size_t part = 0; part < 2; ++part) {
            const std::size_t k = part * cells + i;
            const double s = chol.values[k];
            const double xv = part == 0 ? x.re[i] : x.im[i];
            const double mv = part == 0 ? mu.re[i] : mu.im[i];
            const double res = xv - mv;
            const double var = s * s;
            const double term = res * res / var + 2.0 * std::log(s);
            double w = shared_w;
            if (weighting == DiagWeighting::PerComponent && beta > 0.0) w = std::pow(var, beta);
            if (!fixed_weights.empty()) w = fixed_weights[k];
            acc += w * term;
            r.aux[k] = term;
            r.weights[k] = w;

            const double g_mu = 2.0 * (mv - xv) / var;
            (part == 0 ? r.grad_mean.re[i] : r.grad_mean.im[i]) = w * g_mu * inv_n;
            if (!chol.clamped[k]) r.grad_chol[k] = w * (-2.0 * res * res / (var * s) + 2.0 / s) * inv_n;
        }
    }
    r.value = acc * inv_n;
    check_finite(r.value, "diag_nll");
    return r;
}

double block_z(double d_re, double d_im, const Chol2& L) {
    const double u1 = d_re / L.l11;
    const double u2 = (d_im - L.l21 * u1) / L.l22;
    return u1 * u1 + u2 * u2 + 2.0 * (std::log(L.l11) + std::log(L.l22));
}

LossReport block_nll(const Spectrogram& x, const DensityPrediction& pred, double beta,
                     std::span<const double> fixed_weights) {
    check_pred(x, pred, CovLayout::Block2, "block_nll");
    if (!fixed_weights.empty() && fixed_weights.size() != x.cells())
        throw ShapeError("block_nll: fixed_weights size mismatch");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("block_nll: beta must lie in [0, 1]");
    const auto& chol = pred.chol;
    const auto& mu = pred.mean;
    const std::size_t cells = x.cells();
    // Normalized per real component (2TF), matching mse_loss and diag_nll.
    const double inv_n = 1.0 / static_cast<double>(2 * cells);

    LossReport r;
    r.grad_mean = Spectrogram::zeros_like(mu);
    r.grad_chol.assign(chol.values.size(), 0.0);
    r.aux.assign(cells, 0.0);
    r.weights.assign(cells, 1.0);

    double acc = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
        const double l11 = chol.values[i];
        const double l21 = chol.values[cells + i];
        const double l22 = chol.values[2 * cells + i];
        const double d1 = x.re[i] - mu.re[i];
        const double d2 = x.im[i] - mu.im[i];

        // u = L^{-1} d, v = L^{-T} u = Sigma^{-1} d
        const double u1 = d1 / l11;
        const double u2 = (d2 - l21 * u1) / l22;
        const double v2 = u2 / l22;
        const double v1 = (u1 - l21 * v2) / l11;
        const double log_t = 2.0 * (std::log(l11) + std::log(l22));
        if (!std::isfinite(log_t)) throw NonFiniteError("block_nll: non-finite log det at bin " + std::to_string(i), i);
        const double z = u1 * u1 + u2 * u2 + log_t;

        // Stop-gradient weight.
        double w = 1.0;
        if (beta > 0.0) {
            const double lmin = cov_min_eig(chol2_to_cov(Chol2{l11, l21, l22}));
            w = std::pow(std::max(lmin, 0.0), beta);
        }
        if (!fixed_weights.empty()) w = fixed_weights[i];
        acc += w * z;
        r.aux[i] = z;
        r.weights[i] = w;

        const double scale = w * inv_n;
        r.grad_mean.re[i] = -2.0 * v1 * scale;
        r.grad_mean.im[i] = -2.0 * v2 * scale;
        if (!chol.clamped[i]) r.grad_chol[i] = (-2.0 * v1 * u1 + 2.0 / l11) * scale;
        r.grad_chol[cells + i] = -2.0 * v2 * u1 * scale;
        if (!chol.clamped[2 * cells + i]) r.grad_chol[2 * cells + i] = (-2.0 * v2 * u2 + 2.0 / l22) * scale;
    }
    r.value = acc * inv_n;
    check_finite(r.value, "block_nll");
    return r;
}

double full_nll_oracle(std::span<const double> x, std::span<const double> mu, const Eigen::MatrixXd& L) {
    const auto n = static_cast<Eigen::Index>(x.size());
    if (mu.size() != x.size() || L.rows() != n || L.cols() != n) throw ShapeError("full_nll_oracle: shape mismatch");
    if (n > 64) throw ConfigError("full_nll_oracle: oracle limited to n <= 64");
    double logdet = 0.0;
    for (Eigen::Index m = 0; m < n; ++m) {
        if (!(L(m, m) > 0.0)) throw ConfigError("full_nll_oracle: non-positive diagonal at index " + std::to_string(m));
        logdet += 2.0 * std::log(L(m, m));
    }
    std::vector<double> u(static_cast<std::size_t>(n));
    double q = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double acc = x[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < i; ++j) acc -= L(i, j) * u[static_cast<std::size_t>(j)];
        const double ui = acc / L(i, i);
        u[static_cast<std::size_t>(i)] = ui;
        q += ui * ui;
    }
    return q + logdet;
}

LossReport hybrid_loss(const Spectrogram& x, const DensityPrediction& pred, const Waveform& clean, double alpha,
                       double beta, std::span<const double> fixed_weights) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("hybrid_loss: alpha must lie in [0, 1]");
    const LossReport nll = block_nll(x, pred, beta, fixed_weights);
    const LossReport sdr = spectral_si_sdr_loss(pred.mean, clean);

    LossReport r;
    r.value = alpha * nll.value + (1.0 - alpha) * sdr.value;
    r.grad_mean = Spectrogram::zeros_like(pred.mean);
    for (std::size_t i = 0; i < x.cells(); ++i) {
        r.grad_mean.re[i] = alpha * nll.grad_mean.re[i] + (1.0 - alpha) * sdr.grad_mean.re[i];
        r.grad_mean.im[i] = alpha * nll.grad_mean.im[i] + (1.0 - alpha) * sdr.grad_mean.im[i];
    }
    r.grad_chol.resize(nll.grad_chol.size());
    for (std::size_t i = 0; i < nll.grad_chol.size(); ++i) r.grad_chol[i] = alpha * nll.grad_chol[i];
    r.aux = nll.aux;
    r.weights = nll.weights;
    return r;
}

}  // namespace hnll
