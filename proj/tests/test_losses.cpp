#include <doctest.h>

#include <cmath>

#include <Eigen/Core>

#include "hnll/error.hpp"
#include "hnll/gradcheck.hpp"
#include "hnll/losses.hpp"
#include "support.hpp"

using namespace hnll;
using namespace hnll::testing;

TEST_CASE("mse and mae values and gradients") {
    Spectrogram x(1, 2), mu(1, 2);
    x.re = {1.0, 2.0};
    x.im = {0.0, -1.0};
    mu.re = {0.0, 2.0};
    mu.im = {3.0, 1.0};
    const auto m = mse_loss(x, mu);
    CHECK(m.value == doctest::Approx((1.0 + 0.0 + 9.0 + 4.0) / 4.0));
    CHECK(m.grad_mean.re[0] == doctest::Approx(-0.5));
    CHECK(m.grad_mean.im[0] == doctest::Approx(1.5));
    const auto a = mae_loss(x, mu);
    CHECK(a.value == doctest::Approx((1.0 + 0.0 + 3.0 + 2.0) / 4.0));
    CHECK(a.grad_mean.im[1] == doctest::Approx(0.25));
    CHECK_THROWS_AS(mse_loss(x, Spectrogram(2, 2)), ShapeError);
}

TEST_CASE("block NLL with zero off-diagonal equals diagonal NLL") {
    Rng rng(21);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t t = 1 + rng.below(6), f = 1 + rng.below(6);
        const double beta = trial % 2 ? 0.5 : rng.uniform();
        const Spectrogram x = random_spec(rng, t, f);
        const DensityPrediction blk = random_pred(rng, CovLayout::Block2, t, f, 0.01, true);
        DensityPrediction dg;
        dg.mean = blk.mean;
        std::vector<double> raw(2 * t * f);
        for (std::size_t i = 0; i < t * f; ++i) {
            raw[i] = blk.chol.values[i];
            raw[t * f + i] = blk.chol.values[2 * t * f + i];
        }
        dg.chol = CholeskyField::from_raw(CovLayout::Diagonal, t, f, raw, 0.01);
        const double b = block_nll(x, blk, beta).value;
        const double d = diag_nll(x, dg, beta, DiagWeighting::PerBinMin).value;
        worst = std::max(worst, rel_diff(b, d));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("block NLL at beta 0 is the plain per-bin sum") {
    Rng rng(22);
    for (int trial = 0; trial < 50; ++trial) {
        const Spectrogram x = random_spec(rng, 4, 5);
        const DensityPrediction p = random_pred(rng, CovLayout::Block2, 4, 5, 0.01);
        double acc = 0.0, dense = 0.0;
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t f = 0; f < 5; ++f) {
                const double dr = x.re_at(t, f) - p.mean.re_at(t, f);
                const double di = x.im_at(t, f) - p.mean.im_at(t, f);
                const Chol2 L = p.chol.block(t, f);
                acc += block_z(dr, di, L);
                // Explicit 2x2 inverse.
                const Sym2 S = chol2_to_cov(L);
                const double q = (S.c * dr * dr - 2.0 * S.b * dr * di + S.a * di * di) / S.det();
                dense += q + std::log(S.det());
            }
        const double v = block_nll(x, p, 0.0).value;
        CHECK(rel_diff(v, acc / 40.0) <= 1e-15);
        CHECK(rel_diff(v, dense / 40.0) <= 1e-12);
    }
}

TEST_CASE("full-covariance oracle on block-diagonal systems") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t t = 1 + rng.below(4), f = 1 + rng.below(4);
        const Spectrogram x = random_spec(rng, t, f);
        const DensityPrediction p = random_pred(rng, CovLayout::Block2, t, f, 0.01);
        const std::size_t n = 2 * t * f;
        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
        std::vector<double> xv(n), mv(n);
        std::size_t k = 0;
        for (std::size_t ti = 0; ti < t; ++ti)
            for (std::size_t fi = 0; fi < f; ++fi, k += 2) {
                const Chol2 c = p.chol.block(ti, fi);
                L(k, k) = c.l11;
                L(k + 1, k) = c.l21;
                L(k + 1, k + 1) = c.l22;
                xv[k] = x.re_at(ti, fi);
                xv[k + 1] = x.im_at(ti, fi);
                mv[k] = p.mean.re_at(ti, fi);
                mv[k + 1] = p.mean.im_at(ti, fi);
            }
        const double oracle = full_nll_oracle(xv, mv, L) / static_cast<double>(n);
        CHECK(rel_diff(oracle, block_nll(x, p, 0.0).value) <= 1e-10);
    }
}

TEST_CASE("scalar covariance makes the NLL mean gradient a scaled MSE gradient") {
    Rng rng(24);
    for (double c : {0.04, 0.5, 1.0, 3.0}) {
        const Spectrogram x = random_spec(rng, 3, 4);
        DensityPrediction p;
        p.mean = random_spec(rng, 3, 4);
        p.chol = CholeskyField::from_raw(CovLayout::Diagonal, 3, 4, std::vector<double>(24, std::sqrt(c)), 0.01);
        const auto nll = diag_nll(x, p, 0.0);
        const auto mse = mse_loss(x, p.mean);
        for (std::size_t i = 0; i < x.cells(); ++i) {
            CHECK(rel_diff(nll.grad_mean.re[i], mse.grad_mean.re[i] / c) <= 1e-12);
            CHECK(rel_diff(nll.grad_mean.im[i], mse.grad_mean.im[i] / c) <= 1e-12);
        }
    }
}

TEST_CASE("uncertainty weights") {
    Rng rng(25);
    const Spectrogram x = random_spec(rng, 2, 3);
    const DensityPrediction p = random_pred(rng, CovLayout::Block2, 2, 3, 0.01);
    const auto r0 = block_nll(x, p, 0.0);
    const auto r1 = block_nll(x, p, 0.5);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.cells(); ++i) {
        const double lmin = cov_min_eig(chol2_to_cov(p.chol.block(i / 3, i % 3)));
        CHECK(r1.weights[i] == doctest::Approx(std::sqrt(lmin)).epsilon(1e-14));
        CHECK(r0.weights[i] == 1.0);
        acc += r1.weights[i] * r1.aux[i];
    }
    CHECK(r1.value == doctest::Approx(acc / 12.0).epsilon(1e-14));

    // Fixed weights replace the computed ones.
    const std::vector<double> ones(x.cells(), 1.0);
    CHECK(block_nll(x, p, 0.5, ones).value == r0.value);
    CHECK_THROWS_AS(block_nll(x, p, 0.5, std::vector<double>(2, 1.0)), ShapeError);
}

TEST_CASE("clamped diagonal entries carry no gradient") {
    Spectrogram x(1, 1);
    x.re = {0.3};
    x.im = {-0.2};
    DensityPrediction p;
    p.mean = Spectrogram(1, 1);
    p.chol = CholeskyField::from_raw(CovLayout::Block2, 1, 1, {-0.5, 0.1, 0.7}, 0.05);
    CHECK(p.chol.values[0] == 0.05);
    CHECK(p.chol.clamped[0] == 1);
    const auto r = block_nll(x, p, 0.5);
    CHECK(r.grad_chol[0] == 0.0);
    CHECK(r.grad_chol[1] != 0.0);
    CHECK(r.grad_chol[2] != 0.0);
}

TEST_CASE("hybrid loss is the affine combination of its parts") {
    Rng rng(26);
    Waveform clean;
    clean.samples.resize(640);
    for (auto& v : clean.samples) v = rng.normal();
    const Spectrogram x = stft(clean);
    DensityPrediction p = random_pred(rng, CovLayout::Block2, x.frames, x.bins, 0.01);
    p.mean.signal_len = x.signal_len;
    p.mean.frame_len = x.frame_len;
    p.mean.hop = x.hop;
    const double nll = block_nll(x, p, 0.5).value;
    const double sdr = spectral_si_sdr_loss(p.mean, clean).value;
    CHECK(rel_diff(hybrid_loss(x, p, clean, 1.0, 0.5).value, nll) <= 1e-12);
    CHECK(rel_diff(hybrid_loss(x, p, clean, 0.0, 0.5).value, sdr) <= 1e-12);
    CHECK(rel_diff(hybrid_loss(x, p, clean, 0.99, 0.5).value, 0.99 * nll + 0.01 * sdr) <= 1e-12);
    CHECK_THROWS_AS(hybrid_loss(x, p, clean, 1.5, 0.5), ConfigError);
}

TEST_CASE("SI-SDR loss is the negated metric") {
    Rng rng(27);
    std::vector<double> ref(500), est(500);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        ref[i] = rng.normal();
        est[i] = ref[i] + 0.3 * rng.normal();
    }
    CHECK(si_sdr_loss(est, ref).value == doctest::Approx(-si_sdr(est, ref)).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences") {
    for (const char* loss : {"mse", "mae", "sisdr", "nll-diag", "nll-block", "hybrid", "model"}) {
        GradCheckConfig cfg;
        cfg.loss = loss;
        cfg.trials = 10;
        const auto r = run_grad_check(cfg);
        CHECK_MESSAGE(r.passed, loss << " max_rel_error=" << r.max_rel_error);
    }
}

TEST_CASE("letting the weights move breaks agreement when beta > 0") {
    GradCheckConfig cfg;
    cfg.trials = 10;
    cfg.freeze_weights = false;
    CHECK(run_grad_check(cfg).max_rel_error > 1e-2);
    cfg.beta = 0.0;
    CHECK(run_grad_check(cfg).passed);
}

TEST_CASE("non-finite and invalid inputs") {
    Rng rng(28);
    const Spectrogram x = random_spec(rng, 2, 2);
    DensityPrediction p = random_pred(rng, CovLayout::Block2, 2, 2, 0.01);
    CHECK_THROWS_AS(block_nll(x, p, 1.5), ConfigError);
    DensityPrediction d = random_pred(rng, CovLayout::Diagonal, 2, 2, 0.01);
    CHECK_THROWS(block_nll(x, d, 0.0));
    CHECK_THROWS_AS(CholeskyField::from_raw(CovLayout::Block2, 1, 1, {1.0, 0.0, 1.0}, 0.0), ConfigError);
}
