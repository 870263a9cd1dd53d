#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hnll/dsp.hpp"
#include "hnll/smallspd.hpp"

namespace hnll {

enum class CovLayout { Diagonal, Block2 };

// Per-bin lower-Cholesky parameters of the predicted covariance.
//
// Values are stored plane-major: plane p holds a T x F row-major grid.
//   Diagonal: planes {sigma_re, sigma_im}
//   Block2:   planes {l11, l21, l22}
// `values` are post-clamp. `clamped` marks the diagonal entries whose raw value
// was below delta; their gradients are zero.
struct CholeskyField {
    CovLayout layout = CovLayout::Block2;
    std::size_t frames = 0;
    std::size_t bins = 0;
    double delta = 0.01;
    std::vector<double> values;
    std::vector<std::uint8_t> clamped;

    static std::size_t planes_for(CovLayout layout) { return layout == CovLayout::Diagonal ? 2 : 3; }
    std::size_t planes() const { return planes_for(layout); }
    std::size_t cells() const { return frames * bins; }

    // Applies the diagonal floor to raw entries and records where it bites.
    static CholeskyField from_raw(CovLayout layout, std::size_t frames, std::size_t bins,
                                  std::vector<double> raw, double delta);

    double& at(std::size_t plane, std::size_t t, std::size_t f) { return values[plane * cells() + t * bins + f]; }
    double at(std::size_t plane, std::size_t t, std::size_t f) const {
        return values[plane * cells() + t * bins + f];
    }
    bool is_diagonal_plane(std::size_t plane) const { return layout == CovLayout::Diagonal || plane != 1; }

    Chol2 block(std::size_t t, std::size_t f) const;
};

struct DensityPrediction {
    Spectrogram mean;
    CholeskyField chol;
};

// Loss value plus gradients. grad_chol uses CholeskyField's plane layout and
// is empty for losses that do not touch the covariance.
struct LossReport {
    double value = 0.0;
    Spectrogram grad_mean;
    std::vector<double> grad_chol;
    std::vector<double> aux;  // per-bin z (block) or per-component term (diagonal)
    // Uncertainty weights applied to aux, same layout. Empty for non-NLL losses.
    std::vector<double> weights;
};

// How the uncertainty weight is formed for the diagonal layout.
enum class DiagWeighting {
    PerComponent,  // (sigma_k^2)^beta for each scalar component
    PerBinMin,     // min(sigma_r^2, sigma_i^2)^beta shared by both parts of a bin
};

// All losses below are means over components (or bins), not sums.

LossReport mse_loss(const Spectrogram& x, const Spectrogram& mu);
LossReport mae_loss(const Spectrogram& x, const Spectrogram& mu);

// Negative SI-SDR. grad_mean is unused; the waveform gradient lives in the
// returned vector.
struct WaveLoss {
    double value = 0.0;
    std::vector<double> grad;
};
WaveLoss si_sdr_loss(std::span<const double> est, std::span<const double> ref);

// SI-SDR loss of istft(mu) against a reference waveform, with the gradient
// pulled back onto mu.
LossReport spectral_si_sdr_loss(const Spectrogram& mu, const Waveform& ref);

// A non-empty fixed_weights replaces the computed uncertainty weights (layout
// of LossReport::weights). Finite-difference checks use it to hold the
// stop-gradient weights constant.
LossReport diag_nll(const Spectrogram& x, const DensityPrediction& pred, double beta,
                    DiagWeighting weighting = DiagWeighting::PerComponent,
                    std::span<const double> fixed_weights = {});

LossReport block_nll(const Spectrogram& x, const DensityPrediction& pred, double beta,
                     std::span<const double> fixed_weights = {});

// Per-bin block NLL term d^T Sigma^{-1} d + ln det Sigma via triangular solves.
double block_z(double d_re, double d_im, const Chol2& L);

// d^T (L L^T)^{-1} d + 2 sum ln L_mm for a dense lower-triangular L (n <= 64).
double full_nll_oracle(std::span<const double> x, std::span<const double> mu, const Eigen::MatrixXd& L);

// alpha * block NLL + (1 - alpha) * SI-SDR loss of istft(pred.mean).
LossReport hybrid_loss(const Spectrogram& x, const DensityPrediction& pred, const Waveform& clean,
                       double alpha, double beta, std::span<const double> fixed_weights = {});

}  // namespace hnll
