#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hnll/losses.hpp"

namespace hnll {

double normal_cdf(double x);

// Inverse standard normal CDF. Acklam's rational approximation followed by a
// Halley step against erfc; absolute error well below 1e-8 on (0, 1).
double normal_quantile(double p);

enum class QQPart { Real, Imag };
std::string to_string(QQPart p);

struct QQSeries {
    std::vector<std::pair<double, double>> points;  // (theoretical, empirical)
    std::size_t freq_bin = 0;
    QQPart part = QQPart::Real;
    std::size_t count() const { return points.size(); }
};

// Standardizes r_i / sigma_i, sorts, and pairs the empirical quantile at
// p_k = (k - 0.5) / K with normal_quantile(p_k). Empirical quantiles are
// linearly interpolated between order statistics.
QQSeries qq_points(std::span<const double> residuals, std::span<const double> sigmas, std::size_t K);

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

// Ordinary least squares of empirical on theoretical quantiles.
LineFit qq_fit(const QQSeries& s);

enum class QQStandardize {
    Marginal,  // divide by the predicted marginal sigma of the component
    Whitened,  // apply L^{-1} to the (re, im) residual pair
};

// Collects (residual, sigma) pairs for one (frequency, part) across frames of
// a prediction. Residual is x - mu. In whitened mode sigma is 1 and the
// residual is already whitened.
void collect_standardization(const Spectrogram& x, const DensityPrediction& pred, std::size_t freq, QQPart part,
                             QQStandardize mode, std::vector<double>& residuals, std::vector<double>& sigmas);

// (2/N) * sum residual_n / variance_n with residual = mu - x.
double undersampling_gradient_estimate(std::span<const double> residuals, std::span<const double> variances);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t n = 0;
};

// Paired two-tailed Student t-test on a - b. Zero-variance nonzero differences
// give t = +/-inf and p = 0; all-zero differences give (0, 1).
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// Machine-readable form: "t=<v> p=<v> n=<v>".
std::string format_t_test(const TTestResult& r);

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

// Two-tailed p-value of a Student t statistic with nu degrees of freedom.
double student_t_two_tailed(double t, double nu);

}  // namespace hnll
