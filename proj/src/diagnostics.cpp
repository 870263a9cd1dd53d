#include "hnll/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "hnll/error.hpp"
#include "hnll/io_util.hpp"

namespace hnll {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace {

// Acklam's coefficients.
constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                        1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                        6.680131188771972e+01,  -1.328068155288572e+01};
constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                        -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                        3.754408661907416e+00};

// Lower-half quantile, p in (0, 0.5].
double lower_quantile(double p) {
    double x;
    if (p < 0.02425) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }
    // Halley refinement.
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile: p must lie in (0, 1)");
    if (p == 0.5) return 0.0;
    if (p < 0.5) return lower_quantile(p);
    return -lower_quantile(1.0 - p);
}

std::string to_string(QQPart p) { return p == QQPart::Real ? "real" : "imag"; }

QQSeries qq_points(std::span<const double> residuals, std::span<const double> sigmas, std::size_t K) {
    if (residuals.size() != sigmas.size()) throw ShapeError("qq_points: residual and sigma lengths differ");
    if (K < 10) throw ConfigError("qq_points: K must be >= 10");
    if (residuals.size() < K) throw ConfigError("qq_points: need at least K samples");
    const std::size_t n = residuals.size();
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sigmas[i] > 0.0)) throw ConfigError("qq_points: sigmas must be positive");
        z[i] = residuals[i] / sigmas[i];
    }
    std::sort(z.begin(), z.end());

    QQSeries s;
    s.points.reserve(K);
    for (std::size_t k = 1; k <= K; ++k) {
        const double p = (static_cast<double>(k) - 0.5) / static_cast<double>(K);
        // Order statistic i sits at probability (i + 0.5) / n.
        const double pos = std::clamp(p * static_cast<double>(n) - 0.5, 0.0, static_cast<double>(n - 1));
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - static_cast<double>(lo);
        const double emp = frac == 0.0 ? z[lo] : z[lo] + frac * (z[hi] - z[lo]);
        s.points.emplace_back(normal_quantile(p), emp);
    }
    return s;
}

LineFit qq_fit(const QQSeries& s) {
    const auto n = static_cast<double>(s.points.size());
    if (s.points.size() < 2) throw ConfigError("qq_fit: need at least two points");
    double mx = 0.0, my = 0.0;
    for (auto [x, y] : s.points) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (auto [x, y] : s.points) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    return f;
}

void collect_standardization(const Spectrogram& x, const DensityPrediction& pred, std::size_t freq, QQPart part,
                             QQStandardize mode, std::vector<double>& residuals, std::vector<double>& sigmas) {
    const auto& L = pred.chol;
    if (!x.same_shape(pred.mean) || L.frames != x.frames || L.bins != x.bins)
        throw ShapeError("qq: prediction and target shapes differ");
    if (freq >= x.bins) throw ConfigError("qq: frequency bin out of range");
    for (std::size_t t = 0; t < x.frames; ++t) {
        const double dr = x.re_at(t, freq) - pred.mean.re_at(t, freq);
        const double di = x.im_at(t, freq) - pred.mean.im_at(t, freq);
        double l11, l21, l22;
        if (L.layout == CovLayout::Diagonal) {
            l11 = L.at(0, t, freq);
            l21 = 0.0;
            l22 = L.at(1, t, freq);
        } else {
            l11 = L.at(0, t, freq);
            l21 = L.at(1, t, freq);
            l22 = L.at(2, t, freq);
        }
        if (mode == QQStandardize::Marginal) {
            if (part == QQPart::Real) {
                residuals.push_back(dr);
                sigmas.push_back(l11);
            } else {
                residuals.push_back(di);
                sigmas.push_back(std::hypot(l21, l22));
            }
        } else {
            const double u1 = dr / l11;
            residuals.push_back(part == QQPart::Real ? u1 : (di - l21 * u1) / l22);
            sigmas.push_back(1.0);
        }
    }
}

double undersampling_gradient_estimate(std::span<const double> residuals, std::span<const double> variances) {
    if (residuals.size() != variances.size()) throw ShapeError("undersampling estimate: length mismatch");
    if (residuals.empty()) throw ConfigError("undersampling estimate: need at least one sample");
    double sum = 0.0;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        if (!(variances[i] > 0.0)) throw ConfigError("undersampling estimate: variance must be positive");
        sum += 2.0 * residuals[i] / variances[i];
    }
    return sum / static_cast<double>(residuals.size());
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_cf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-15;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double cc = 1.0;
    double dd = 1.0 - qab * x / qap;
    if (std::abs(dd) < tiny) dd = tiny;
    dd = 1.0 / dd;
    double h = dd;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        dd = 1.0 + aa * dd;
        if (std::abs(dd) < tiny) dd = tiny;
        cc = 1.0 + aa / cc;
        if (std::abs(cc) < tiny) cc = tiny;
        dd = 1.0 / dd;
        h *= dd * cc;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        dd = 1.0 + aa * dd;
        if (std::abs(dd) < tiny) dd = tiny;
        cc = 1.0 + aa / cc;
        if (std::abs(cc) < tiny) cc = tiny;
        dd = 1.0 / dd;
        const double del = dd * cc;
        h *= del;
        if (std::abs(del - 1.0) < eps) return h;
    }
    throw RuntimeError("incomplete beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0)) throw ConfigError("incomplete_beta: a and b must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("incomplete_beta: x must lie in [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_tailed(double t, double nu) {
    if (!(nu > 0.0)) throw ConfigError("student t: degrees of freedom must be positive");
    if (std::isinf(t)) return 0.0;
    if (std::isnan(t)) throw ConfigError("student t: t is NaN");
    return incomplete_beta(0.5 * nu, 0.5, nu / (nu + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("paired_t_test: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw ConfigError("paired_t_test: need at least two pairs");
    std::vector<double> d(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = a[i] - b[i];
        mean += d[i];
    }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    TTestResult r;
    r.n = n;
    if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; })) return r;
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0.0) {
        r.t = mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        return r;
    }
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p = student_t_two_tailed(r.t, static_cast<double>(n - 1));
    return r;
}

std::string format_t_test(const TTestResult& r) {
    return "t=" + format_double(r.t) + " p=" + format_double(r.p) + " n=" + std::to_string(r.n);
}

}  // namespace hnll
