#pragma once

#include <cstddef>
#include <vector>

#include "hnll/losses.hpp"
#include "hnll/rng.hpp"

namespace hnll::testing {

inline Spectrogram random_spec(Rng& rng, std::size_t t, std::size_t f, double scale = 1.0) {
    Spectrogram s(t, f);
    for (auto& v : s.re) v = scale * rng.normal();
    for (auto& v : s.im) v = scale * rng.normal();
    return s;
}

// Random prediction whose diagonal entries sit well above delta.
inline DensityPrediction random_pred(Rng& rng, CovLayout layout, std::size_t t, std::size_t f, double delta,
                                     bool zero_l21 = false) {
    DensityPrediction p;
    p.mean = random_spec(rng, t, f);
    const std::size_t planes = CholeskyField::planes_for(layout);
    std::vector<double> raw(planes * t * f);
    for (std::size_t k = 0; k < planes; ++k)
        for (std::size_t i = 0; i < t * f; ++i) {
            const bool off = layout == CovLayout::Block2 && k == 1;
            raw[k * t * f + i] = off ? (zero_l21 ? 0.0 : 0.5 * rng.normal()) : delta + rng.uniform(0.2, 1.5);
        }
    p.chol = CholeskyField::from_raw(layout, t, f, std::move(raw), delta);
    return p;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double rel_diff(double a, double b) {
    const double d = std::abs(a - b);
    const double s = std::max(std::abs(a), std::abs(b));
    return s == 0.0 ? d : d / s;
}

}  // namespace hnll::testing
