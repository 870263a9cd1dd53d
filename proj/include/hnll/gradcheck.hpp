#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace hnll {

// Finite-difference checks of the analytic loss and model gradients on small
// random instances. "loss" is one of mae, mse, sisdr, nll-diag, nll-block,
// hybrid, or "model" (forward + nll-block through a tiny network).
struct GradCheckConfig {
    std::string loss = "nll-block";
    double delta = 0.01;
    double beta = 0.5;
    double alpha = 0.99;
    std::size_t trials = 100;
    double tol = 1e-4;
    double step = 1e-5;
    std::uint64_t seed = 0;
    // Hold the uncertainty weights at their unperturbed values while
    // differencing. Off, the numeric gradient also sees d(weight) and
    // disagrees with the stop-gradient analytic one whenever beta > 0.
    bool freeze_weights = true;
};

struct GradCheckReport {
    std::size_t trials = 0;
    std::size_t coordinates = 0;  // total coordinates compared
    double max_rel_error = 0.0;
    bool passed = false;
};

// Relative error |a - n| / max(|a|, |n|, 1e-8).
double grad_rel_error(double analytic, double numeric);

GradCheckReport run_grad_check(const GradCheckConfig& cfg);

}  // namespace hnll
