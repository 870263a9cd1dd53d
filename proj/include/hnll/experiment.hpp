#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hnll/diagnostics.hpp"
#include "hnll/trainer.hpp"

namespace hnll {

// ---- two-bin undersampling toy ------------------------------------------

enum class ToyOptimizer { Sgd, Adam };

struct UndersampleConfig {
    double delta = 1e-4;
    double beta = 0.0;
    std::size_t steps = 2000;
    double lr = 1e-4;
    std::size_t samples = 64;  // frames per bin; must be even (antithetic pairs)
    std::uint64_t seed = 0;
    double var_low = 1e-4;
    double var_high = 1.0;
    double target_mean = 1.0;
    double init_sigma = 0.1;
    // Learn sigma per (bin, part); otherwise sigma is fixed to the true value.
    bool learn_sigma = true;
    ToyOptimizer optimizer = ToyOptimizer::Sgd;

    void validate() const;
};

nlohmann::json to_json(const UndersampleConfig& c);

struct UndersampleStep {
    std::size_t step = 0;
    double loss = 0.0;
    double mean_grad[2]{};  // (2/N) sum (mu - x) / sigma^2 per bin
    double sq_error[2]{};  // mean over re/im of (mu - true mean)^2 per bin
    double sigma[2]{};     // mean predicted sigma per bin
};

struct UndersampleResult {
    std::vector<UndersampleStep> trace;  // step 0 (initial) .. steps
    // sq_error[high] / sq_error[low] at the final step.
    double error_ratio() const;
};

// Bin 0 has variance var_low, bin 1 var_high. Both parts of each bin carry
// i.i.d. data whose sample mean and variance equal the targets exactly.
UndersampleResult undersample_demo(const UndersampleConfig& cfg);

std::string undersample_csv(const UndersampleResult& r);

// ---- variant comparison ----------------------------------------------------

struct Variant {
    std::string name;
    TrainConfig train;
};

struct ExperimentSpec {
    std::vector<Variant> variants;
    std::filesystem::path corpus;
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    // Names of the two variants compared by a paired t-test on per-utterance
    // test SI-SDR. Empty: the first two variants.
    std::optional<std::pair<std::string, std::string>> compare;

    void validate() const;
};

// JSON form: {"corpus", "out", "seed", "compare": [a, b],
//             "variants": [{"name": ..., <TrainConfig fields>}]}
ExperimentSpec experiment_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentSpec& s);

// Variant grids. "desk": mse, sisdr, nll-block (0.01, 0.5) and (0.0001, 0).
// "sweep": mse, sisdr and nll-block over delta {1e-4, 1e-3, 1e-2, 5e-2} x beta {0, 0.5}.
std::vector<Variant> preset_variants(const std::string& name, const TrainConfig& base);

struct VariantOutcome {
    std::string name;
    TrainConfig train;
    bool ok = false;
    std::string error;
    EvalReport eval;
    std::size_t best_epoch = 0;
};

struct ExperimentReport {
    std::vector<VariantOutcome> outcomes;
    std::vector<double> snr_buckets;
    std::optional<TTestResult> ttest;
    std::string ttest_a, ttest_b;
};

// Trains and evaluates every variant (in a bounded worker pool capped by
// HNLL_THREADS), writes per-variant outputs under out_dir/<name>/, and writes
// comparison.csv, ttest.txt and experiment.json into out_dir.
ExperimentReport run_experiment(const ExperimentSpec& spec);

std::string comparison_csv(const ExperimentReport& r);

// Worker count from HNLL_THREADS (default 1, never more than `jobs`).
std::size_t worker_count(std::size_t jobs);

// Standalone pipeline used by both the CLI and run_experiment.
struct PipelineResult {
    TrainResult train;
    EvalReport eval;
};
PipelineResult train_and_evaluate(const TrainConfig& cfg, const std::filesystem::path& manifest,
                                  const std::filesystem::path& out_dir);

void write_eval_outputs(const std::filesystem::path& out_dir, const EvalReport& r);

}  // namespace hnll
