#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hnll/corpus.hpp"
#include "hnll/losses.hpp"
#include "hnll/model.hpp"

namespace hnll {

enum class LossKind { Mae, Mse, SiSdr, NllDiag, NllBlock, Hybrid };

std::string to_string(LossKind k);
LossKind parse_loss(const std::string& s);
bool uses_covariance(LossKind k);

struct TrainConfig {
    LossKind loss = LossKind::Mse;
    double delta = 0.01;
    double beta = 0.5;
    double alpha = 0.99;
    DiagWeighting diag_weighting = DiagWeighting::PerComponent;
    double lr = 4e-4;
    std::size_t batch_size = 16;
    std::size_t epochs = 60;
    double grad_clip = 5.0;  // global L2 norm; <= 0 disables
    std::uint64_t seed = 0;
    std::size_t frame_len = 320;
    std::size_t hop = 160;
    // Scale input features by 1 / RMS of the training noisy STFT coefficients.
    bool auto_feature_norm = true;
    ModelConfig model;

    // Copies delta into the model and fixes the covariance layout implied by
    // the loss.
    ModelConfig resolved_model() const;
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// One bias-corrected Adam update. Throws NonFiniteError (index = batch_id)
// before touching anything if a gradient entry is not finite.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state, double lr,
               std::size_t batch_id = 0);

// Scales grads in place to L2 norm <= max_norm. Returns true if it clipped.
bool clip_global_norm(std::vector<double>& grads, double max_norm);

// One corpus utterance held in memory.
struct Utterance {
    std::string id;
    double snr_db = 0.0;
    Waveform clean, noisy;
    Spectrogram clean_spec, noisy_spec;
};

// With `missing` set, items whose files cannot be read are skipped and
// reported there as "<id>: <reason>"; otherwise the first error propagates.
std::vector<Utterance> load_split(const std::filesystem::path& manifest, const std::string& split,
                                  std::size_t frame_len = 320, std::size_t hop = 160,
                                  std::vector<std::string>* missing = nullptr);

// Loss and model gradient for one utterance.
struct ItemResult {
    double loss = 0.0;
    std::vector<double> grad;
};
ItemResult item_loss_and_grad(const TrainConfig& cfg, const ModelParams& params, const ModelConfig& mcfg,
                              const Utterance& u, bool want_grad = true);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_si_sdr = 0.0;
    double val_loss = 0.0;
    std::size_t clip_events = 0;
};

struct TrainResult {
    Checkpoint best;  // parameters with the highest validation SI-SDR
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;  // 0 = initialization (no epochs run)
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const TrainConfig& cfg, const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& val_set, const EpochCallback& on_epoch = {});

// Writes config.json, history.csv and model.ckpt into out_dir.
void write_train_outputs(const std::filesystem::path& out_dir, const TrainConfig& cfg, const TrainResult& r);

std::string history_csv(const std::vector<EpochRecord>& h);

struct UtteranceScore {
    std::string id;
    double snr_db = 0.0;
    double si_sdr_noisy = 0.0;
    double si_sdr_enhanced = 0.0;
    double nll = 0.0;  // unweighted NLL of the predicted density
};

struct BucketSummary {
    double snr_db = 0.0;
    std::size_t count = 0;
    double si_sdr_noisy = 0.0;
    double si_sdr_enhanced = 0.0;
    double improvement = 0.0;
    double nll = 0.0;
};

struct EvalReport {
    std::vector<UtteranceScore> items;
    std::vector<BucketSummary> buckets;  // ascending SNR
    double mean_si_sdr = 0.0;
    double mean_nll = 0.0;
};

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<Utterance>& set);

std::string eval_items_csv(const EvalReport& r);
std::string eval_summary_csv(const EvalReport& r);

}  // namespace hnll
