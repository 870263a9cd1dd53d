#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "hnll/dsp.hpp"
#include "hnll/losses.hpp"

namespace hnll {

// How raw Cholesky-head outputs become diagonal entries.
enum class DiagTransform {
    SoftplusClamp,  // max(softplus(raw), delta)
    Clamp,          // max(raw, delta)
};

struct ModelConfig {
    std::size_t context_frames = 1;
    std::vector<std::size_t> hidden_sizes{256};
    CovLayout layout = CovLayout::Block2;
    std::size_t bins = 161;
    double feature_norm = 1.0;
    double delta = 0.01;
    DiagTransform diag_transform = DiagTransform::SoftplusClamp;
    // Scales the Cholesky head's initial weight range so the initial diagonal
    // entries sit close to the bias value instead of straddling delta.
    double chol_head_gain = 0.1;
    // Mean = noisy input + mean-head output instead of the head output alone.
    bool residual_mean = false;
    std::uint64_t seed = 0;

    std::size_t input_size() const { return 2 * bins * (2 * context_frames + 1); }
    std::size_t mean_outputs() const { return 2 * bins; }
    std::size_t chol_outputs() const { return CholeskyField::planes_for(layout) * bins; }
    void validate() const;
};

struct LayerShape {
    std::string name;
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t offset = 0;  // weights (out x in, row-major) then bias (out)

    std::size_t size() const { return out * in + out; }
    std::size_t bias_offset() const { return offset + out * in; }
};

// Flat parameter vector. Layers are ordered trunk..., mean head, Cholesky
// head; entries before `head_boundary` belong to the mean path (trunk plus
// mean head), entries from it onward only feed the covariance.
struct ModelParams {
    std::vector<double> values;
    std::vector<LayerShape> layers;
    std::size_t head_boundary = 0;

    std::size_t size() const { return values.size(); }
    const LayerShape& mean_head() const { return layers[layers.size() - 2]; }
    const LayerShape& chol_head() const { return layers.back(); }
};

ModelParams make_layout(const ModelConfig& cfg);

ModelParams init_params(const ModelConfig& cfg);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ForwardCache {
    RowMatrix input;                    // T x input_size
    std::vector<RowMatrix> activations;  // post-tanh, one per trunk layer
    RowMatrix chol_raw;                 // T x chol_outputs, before transform

    bool empty() const { return input.size() == 0; }
};

struct ModelOutput {
    DensityPrediction pred;
    ForwardCache cache;
};

// Per-frame features: (re, im) of frames t-c..t+c (zero outside the utterance),
// scaled by feature_norm.
RowMatrix frame_features(const ModelConfig& cfg, const Spectrogram& noisy);

// With with_cov = false the Cholesky head is skipped and pred.chol is empty.
ModelOutput forward(const ModelParams& params, const ModelConfig& cfg, const Spectrogram& noisy,
                    bool with_cov = true);

// Mean head only; the covariance head is never evaluated.
Spectrogram enhance(const ModelParams& params, const ModelConfig& cfg, const Spectrogram& noisy);

// d loss / d params. `drop_cov_head` zeroes the covariance-only entries.
std::vector<double> backward(const ModelParams& params, const ModelConfig& cfg, const ForwardCache& cache,
                             const LossReport& upstream, bool drop_cov_head = false);

// Checkpoint: "HNLL", u32 version, u32 metadata length, UTF-8 JSON metadata,
// then the parameters as little-endian float64 in layer order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::string to_string(CovLayout layout);
CovLayout parse_layout(const std::string& s);
std::string to_string(DiagTransform t);
DiagTransform parse_diag_transform(const std::string& s);

}  // namespace hnll
