#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hnll/dsp.hpp"

namespace hnll {

enum class NoiseKind { White, Pink, Babble };

std::string to_string(NoiseKind k);
NoiseKind parse_noise_kind(const std::string& s);

struct CorpusConfig {
    std::size_t n_train = 500;
    std::size_t n_val = 50;
    std::size_t n_test = 60;
    double snr_train_lo_db = -5.0;
    double snr_train_hi_db = 5.0;
    std::vector<double> snr_test_list_db{-5.0, 0.0, 5.0};
    double duration_s = 1.0;
    int sample_rate = 16000;
    std::uint64_t seed = 0;
    std::vector<NoiseKind> noise_kinds{NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble};

    void validate(std::size_t frame_len = 320) const;
};

nlohmann::json to_json(const CorpusConfig& cfg);
CorpusConfig corpus_config_from_json(const nlohmann::json& j);

struct ManifestEntry {
    std::string id;
    std::string split;  // train | val | test
    std::string clean_path;
    std::string noise_path;  // the scaled noise actually mixed in
    std::string noisy_path;
    double snr_db = 0.0;
    std::uint64_t seed = 0;
    double duration_s = 0.0;
    int sample_rate = 0;
};

nlohmann::json to_json(const ManifestEntry& e);
ManifestEntry manifest_entry_from_json(const nlohmann::json& j);

struct SpeechTrack {
    Waveform wave;
    std::vector<double> f0;  // instantaneous fundamental per sample, Hz
};

// Voiced-speech stand-in: harmonic source with a drifting fundamental in
// [80, 300] Hz, 6-12 harmonics under a three-formant envelope, 2-8 Hz
// syllable-rate amplitude modulation, peak-normalized to 0.5.
SpeechTrack synth_speech_track(std::uint64_t seed, double duration_s, int sample_rate);
Waveform synth_speech(std::uint64_t seed, double duration_s, int sample_rate);

// white: unit-variance Gaussian. pink: white through a one-pole filter bank
// approximating -3 dB/octave, unit RMS. babble: eight synthetic speech
// streams summed, unit RMS.
Waveform synth_noise(NoiseKind kind, std::uint64_t seed, double duration_s, int sample_rate);

// Generates the corpus into out_dir (staged in a sibling directory and moved
// into place when complete). Returns the manifest in id order.
std::vector<ManifestEntry> build_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

inline constexpr const char* kManifestName = "manifest.jsonl";

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);

// Accepts either a corpus directory or a manifest path.
std::filesystem::path resolve_manifest(const std::filesystem::path& corpus_or_manifest);

}  // namespace hnll
