#include "hnll/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hnll/error.hpp"
#include "hnll/io_util.hpp"
#include "hnll/rng.hpp"
#include "hnll/wav.hpp"

namespace fs = std::filesystem;

namespace hnll {

std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::White: return "white";
        case NoiseKind::Pink: return "pink";
        case NoiseKind::Babble: return "babble-proxy";
    }
    return "?";
}

NoiseKind parse_noise_kind(const std::string& s) {
    if (s == "white") return NoiseKind::White;
    if (s == "pink") return NoiseKind::Pink;
    if (s == "babble-proxy" || s == "babble") return NoiseKind::Babble;
    throw ConfigError("unknown noise kind '" + s + "' (expected white, pink or babble-proxy)");
}

void CorpusConfig::validate(std::size_t frame_len) const {
    if (n_train == 0) throw ConfigError("corpus: n_train must be >= 1");
    if (!(snr_train_lo_db <= snr_train_hi_db)) throw ConfigError("corpus: snr range must satisfy lo <= hi");
    if (!std::isfinite(snr_train_lo_db) || !std::isfinite(snr_train_hi_db))
        throw ConfigError("corpus: snr range must be finite");
    if (n_test > 0 && snr_test_list_db.empty()) throw ConfigError("corpus: snr_test_list_db is empty");
    for (double s : snr_test_list_db)
        if (!std::isfinite(s)) throw ConfigError("corpus: test SNRs must be finite");
    if (sample_rate <= 0) throw ConfigError("corpus: sample_rate must be positive");
    if (!(duration_s >= 0.1)) throw ConfigError("corpus: duration_s must be >= 0.1");
    if (duration_s * sample_rate < static_cast<double>(frame_len))
        throw ConfigError("corpus: utterances shorter than one STFT frame");
    if (noise_kinds.empty()) throw ConfigError("corpus: noise_kinds is empty");
}

nlohmann::json to_json(const CorpusConfig& c) {
    nlohmann::json kinds = nlohmann::json::array();
    for (auto k : c.noise_kinds) kinds.push_back(to_string(k));
    return {{"n_train", c.n_train},
            {"n_val", c.n_val},
            {"n_test", c.n_test},
            {"snr_train_range_db", {c.snr_train_lo_db, c.snr_train_hi_db}},
            {"snr_test_list_db", c.snr_test_list_db},
            {"duration_s", c.duration_s},
            {"sample_rate", c.sample_rate},
            {"seed", c.seed},
            {"noise_kinds", kinds}};
}

CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
    CorpusConfig c;
    try {
        c.n_train = j.value("n_train", c.n_train);
        c.n_val = j.value("n_val", c.n_val);
        c.n_test = j.value("n_test", c.n_test);
        if (j.contains("snr_train_range_db")) {
            const auto& r = j.at("snr_train_range_db");
            if (!r.is_array() || r.size() != 2) throw ConfigError("corpus: snr_train_range_db must be [lo, hi]");
            c.snr_train_lo_db = r[0].get<double>();
            c.snr_train_hi_db = r[1].get<double>();
        }
        c.snr_test_list_db = j.value("snr_test_list_db", c.snr_test_list_db);
        c.duration_s = j.value("duration_s", c.duration_s);
        c.sample_rate = j.value("sample_rate", c.sample_rate);
        c.seed = j.value("seed", c.seed);
        if (j.contains("noise_kinds")) {
            c.noise_kinds.clear();
            for (const auto& k : j.at("noise_kinds")) c.noise_kinds.push_back(parse_noise_kind(k.get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("corpus config: ") + e.what());
    }
    return c;
}

nlohmann::json to_json(const ManifestEntry& e) {
    return {{"id", e.id},
            {"split", e.split},
            {"clean_path", e.clean_path},
            {"noise_path", e.noise_path},
            {"noisy_path", e.noisy_path},
            {"snr_db", e.snr_db},
            {"seed", e.seed},
            {"duration_s", e.duration_s},
            {"sample_rate", e.sample_rate}};
}

ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    ManifestEntry e;
    try {
        e.id = j.at("id").get<std::string>();
        e.split = j.at("split").get<std::string>();
        e.clean_path = j.at("clean_path").get<std::string>();
        e.noise_path = j.at("noise_path").get<std::string>();
        e.noisy_path = j.at("noisy_path").get<std::string>();
        e.snr_db = j.at("snr_db").get<double>();
        e.seed = j.at("seed").get<std::uint64_t>();
        e.duration_s = j.at("duration_s").get<double>();
        e.sample_rate = j.at("sample_rate").get<int>();
    } catch (const nlohmann::json::exception& e2) {
        throw ConfigError(std::string("manifest entry: ") + e2.what());
    }
    return e;
}

namespace {

std::size_t sample_count(double duration_s, int sample_rate) {
    return static_cast<std::size_t>(std::llround(duration_s * sample_rate));
}

void scale_to_rms(std::vector<double>& x, double target) {
    const double p = signal_power(x);
    if (p <= 0.0) return;
    const double g = target / std::sqrt(p);
    for (double& v : x) v *= g;
}

// Resonance magnitude of a formant at `fc` with bandwidth `bw`, evaluated at f.
double formant_gain(double f, double fc, double bw) {
    const double x = (f - fc) / (0.5 * bw);
    return 1.0 / std::sqrt(1.0 + x * x);
}

}  // namespace

SpeechTrack synth_speech_track(std::uint64_t seed, double duration_s, int sample_rate) {
    if (!(duration_s >= 0.1)) throw ConfigError("synth_speech: duration_s must be >= 0.1");
    if (sample_rate <= 0) throw ConfigError("synth_speech: sample_rate must be positive");
    const std::size_t n = sample_count(duration_s, sample_rate);
    const double fs = sample_rate;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    Rng rng(seed);

    // Fundamental: a base pitch with slow drift made of three low-rate sinusoids.
    const double f0_base = rng.uniform(100.0, 240.0);
    std::array<double, 3> drift_rate{}, drift_depth{}, drift_phase{};
    for (std::size_t i = 0; i < 3; ++i) {
        drift_rate[i] = rng.uniform(0.3, 3.0);
        drift_depth[i] = rng.uniform(0.01, 0.05);
        drift_phase[i] = rng.uniform(0.0, two_pi);
    }
    const std::size_t harmonics = 6 + static_cast<std::size_t>(rng.below(7));
    const std::array<double, 3> formant_hz{rng.uniform(300.0, 900.0), rng.uniform(900.0, 2300.0),
                                           rng.uniform(2300.0, 3500.0)};
    const std::array<double, 3> formant_bw{rng.uniform(80.0, 160.0), rng.uniform(100.0, 220.0),
                                           rng.uniform(150.0, 300.0)};
    const std::array<double, 3> formant_amp{1.0, rng.uniform(0.4, 0.9), rng.uniform(0.2, 0.5)};
    const double syllable_hz = rng.uniform(2.0, 8.0);
    const double syllable_phase = rng.uniform(0.0, two_pi);
    std::vector<double> harmonic_phase(harmonics);
    for (double& p : harmonic_phase) p = rng.uniform(0.0, two_pi);

    SpeechTrack out;
    out.wave.sample_rate = sample_rate;
    out.wave.samples.assign(n, 0.0);
    out.f0.assign(n, 0.0);
    double phase = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        double drift = 0.0;
        for (std::size_t k = 0; k < 3; ++k) drift += drift_depth[k] * std::sin(two_pi * drift_rate[k] * t + drift_phase[k]);
        const double f0 = std::clamp(f0_base * std::exp(drift), 80.0, 300.0);
        out.f0[i] = f0;

        // Half-wave syllable envelope: voiced bursts separated by silence.
        const double s = std::sin(two_pi * syllable_hz * t + syllable_phase);
        const double am = s > 0.0 ? std::pow(s, 1.5) : 0.0;

        double v = 0.0;
        if (am > 0.0) {
            for (std::size_t h = 0; h < harmonics; ++h) {
                const double fh = f0 * static_cast<double>(h + 1);
                if (fh >= 0.45 * fs) break;
                double env = 0.0;
                for (std::size_t k = 0; k < 3; ++k) env += formant_amp[k] * formant_gain(fh, formant_hz[k], formant_bw[k]);
                // Glottal tilt keeps the low harmonics dominant.
                env += 1.0 / static_cast<double>(h + 1);
                v += env * std::sin(static_cast<double>(h + 1) * phase + harmonic_phase[h]);
            }
        }
        out.wave.samples[i] = am * v;
        phase += two_pi * f0 / fs;
        if (phase > two_pi * 1e6) phase = std::fmod(phase, two_pi);
    }

    double peak = 0.0;
    for (double v : out.wave.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.0)
        for (double& v : out.wave.samples) v *= 0.5 / peak;
    return out;
}

Waveform synth_speech(std::uint64_t seed, double duration_s, int sample_rate) {
    return synth_speech_track(seed, duration_s, sample_rate).wave;
}

Waveform synth_noise(NoiseKind kind, std::uint64_t seed, double duration_s, int sample_rate) {
    if (!(duration_s > 0.0)) throw ConfigError("synth_noise: duration_s must be positive");
    if (sample_rate <= 0) throw ConfigError("synth_noise: sample_rate must be positive");
    const std::size_t n = sample_count(duration_s, sample_rate);
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.assign(n, 0.0);
    Rng rng(seed);
    switch (kind) {
        case NoiseKind::White:
            for (double& v : w.samples) v = rng.normal();
            break;
        case NoiseKind::Pink: {
            // Paul Kellet's bank of one-pole sections; -3 dB/octave from a few
            // Hz up to roughly a tenth of the sample rate at 16 kHz.
            std::array<double, 7> b{};
            for (double& v : w.samples) {
                const double x = rng.normal();
                b[0] = 0.99886 * b[0] + x * 0.0555179;
                b[1] = 0.99332 * b[1] + x * 0.0750759;
                b[2] = 0.96900 * b[2] + x * 0.1538520;
                b[3] = 0.86650 * b[3] + x * 0.3104856;
                b[4] = 0.55000 * b[4] + x * 0.5329522;
                b[5] = -0.7616 * b[5] - x * 0.0168980;
                v = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + x * 0.5362;
                b[6] = x * 0.115926;
            }
            scale_to_rms(w.samples, 1.0);
            break;
        }
        case NoiseKind::Babble: {
            constexpr std::size_t talkers = 8;
            for (std::size_t k = 0; k < talkers; ++k) {
                const Waveform s = synth_speech(derive_seed(seed, k), duration_s, sample_rate);
                for (std::size_t i = 0; i < n; ++i) w.samples[i] += s.samples[i];
            }
            scale_to_rms(w.samples, 1.0);
            break;
        }
    }
    return w;
}

namespace {

// Disjoint counter ranges per split feed derive_seed.
constexpr std::uint64_t kSplitStride = std::uint64_t{1} << 40;

struct Generated {
    ManifestEntry entry;
    Waveform clean, noise, noisy;
};

Generated generate_entry(const CorpusConfig& cfg, const std::string& split, std::uint64_t split_index,
                         std::size_t i, double snr_db_fixed, bool fixed_snr) {
    Generated g;
    const std::uint64_t seed = derive_seed(cfg.seed, split_index * kSplitStride + i);
    Rng rng(seed);
    const NoiseKind kind = cfg.noise_kinds[static_cast<std::size_t>(rng.below(cfg.noise_kinds.size()))];
    const double snr = fixed_snr ? snr_db_fixed : rng.uniform(cfg.snr_train_lo_db, cfg.snr_train_hi_db);

    const Waveform clean = synth_speech(derive_seed(seed, 1), cfg.duration_s, cfg.sample_rate);
    const Waveform noise = synth_noise(kind, derive_seed(seed, 2), cfg.duration_s, cfg.sample_rate);

    // Everything is rounded to float before bookkeeping so the stored files
    // satisfy noisy == clean + noise exactly.
    const std::size_t n = clean.size();
    g.clean.sample_rate = g.noise.sample_rate = g.noisy.sample_rate = cfg.sample_rate;
    g.clean.samples.resize(n);
    g.noise.samples.resize(n);
    g.noisy.samples.resize(n);
    for (std::size_t k = 0; k < n; ++k) g.clean.samples[k] = static_cast<float>(clean.samples[k]);
    const double gain = snr_gain(g.clean.samples, noise.samples, snr);
    for (std::size_t k = 0; k < n; ++k) {
        const float c = static_cast<float>(g.clean.samples[k]);
        const float s = static_cast<float>(gain * noise.samples[k]);
        g.noise.samples[k] = s;
        g.noisy.samples[k] = c + s;
    }

    char id[64];
    std::snprintf(id, sizeof(id), "%s_%04zu", split.c_str(), i);
    g.entry.id = id;
    g.entry.split = split;
    g.entry.clean_path = split + "/" + g.entry.id + "_clean.wav";
    g.entry.noise_path = split + "/" + g.entry.id + "_noise.wav";
    g.entry.noisy_path = split + "/" + g.entry.id + "_noisy.wav";
    g.entry.snr_db = snr;
    g.entry.seed = seed;
    g.entry.duration_s = static_cast<double>(n) / cfg.sample_rate;
    g.entry.sample_rate = cfg.sample_rate;
    return g;
}

bool is_replaceable(const fs::path& dir) {
    if (!fs::exists(dir)) return true;
    if (!fs::is_directory(dir)) return false;
    return fs::is_empty(dir) || fs::exists(dir / kManifestName);
}

}  // namespace

std::vector<ManifestEntry> build_corpus(const CorpusConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    if (out_dir.empty()) throw ConfigError("corpus: output directory is empty");
    if (!is_replaceable(out_dir))
        throw ConfigError("corpus: " + out_dir.string() + " exists and is not a corpus directory");

    fs::path stage = out_dir;
    stage += ".partial";
    std::vector<ManifestEntry> manifest;
    try {
        fs::remove_all(stage);
        for (const char* s : {"train", "val", "test"}) fs::create_directories(stage / s);

        auto emit = [&](const Generated& g) {
            write_wav(stage / g.entry.clean_path, g.clean);
            write_wav(stage / g.entry.noise_path, g.noise);
            write_wav(stage / g.entry.noisy_path, g.noisy);
            manifest.push_back(g.entry);
        };
        for (std::size_t i = 0; i < cfg.n_train; ++i) emit(generate_entry(cfg, "train", 0, i, 0.0, false));
        for (std::size_t i = 0; i < cfg.n_val; ++i) emit(generate_entry(cfg, "val", 1, i, 0.0, false));
        for (std::size_t i = 0; i < cfg.n_test; ++i) {
            const double snr = cfg.snr_test_list_db[i % cfg.snr_test_list_db.size()];
            emit(generate_entry(cfg, "test", 2, i, snr, true));
        }

        std::string lines;
        for (const auto& e : manifest) lines += to_json(e).dump() + "\n";
        write_file_atomic(stage / kManifestName, lines);
        write_file_atomic(stage / "corpus_config.json", to_json(cfg).dump(2) + "\n");

        fs::remove_all(out_dir);
        if (out_dir.has_parent_path()) fs::create_directories(out_dir.parent_path());
        fs::rename(stage, out_dir);
    } catch (const fs::filesystem_error& e) {
        std::error_code ec;
        fs::remove_all(stage, ec);
        throw RuntimeError(std::string("corpus: ") + e.what());
    } catch (...) {
        std::error_code ec;
        fs::remove_all(stage, ec);
        throw;
    }
    return manifest;
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
    std::istringstream in(read_file(manifest));
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(manifest_entry_from_json(j));
    }
    return out;
}

fs::path resolve_manifest(const fs::path& p) {
    if (fs::is_directory(p)) return p / kManifestName;
    return p;
}

}  // namespace hnll
