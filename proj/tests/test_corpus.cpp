#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>

#include "hnll/corpus.hpp"
#include "hnll/error.hpp"
#include "hnll/fft.hpp"
#include "hnll/io_util.hpp"
#include "hnll/wav.hpp"

using namespace hnll;
namespace fs = std::filesystem;

namespace {

CorpusConfig tiny_config() {
    CorpusConfig c;
    c.n_train = 4;
    c.n_val = 2;
    c.n_test = 3;
    c.duration_s = 0.25;
    c.seed = 9;
    return c;
}

// Welch-averaged power spectrum with a Hann window, bin spacing rate / n.
std::vector<double> welch(const std::vector<double>& x, std::size_t n) {
    FftPlan plan(n);
    std::vector<double> win(n), frame(n), psd(n / 2 + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    std::vector<cplx> spec(n / 2 + 1);
    for (std::size_t start = 0; start + n <= x.size(); start += n / 2) {
        for (std::size_t i = 0; i < n; ++i) frame[i] = x[start + i] * win[i];
        plan.forward_real(frame, spec);
        for (std::size_t k = 0; k < spec.size(); ++k) psd[k] += std::norm(spec[k]);
    }
    return psd;
}

double band_mean(const std::vector<double>& psd, double hz_per_bin, double lo, double hi) {
    double acc = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < psd.size(); ++k) {
        const double f = k * hz_per_bin;
        if (f >= lo && f < hi) {
            acc += psd[k];
            ++n;
        }
    }
    return acc / n;
}

}  // namespace

TEST_CASE("noise kind names") {
    CHECK(to_string(NoiseKind::Babble) == "babble-proxy");
    CHECK(parse_noise_kind("babble") == NoiseKind::Babble);
    CHECK(parse_noise_kind("pink") == NoiseKind::Pink);
    CHECK_THROWS_AS(parse_noise_kind("brown"), ConfigError);
}

TEST_CASE("noise generators have unit RMS and the expected spectra") {
    for (auto kind : {NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble}) {
        const auto w = synth_noise(kind, 3, 4.0, 16000);
        CHECK(w.size() == 64000);
        CHECK(std::sqrt(signal_power(w.samples)) == doctest::Approx(1.0).epsilon(kind == NoiseKind::White ? 0.02 : 1e-9));
    }
    // Pink: power density halves per octave, so 200 Hz carries about twice
    // the density of 400 Hz.
    const auto pink = synth_noise(NoiseKind::Pink, 4, 20.0, 16000);
    const auto psd = welch(pink.samples, 3200);
    const double ratio = band_mean(psd, 5.0, 150.0, 250.0) / band_mean(psd, 5.0, 350.0, 450.0);
    CHECK(ratio > 1.7);
    CHECK(ratio < 2.4);

    const auto white = synth_noise(NoiseKind::White, 4, 20.0, 16000);
    const auto wpsd = welch(white.samples, 3200);
    const double wr = band_mean(wpsd, 5.0, 150.0, 250.0) / band_mean(wpsd, 5.0, 350.0, 450.0);
    CHECK(wr == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("speech proxy is harmonic on its fundamental") {
    const auto tr = synth_speech_track(12, 1.0, 16000);
    REQUIRE(tr.f0.size() == tr.wave.size());
    double peak = 0.0;
    for (double v : tr.wave.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(0.5));
    for (double f : tr.f0) {
        CHECK(f >= 80.0);
        CHECK(f <= 300.0);
    }

    // Loudest 40 ms segment, zero-padded to 1 Hz resolution.
    const std::size_t seg = 640, n = 16000;
    std::size_t best = 0;
    double best_e = -1.0;
    for (std::size_t s = 0; s + seg <= tr.wave.size(); s += 160) {
        double e = 0.0;
        for (std::size_t i = 0; i < seg; ++i) e += tr.wave.samples[s + i] * tr.wave.samples[s + i];
        if (e > best_e) {
            best_e = e;
            best = s;
        }
    }
    double f0 = 0.0;
    std::vector<double> buf(n, 0.0);
    for (std::size_t i = 0; i < seg; ++i) {
        buf[i] = tr.wave.samples[best + i] * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / seg));
        f0 += tr.f0[best + i] / seg;
    }
    std::vector<cplx> spec(n / 2 + 1);
    FftPlan(n).forward_real(buf, spec);
    double total = 0.0, near = 0.0;
    for (std::size_t k = 1; k < spec.size(); ++k) {
        const double p = std::norm(spec[k]);
        total += p;
        const double h = std::round(k / f0);
        if (h >= 1 && std::abs(static_cast<double>(k) - h * f0) <= 0.25 * f0) near += p;
    }
    CHECK(near / total > 0.9);
}

TEST_CASE("corpus files satisfy the mixing bookkeeping") {
    const fs::path dir = fs::temp_directory_path() / "hnll_test_corpus";
    fs::remove_all(dir);
    const auto cfg = tiny_config();
    const auto manifest = build_corpus(cfg, dir);
    REQUIRE(manifest.size() == 9);
    CHECK(read_manifest(resolve_manifest(dir)).size() == 9);
    CHECK(fs::exists(dir / "corpus_config.json"));
    CHECK_FALSE(fs::exists(dir.string() + ".partial"));

    std::vector<double> test_snrs;
    for (const auto& e : manifest) {
        const auto clean = read_wav(dir / e.clean_path);
        const auto noise = read_wav(dir / e.noise_path);
        const auto noisy = read_wav(dir / e.noisy_path);
        REQUIRE(clean.size() == 4000);
        const double snr = 10.0 * std::log10(signal_power(clean.samples) / signal_power(noise.samples));
        CHECK(std::abs(snr - e.snr_db) <= 1e-6);
        for (std::size_t i = 0; i < clean.size(); ++i)
            REQUIRE(noisy.samples[i] == static_cast<double>(static_cast<float>(clean.samples[i]) +
                                                            static_cast<float>(noise.samples[i])));
        if (e.split == "test") test_snrs.push_back(e.snr_db);
        else {
            CHECK(e.snr_db >= cfg.snr_train_lo_db);
            CHECK(e.snr_db <= cfg.snr_train_hi_db);
        }
    }
    CHECK(test_snrs == std::vector<double>{-5.0, 0.0, 5.0});
    fs::remove_all(dir);
}

TEST_CASE("corpus generation is deterministic") {
    const fs::path a = fs::temp_directory_path() / "hnll_test_corpus_a";
    const fs::path b = fs::temp_directory_path() / "hnll_test_corpus_b";
    build_corpus(tiny_config(), a);
    build_corpus(tiny_config(), b);
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a);
        CHECK_MESSAGE(read_file(entry.path()) == read_file(b / rel), rel.string());
    }
    auto other = tiny_config();
    other.seed = 10;
    build_corpus(other, b);
    CHECK(read_file(a / "train/train_0000_clean.wav") != read_file(b / "train/train_0000_clean.wav"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("corpus config validation and safe output directories") {
    auto c = tiny_config();
    c.n_train = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.snr_train_lo_db = 6.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.noise_kinds.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);

    const fs::path dir = fs::temp_directory_path() / "hnll_test_corpus_guard";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_file_atomic(dir / "precious.txt", "keep");
    CHECK_THROWS_AS(build_corpus(tiny_config(), dir), ConfigError);
    CHECK(read_file(dir / "precious.txt") == "keep");
    fs::remove_all(dir);

    const auto round = corpus_config_from_json(to_json(tiny_config()));
    CHECK(round.n_train == 4);
    CHECK(round.seed == 9);
    CHECK(round.noise_kinds.size() == 3);
}

TEST_CASE("generator contracts") {
    const auto w = synth_noise(NoiseKind::White, 7, 1.0, 16000);
    double mean = 0.0;
    for (double v : w.samples) mean += v / static_cast<double>(w.size());
    CHECK(std::abs(mean) <= 3.0 / std::sqrt(static_cast<double>(w.size())));
    for (auto kind : {NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble})
        CHECK(synth_noise(kind, 5, 0.5, 16000).samples == synth_noise(kind, 5, 0.5, 16000).samples);
    CHECK(synth_speech(3, 0.5, 16000).samples == synth_speech(3, 0.5, 16000).samples);
    CHECK(synth_speech(3, 0.5, 16000).samples != synth_speech(4, 0.5, 16000).samples);
}

TEST_CASE("first harmonics are local spectral maxima") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto tr = synth_speech_track(seed, 1.0, 16000);
        const std::size_t seg = 640, n = 16000;
        std::size_t best = 0;
        double best_e = -1.0;
        for (std::size_t s = 0; s + seg <= tr.wave.size(); s += 160) {
            double e = 0.0;
            for (std::size_t i = 0; i < seg; ++i) e += tr.wave.samples[s + i] * tr.wave.samples[s + i];
            if (e > best_e) {
                best_e = e;
                best = s;
            }
        }
        std::vector<double> buf(n, 0.0);
        double f0 = 0.0;
        for (std::size_t i = 0; i < seg; ++i) {
            buf[i] = tr.wave.samples[best + i] * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / seg));
            f0 += tr.f0[best + i] / seg;
        }
        std::vector<cplx> spec(n / 2 + 1);
        FftPlan(n).forward_real(buf, spec);
        for (int k = 1; k <= 3; ++k) {
            // Strongest bin within +-f0/4 of k f0 is a local maximum close to k f0.
            const auto lo = static_cast<std::size_t>(k * f0 - f0 / 4), hi = static_cast<std::size_t>(k * f0 + f0 / 4);
            std::size_t arg = lo;
            for (std::size_t b = lo; b <= hi; ++b)
                if (std::abs(spec[b]) > std::abs(spec[arg])) arg = b;
            CHECK_MESSAGE(std::abs(static_cast<double>(arg) - k * f0) <= 0.05 * k * f0 + 2.0, "seed " << seed << " k " << k);
            CHECK(std::abs(spec[arg]) > std::abs(spec[lo]));
            CHECK(std::abs(spec[arg]) > std::abs(spec[hi]));
        }
    }
}

TEST_CASE("test SNRs divide equally") {
    const fs::path dir = fs::temp_directory_path() / "hnll_test_corpus_equal";
    auto c = tiny_config();
    c.n_train = 1;
    c.n_val = 0;
    c.n_test = 6;
    const auto m = build_corpus(c, dir);
    std::map<double, int> count;
    for (const auto& e : m)
        if (e.split == "test") ++count[e.snr_db];
    CHECK(count == std::map<double, int>{{-5.0, 2}, {0.0, 2}, {5.0, 2}});
    fs::remove_all(dir);
}
