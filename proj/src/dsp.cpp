#include "hnll/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hnll/error.hpp"
#include "hnll/fft.hpp"

namespace hnll {

Spectrogram Spectrogram::zeros_like(const Spectrogram& other) {
    Spectrogram s(other.frames, other.bins);
    s.frame_len = other.frame_len;
    s.hop = other.hop;
    s.sample_rate = other.sample_rate;
    s.signal_len = other.signal_len;
    return s;
}

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::sin(std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
        w[i] = s * s;
    }
    return w;
}

std::size_t stft_frame_count(std::size_t len, std::size_t hop) { return 1 + (len + hop - 1) / hop; }

namespace {

void check_params(std::size_t frame_len, std::size_t hop) {
    if (frame_len == 0 || frame_len % 2 != 0) throw ConfigError("stft: frame_len must be even and positive");
    if (hop == 0 || frame_len % hop != 0) throw ConfigError("stft: hop must divide frame_len");
    if (hop * 2 != frame_len) throw ConfigError("stft: hop must equal frame_len / 2");
    if (!FftPlan::supported(frame_len)) throw ConfigError("stft: frame_len must be 2^a * 5^b");
}

std::size_t output_len(const Spectrogram& s) {
    if (s.signal_len > 0) return s.signal_len;
    return (s.frames - 1) * s.hop;
}

void check_grid(const Spectrogram& s) {
    check_params(s.frame_len, s.hop);
    if (s.frames == 0) throw ShapeError("istft: empty spectrogram");
    if (s.bins != s.frame_len / 2 + 1) throw ShapeError("istft: bins != frame_len / 2 + 1");
    if (s.re.size() != s.cells() || s.im.size() != s.cells()) throw ShapeError("istft: plane size mismatch");
    const std::size_t len = output_len(s);
    if (s.signal_len > 0 && stft_frame_count(len, s.hop) != s.frames)
        throw ShapeError("istft: frame count inconsistent with signal length");
}

// Summed squared synthesis window over the padded timeline.
std::vector<double> window_envelope(std::size_t frames, std::size_t n, std::size_t hop,
                                    const std::vector<double>& win) {
    std::vector<double> env((frames - 1) * hop + n, 0.0);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t i = 0; i < n; ++i) env[t * hop + i] += win[i] * win[i];
    return env;
}

}  // namespace

Spectrogram stft(const Waveform& w, std::size_t frame_len, std::size_t hop) {
    check_params(frame_len, hop);
    if (w.samples.empty()) throw ConfigError("stft: empty waveform");

    const std::size_t len = w.samples.size();
    const std::size_t pad = frame_len - hop;
    const std::size_t frames = stft_frame_count(len, hop);
    const std::size_t bins = frame_len / 2 + 1;

    Spectrogram s(frames, bins);
    s.frame_len = frame_len;
    s.hop = hop;
    s.sample_rate = w.sample_rate;
    s.signal_len = len;

    const FftPlan plan(frame_len);
    const auto win = hann_window(frame_len);
    std::vector<double> frame(frame_len);
    std::vector<cplx> spec(bins);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t i = 0; i < frame_len; ++i) {
            const std::size_t p = t * hop + i;
            const double x = (p >= pad && p - pad < len) ? w.samples[p - pad] : 0.0;
            frame[i] = x * win[i];
        }
        plan.forward_real(frame, spec);
        for (std::size_t f = 0; f < bins; ++f) {
            s.re_at(t, f) = spec[f].real();
            s.im_at(t, f) = spec[f].imag();
        }
    }
    return s;
}

Waveform istft(const Spectrogram& s) {
    check_grid(s);
    const std::size_t n = s.frame_len;
    const std::size_t hop = s.hop;
    const std::size_t pad = n - hop;
    const std::size_t len = output_len(s);

    const FftPlan plan(n);
    const auto win = hann_window(n);
    const auto env = window_envelope(s.frames, n, hop, win);
    std::vector<double> acc(env.size(), 0.0);
    std::vector<cplx> spec(s.bins);
    std::vector<double> frame(n);
    for (std::size_t t = 0; t < s.frames; ++t) {
        for (std::size_t f = 0; f < s.bins; ++f) spec[f] = cplx(s.re_at(t, f), s.im_at(t, f));
        plan.inverse_real(spec, frame);
        for (std::size_t i = 0; i < n; ++i) acc[t * hop + i] += win[i] * frame[i];
    }

    Waveform out;
    out.sample_rate = s.sample_rate;
    out.samples.resize(len);
    for (std::size_t j = 0; j < len; ++j) {
        const double e = env[j + pad];
        out.samples[j] = e > 1e-12 ? acc[j + pad] / e : 0.0;
    }
    return out;
}

Spectrogram istft_adjoint(const Spectrogram& shape, std::span<const double> grad_wave) {
    check_grid(shape);
    const std::size_t n = shape.frame_len;
    const std::size_t hop = shape.hop;
    const std::size_t pad = n - hop;
    const std::size_t len = output_len(shape);
    if (grad_wave.size() != len) throw ShapeError("istft_adjoint: gradient length mismatch");

    const FftPlan plan(n);
    const auto win = hann_window(n);
    const auto env = window_envelope(shape.frames, n, hop, win);
    std::vector<double> g(env.size(), 0.0);
    for (std::size_t j = 0; j < len; ++j) {
        const double e = env[j + pad];
        g[j + pad] = e > 1e-12 ? grad_wave[j] / e : 0.0;
    }

    Spectrogram out = Spectrogram::zeros_like(shape);
    std::vector<double> frame(n);
    std::vector<cplx> spec(shape.bins);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < shape.frames; ++t) {
        for (std::size_t i = 0; i < n; ++i) frame[i] = win[i] * g[t * hop + i];
        plan.forward_real(frame, spec);
        for (std::size_t f = 0; f < shape.bins; ++f) {
            const bool edge = (f == 0 || f == shape.bins - 1);
            const double c = (edge ? 1.0 : 2.0) * inv_n;
            out.re_at(t, f) = c * spec[f].real();
            out.im_at(t, f) = edge ? 0.0 : c * spec[f].imag();
        }
    }
    return out;
}

double signal_power(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc / static_cast<double>(x.size());
}

double snr_gain(std::span<const double> clean, std::span<const double> noise, double snr_db) {
    if (clean.size() != noise.size()) throw InvalidCorpusItem("mix_at_snr: clean and noise lengths differ");
    const double pc = signal_power(clean);
    const double pn = signal_power(noise);
    if (!(pc > 0.0)) throw InvalidCorpusItem("mix_at_snr: clean signal has zero power");
    if (!(pn > 0.0)) throw InvalidCorpusItem("mix_at_snr: noise signal has zero power");
    if (!std::isfinite(snr_db)) throw ConfigError("mix_at_snr: snr_db must be finite");
    return std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
}

Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db) {
    if (clean.sample_rate != noise.sample_rate) throw InvalidCorpusItem("mix_at_snr: sample rates differ");
    const double g = snr_gain(clean.samples, noise.samples, snr_db);
    Mixture m;
    m.gain = g;
    m.noisy.sample_rate = clean.sample_rate;
    m.scaled_noise.sample_rate = clean.sample_rate;
    m.noisy.samples.resize(clean.size());
    m.scaled_noise.samples.resize(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        m.scaled_noise.samples[i] = g * noise.samples[i];
        m.noisy.samples[i] = clean.samples[i] + m.scaled_noise.samples[i];
    }
    return m;
}

double si_sdr(std::span<const double> est, std::span<const double> ref) {
    if (est.size() != ref.size()) throw ShapeError("si_sdr: length mismatch");
    double dot = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        dot += est[i] * ref[i];
        rr += ref[i] * ref[i];
    }
    if (!(rr > 0.0)) throw ConfigError("si_sdr: reference has zero energy");
    const double alpha = dot / rr;
    double ss = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double s = alpha * ref[i];
        const double e = est[i] - s;
        ss += s * s;
        nn += e * e;
    }
    if (!(ss > 0.0)) return -kSiSdrCapDb;
    if (!(nn > 0.0)) return kSiSdrCapDb;
    return std::clamp(10.0 * std::log10(ss / nn), -kSiSdrCapDb, kSiSdrCapDb);
}

}  // namespace hnll
