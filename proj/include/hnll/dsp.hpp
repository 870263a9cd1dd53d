#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hnll {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    std::size_t size() const { return samples.size(); }
};

// T x F grid of complex STFT coefficients, stored as two row-major planes.
struct Spectrogram {
    std::size_t frames = 0;  // T
    std::size_t bins = 0;    // F = frame_len / 2 + 1
    std::vector<double> re;
    std::vector<double> im;
    std::size_t frame_len = 0;
    std::size_t hop = 0;
    int sample_rate = 16000;

    // Number of waveform samples the grid was computed from; istft trims to it.
    std::size_t signal_len = 0;

    Spectrogram() = default;
    Spectrogram(std::size_t t, std::size_t f) : frames(t), bins(f), re(t * f, 0.0), im(t * f, 0.0) {}

    static Spectrogram zeros_like(const Spectrogram& other);

    double& re_at(std::size_t t, std::size_t f) { return re[t * bins + f]; }
    double& im_at(std::size_t t, std::size_t f) { return im[t * bins + f]; }
    double re_at(std::size_t t, std::size_t f) const { return re[t * bins + f]; }
    double im_at(std::size_t t, std::size_t f) const { return im[t * bins + f]; }

    std::size_t cells() const { return frames * bins; }
    bool same_shape(const Spectrogram& o) const { return frames == o.frames && bins == o.bins; }
};

// Periodic (DFT-even) Hann window.
std::vector<double> hann_window(std::size_t n);

// Number of frames for a signal of `len` samples: 1 + ceil(len / hop).
std::size_t stft_frame_count(std::size_t len, std::size_t hop);

// Hann-windowed one-sided STFT. Requires hop == frame_len / 2 and a frame
// length the FFT supports. The signal is zero-padded by frame_len - hop on
// both sides so every sample sits under two full frames.
Spectrogram stft(const Waveform& w, std::size_t frame_len = 320, std::size_t hop = 160);

// Weighted overlap-add with the Hann synthesis window, normalized by the
// summed squared window. Exact inverse of stft on unmodified spectrograms.
Waveform istft(const Spectrogram& s);

// Adjoint of istft as a linear map from (re, im) to samples: maps a gradient
// with respect to the output waveform onto the spectrogram grid.
Spectrogram istft_adjoint(const Spectrogram& shape, std::span<const double> grad_wave);

struct Mixture {
    Waveform noisy;
    Waveform scaled_noise;
    double gain = 1.0;
};

double signal_power(std::span<const double> x);

// noisy = clean + g * noise with g set so the clean-to-noise power ratio is
// snr_db. Throws InvalidCorpusItem for zero-power inputs.
Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db);

// Noise gain mix_at_snr would use.
double snr_gain(std::span<const double> clean, std::span<const double> noise, double snr_db);

inline constexpr double kSiSdrCapDb = 130.0;

// Scale-invariant SDR in dB, no mean removal, clipped to [-130, 130].
double si_sdr(std::span<const double> est, std::span<const double> ref);

}  // namespace hnll
