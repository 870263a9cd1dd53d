#include "hnll/fft.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "hnll/error.hpp"

namespace hnll {

bool FftPlan::supported(std::size_t n) {
    if (n == 0) return false;
    while (n % 2 == 0) n /= 2;
    while (n % 5 == 0) n /= 5;
    return n == 1;
}

FftPlan::FftPlan(std::size_t n) : n_(n), twiddle_(n) {
    if (!supported(n)) throw ConfigError("fft: size " + std::to_string(n) + " is not of the form 2^a * 5^b");
    for (std::size_t j = 0; j < n; ++j) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
        twiddle_[j] = cplx(std::cos(a), std::sin(a));
    }
}

void FftPlan::recurse(const cplx* in, std::size_t stride, cplx* out, std::size_t n) const {
    if (n == 1) {
        out[0] = in[0];
        return;
    }
    const std::size_t r = (n % 2 == 0) ? 2 : 5;
    const std::size_t m = n / r;
    for (std::size_t q = 0; q < r; ++q) recurse(in + q * stride, stride * r, out + q * m, m);

    const std::size_t step = n_ / n;  // twiddle_[j * step] == e^{-2 pi i j / n}
    std::array<cplx, 5> a{};
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t q = 0; q < r; ++q) a[q] = out[q * m + k] * twiddle_[(q * k) * step];
        for (std::size_t s = 0; s < r; ++s) {
            cplx acc = a[0];
            for (std::size_t q = 1; q < r; ++q) acc += a[q] * twiddle_[((q * s) % r) * m * step];
            out[k + s * m] = acc;
        }
    }
}

void FftPlan::forward(std::span<const cplx> in, std::span<cplx> out) const {
    if (in.size() != n_ || out.size() != n_) throw ShapeError("fft: buffer size mismatch");
    recurse(in.data(), 1, out.data(), n_);
}

void FftPlan::forward_real(std::span<const double> in, std::span<cplx> out) const {
    if (in.size() != n_ || out.size() != n_ / 2 + 1) throw ShapeError("fft: real buffer size mismatch");
    std::vector<cplx> buf(in.begin(), in.end());
    std::vector<cplx> spec(n_);
    recurse(buf.data(), 1, spec.data(), n_);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = spec[k];
}

void FftPlan::inverse_real(std::span<const cplx> in, std::span<double> out) const {
    if (out.size() != n_ || in.size() != n_ / 2 + 1) throw ShapeError("ifft: real buffer size mismatch");
    const std::size_t half = n_ / 2;
    std::vector<cplx> full(n_);
    full[0] = cplx(in[0].real(), 0.0);
    for (std::size_t k = 1; k < half; ++k) {
        full[k] = std::conj(in[k]);
        full[n_ - k] = in[k];
    }
    if (n_ % 2 == 0) full[half] = cplx(in[half].real(), 0.0);
    std::vector<cplx> res(n_);
    recurse(full.data(), 1, res.data(), n_);  // forward of conj(X) == conj(inverse * n)
    const double scale = 1.0 / static_cast<double>(n_);
    for (std::size_t j = 0; j < n_; ++j) out[j] = res[j].real() * scale;
}

}  // namespace hnll
