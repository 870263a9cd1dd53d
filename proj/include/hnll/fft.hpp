#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace hnll {

using cplx = std::complex<double>;

// Mixed-radix (2 and 5) decimation-in-time FFT for sizes 2^a * 5^b, which
// covers the 320-point frames used throughout. Forward transform uses the
// e^{-2 pi i k n / N} convention and no scaling.
class FftPlan {
public:
    explicit FftPlan(std::size_t n);

    std::size_t size() const { return n_; }

    void forward(std::span<const cplx> in, std::span<cplx> out) const;

    // One-sided spectrum of a real frame: out.size() == n/2 + 1.
    void forward_real(std::span<const double> in, std::span<cplx> out) const;

    // Inverse of forward_real with 1/n scaling. The imaginary parts of the DC
    // and Nyquist bins are ignored.
    void inverse_real(std::span<const cplx> in, std::span<double> out) const;

    static bool supported(std::size_t n);

private:
    void recurse(const cplx* in, std::size_t stride, cplx* out, std::size_t n) const;

    std::size_t n_;
    std::vector<cplx> twiddle_;  // e^{-2 pi i j / n}
};

}  // namespace hnll
