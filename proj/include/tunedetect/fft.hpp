#pragma once

#include <complex>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "tunedetect/common.hpp"

namespace tunedetect {

/// Fixed-size FFT backed by Eigen's FFT module. The size is restricted to
/// powers of two so frame layouts stay predictable.
class Fft {
public:
    explicit Fft(std::size_t n) : n_(n) {
        if (n == 0 || (n & (n - 1)) != 0) throw DomainError("Fft: size must be a power of two");
        fft_.SetFlag(Eigen::FFT<double>::Unscaled);
    }

    [[nodiscard]] std::size_t size() const { return n_; }

    void forward(std::span<std::complex<double>> x) const {
        in_.assign(x.begin(), x.end());
        fft_.fwd(out_, in_);
        std::copy(out_.begin(), out_.end(), x.begin());
    }

    // Unscaled inverse: forward(inverse(x)) == n * x.
    void inverse(std::span<std::complex<double>> x) const {
        in_.assign(x.begin(), x.end());
        fft_.inv(out_, in_);
        std::copy(out_.begin(), out_.end(), x.begin());
    }

    /// |X_k|^2 for k in [0, n/2] of a real frame of length n.
    void power_spectrum(std::span<const double> frame, std::span<double> out) const {
        real_.assign(frame.begin(), frame.begin() + static_cast<std::ptrdiff_t>(n_));
        fft_.fwd(out_, real_);
        for (std::size_t k = 0; k <= n_ / 2; ++k) out[k] = std::norm(out_[k]);
    }

private:
    std::size_t n_;
    mutable Eigen::FFT<double> fft_;
    mutable std::vector<std::complex<double>> in_, out_;
    mutable std::vector<double> real_;
};

}  // namespace tunedetect
