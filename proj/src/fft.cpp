#include "artistid/fft.hpp"

#include <bit>
#include <numbers>

#include "artistid/error.hpp"

namespace artistid {

Fft::Fft(std::size_t n) : n_(n) {
  if (n == 0 || !std::has_single_bit(n)) {
    throw ConfigError("FFT size must be a power of two, got " + std::to_string(n));
  }
  twiddles_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddles_[k] = {std::cos(angle), std::sin(angle)};
  }
  const int bits = std::countr_zero(n);
  bitrev_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
    bitrev_[i] = r;
  }
}

void Fft::transform(std::span<std::complex<double>> data) const {
  if (data.size() != n_) throw ShapeError("FFT buffer has wrong length");
  for (std::size_t i = 0; i < n_; ++i) {
    if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
  }
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const auto t = twiddles_[k * stride] * data[start + k + half];
        const auto u = data[start + k];
        data[start + k] = u + t;
        data[start + k + half] = u - t;
      }
    }
  }
}

}  // namespace artistid
