#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace artistid {

/// In-place iterative radix-2 FFT of a fixed power-of-two length. Twiddles
/// and the bit-reversal table are built once; transform() is const and safe
/// to call from several threads with distinct buffers.
class Fft {
 public:
  explicit Fft(std::size_t n);

  std::size_t size() const { return n_; }
  void transform(std::span<std::complex<double>> data) const;

 private:
  std::size_t n_;
  std::vector<std::complex<double>> twiddles_;
  std::vector<std::size_t> bitrev_;
};

}  // namespace artistid
