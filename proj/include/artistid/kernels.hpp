#pragma once

// Convolution kernels. Two implementations of the same contract:
//
//   reference::  direct nested loops, single-threaded. Slow but obviously
//                correct; used by tests and as the benchmark baseline.
//   (default)    im2col + GEMM, OpenMP-parallel over the batch.
//
// Layouts are row-major NCHW for activations and (C_out, C_in, kh, kw) for
// kernels. Padding is "same" (zeros), stride 1, odd kernel sizes only.
// Cross-correlation: the kernel is not flipped.
//
// Backward calls *accumulate* into dkernel and dbias and *overwrite* dx.
// Passing dx == nullptr skips the input gradient.
//
// The parallel path reduces per-sample weight gradients in sample order after
// the parallel loop, so its output is independent of the thread count.

#include <cstddef>

namespace artistid::kernels {

struct Conv2dShape {
  std::size_t batch = 0;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;

  std::size_t input_size() const { return batch * c_in * height * width; }
  std::size_t output_size() const { return batch * c_out * height * width; }
  std::size_t kernel_size() const { return c_out * c_in * kh * kw; }
};

template <typename T>
void conv2d_forward(const Conv2dShape& s, const T* x, const T* kernel, const T* bias, T* y);

template <typename T>
void conv2d_backward(const Conv2dShape& s, const T* x, const T* kernel, const T* dy, T* dx, T* dkernel,
                     T* dbias);

namespace reference {

template <typename T>
void conv2d_forward(const Conv2dShape& s, const T* x, const T* kernel, const T* bias, T* y);

template <typename T>
void conv2d_backward(const Conv2dShape& s, const T* x, const T* kernel, const T* dy, T* dx, T* dkernel,
                     T* dbias);

/// Valid-mode (no padding) cross-correlation of one channel, for checking
/// the convention by hand. Output is (h - kh + 1) x (w - kw + 1).
template <typename T>
void correlate2d_valid(std::size_t h, std::size_t w, const T* x, std::size_t kh, std::size_t kw,
                       const T* kernel, T* y);

}  // namespace reference

/// Threads OpenMP will use for the parallel kernels (1 without OpenMP).
int max_threads();

}  // namespace artistid::kernels
