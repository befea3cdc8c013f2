#include "artistid/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace artistid::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;

// col has shape (c_in*kh*kw) x (height*width).
template <typename T>
void im2col(const Conv2dShape& s, const T* x, T* col) {
  const auto hw = s.height * s.width;
  const auto ph = static_cast<std::ptrdiff_t>(s.kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(s.kw / 2);
  const auto H = static_cast<std::ptrdiff_t>(s.height);
  const auto W = static_cast<std::ptrdiff_t>(s.width);
  for (std::size_t ci = 0; ci < s.c_in; ++ci) {
    const T* xc = x + ci * hw;
    for (std::size_t ki = 0; ki < s.kh; ++ki) {
      for (std::size_t kj = 0; kj < s.kw; ++kj) {
        T* row = col + ((ci * s.kh + ki) * s.kw + kj) * hw;
        const auto dy = static_cast<std::ptrdiff_t>(ki) - ph;
        const auto dx = static_cast<std::ptrdiff_t>(kj) - pw;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const auto sy = y + dy;
          T* out = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(out, out + W, T{0});
            continue;
          }
          const T* in = xc + sy * W;
          const auto x0 = std::min<std::ptrdiff_t>(W, std::max<std::ptrdiff_t>(0, -dx));
          const auto x1 = std::max<std::ptrdiff_t>(x0, std::min<std::ptrdiff_t>(W, W - dx));
          std::fill(out, out + x0, T{0});
          std::copy(in + x0 + dx, in + x1 + dx, out + x0);
          std::fill(out + x1, out + W, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im(const Conv2dShape& s, const T* col, T* dx) {
  const auto hw = s.height * s.width;
  const auto ph = static_cast<std::ptrdiff_t>(s.kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(s.kw / 2);
  const auto H = static_cast<std::ptrdiff_t>(s.height);
  const auto W = static_cast<std::ptrdiff_t>(s.width);
  std::fill(dx, dx + s.c_in * hw, T{0});
  for (std::size_t ci = 0; ci < s.c_in; ++ci) {
    T* dxc = dx + ci * hw;
    for (std::size_t ki = 0; ki < s.kh; ++ki) {
      for (std::size_t kj = 0; kj < s.kw; ++kj) {
        const T* row = col + ((ci * s.kh + ki) * s.kw + kj) * hw;
        const auto dy = static_cast<std::ptrdiff_t>(ki) - ph;
        const auto dxo = static_cast<std::ptrdiff_t>(kj) - pw;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const auto sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          const T* in = row + y * W;
          T* out = dxc + sy * W;
          const auto x0 = std::max<std::ptrdiff_t>(0, -dxo);
          const auto x1 = std::min<std::ptrdiff_t>(W, W - dxo);
          for (auto xx = x0; xx < x1; ++xx) out[xx + dxo] += in[xx];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const Conv2dShape& s, const T* x, const T* kernel, const T* bias, T* y) {
  const auto hw = s.height * s.width;
  const auto k = s.c_in * s.kh * s.kw;
  const ConstRowMap<T> kmat(kernel, static_cast<Eigen::Index>(s.c_out), static_cast<Eigen::Index>(k));
  const auto n_batch = static_cast<std::ptrdiff_t>(s.batch);
#pragma omp parallel
  {
    std::vector<T> col(k * hw);
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < n_batch; ++n) {
      im2col(s, x + static_cast<std::size_t>(n) * s.c_in * hw, col.data());
      const ConstRowMap<T> cmat(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
      RowMap<T> ymat(y + static_cast<std::size_t>(n) * s.c_out * hw, static_cast<Eigen::Index>(s.c_out),
                     static_cast<Eigen::Index>(hw));
      ymat.noalias() = kmat * cmat;
      for (std::size_t co = 0; co < s.c_out; ++co) ymat.row(static_cast<Eigen::Index>(co)).array() += bias[co];
    }
  }
}

template <typename T>
void conv2d_backward(const Conv2dShape& s, const T* x, const T* kernel, const T* dy, T* dx, T* dkernel,
                     T* dbias) {
  const auto hw = s.height * s.width;
  const auto k = s.c_in * s.kh * s.kw;
  const auto ksize = s.kernel_size();
  const ConstRowMap<T> kmat(kernel, static_cast<Eigen::Index>(s.c_out), static_cast<Eigen::Index>(k));
  std::vector<T> partial(s.batch * ksize);
  const auto n_batch = static_cast<std::ptrdiff_t>(s.batch);
#pragma omp parallel
  {
    std::vector<T> col(k * hw);
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < n_batch; ++n) {
      const auto un = static_cast<std::size_t>(n);
      im2col(s, x + un * s.c_in * hw, col.data());
      RowMap<T> cmat(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
      const ConstRowMap<T> dymat(dy + un * s.c_out * hw, static_cast<Eigen::Index>(s.c_out),
                                 static_cast<Eigen::Index>(hw));
      RowMap<T> dk(partial.data() + un * ksize, static_cast<Eigen::Index>(s.c_out), static_cast<Eigen::Index>(k));
      dk.noalias() = dymat * cmat.transpose();
      if (dx != nullptr) {
        cmat.noalias() = kmat.transpose() * dymat;
        col2im(s, col.data(), dx + un * s.c_in * hw);
      }
    }
  }
  for (std::size_t n = 0; n < s.batch; ++n) {
    const T* p = partial.data() + n * ksize;
    for (std::size_t i = 0; i < ksize; ++i) dkernel[i] += p[i];
  }
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t co = 0; co < s.c_out; ++co) {
      const T* g = dy + (n * s.c_out + co) * hw;
      T acc{0};
      for (std::size_t i = 0; i < hw; ++i) acc += g[i];
      dbias[co] += acc;
    }
  }
}

namespace reference {

template <typename T>
void conv2d_forward(const Conv2dShape& s, const T* x, const T* kernel, const T* bias, T* y) {
  const auto H = static_cast<std::ptrdiff_t>(s.height);
  const auto W = static_cast<std::ptrdiff_t>(s.width);
  const auto ph = static_cast<std::ptrdiff_t>(s.kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(s.kw / 2);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t co = 0; co < s.c_out; ++co) {
      for (std::ptrdiff_t i = 0; i < H; ++i) {
        for (std::ptrdiff_t j = 0; j < W; ++j) {
          T acc = bias[co];
          for (std::size_t ci = 0; ci < s.c_in; ++ci) {
            for (std::size_t a = 0; a < s.kh; ++a) {
              for (std::size_t b = 0; b < s.kw; ++b) {
                const auto yi = i + static_cast<std::ptrdiff_t>(a) - ph;
                const auto xj = j + static_cast<std::ptrdiff_t>(b) - pw;
                if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                acc += kernel[((co * s.c_in + ci) * s.kh + a) * s.kw + b] *
                       x[((n * s.c_in + ci) * s.height + static_cast<std::size_t>(yi)) * s.width +
                         static_cast<std::size_t>(xj)];
              }
            }
          }
          y[((n * s.c_out + co) * s.height + static_cast<std::size_t>(i)) * s.width + static_cast<std::size_t>(j)] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const Conv2dShape& s, const T* x, const T* kernel, const T* dy, T* dx, T* dkernel,
                     T* dbias) {
  const auto H = static_cast<std::ptrdiff_t>(s.height);
  const auto W = static_cast<std::ptrdiff_t>(s.width);
  const auto ph = static_cast<std::ptrdiff_t>(s.kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(s.kw / 2);
  if (dx != nullptr) std::fill(dx, dx + s.input_size(), T{0});
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t co = 0; co < s.c_out; ++co) {
      for (std::ptrdiff_t i = 0; i < H; ++i) {
        for (std::ptrdiff_t j = 0; j < W; ++j) {
          const T g = dy[((n * s.c_out + co) * s.height + static_cast<std::size_t>(i)) * s.width +
                         static_cast<std::size_t>(j)];
          dbias[co] += g;
          for (std::size_t ci = 0; ci < s.c_in; ++ci) {
            for (std::size_t a = 0; a < s.kh; ++a) {
              for (std::size_t b = 0; b < s.kw; ++b) {
                const auto yi = i + static_cast<std::ptrdiff_t>(a) - ph;
                const auto xj = j + static_cast<std::ptrdiff_t>(b) - pw;
                if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                const auto xi = ((n * s.c_in + ci) * s.height + static_cast<std::size_t>(yi)) * s.width +
                                static_cast<std::size_t>(xj);
                const auto ki = ((co * s.c_in + ci) * s.kh + a) * s.kw + b;
                dkernel[ki] += g * x[xi];
                if (dx != nullptr) dx[xi] += g * kernel[ki];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void correlate2d_valid(std::size_t h, std::size_t w, const T* x, std::size_t kh, std::size_t kw,
                       const T* kernel, T* y) {
  const auto oh = h - kh + 1;
  const auto ow = w - kw + 1;
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      T acc{0};
      for (std::size_t a = 0; a < kh; ++a) {
        for (std::size_t b = 0; b < kw; ++b) acc += kernel[a * kw + b] * x[(i + a) * w + j + b];
      }
      y[i * ow + j] = acc;
    }
  }
}

}  // namespace reference

#define ARTISTID_INSTANTIATE(T)                                                                        \
  template void conv2d_forward<T>(const Conv2dShape&, const T*, const T*, const T*, T*);               \
  template void conv2d_backward<T>(const Conv2dShape&, const T*, const T*, const T*, T*, T*, T*);      \
  template void reference::conv2d_forward<T>(const Conv2dShape&, const T*, const T*, const T*, T*);    \
  template void reference::conv2d_backward<T>(const Conv2dShape&, const T*, const T*, const T*, T*, T*, \
                                              T*);                                                     \
  template void reference::correlate2d_valid<T>(std::size_t, std::size_t, const T*, std::size_t,       \
                                                std::size_t, const T*, T*);

ARTISTID_INSTANTIATE(float)
ARTISTID_INSTANTIATE(double)

#undef ARTISTID_INSTANTIATE

}  // namespace artistid::kernels
