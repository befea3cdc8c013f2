#include "artistid/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "artistid/kernels.hpp"

namespace artistid {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstRowMap<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstRowMap<T>(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
RowMap<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return RowMap<T>(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

// Fixed 8-lane accumulation: vectorisable and independent of thread count.
template <typename Acc, typename F>
Acc lane_sum(std::size_t n, F&& term) {
  Acc lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) lanes[j] += term(i + j);
  }
  for (; i < n; ++i) lanes[i % 8] += term(i);
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

}  // namespace

template <typename T>
void glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = static_cast<T>(uniform(rng, -limit, limit));
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw)
    : kernel(name + ".kernel", {c_out, c_in, kh, kw}), bias(name + ".bias", {c_out}) {
  if (c_in == 0 || c_out == 0 || kh == 0 || kw == 0) throw ConfigError(name + ": dimensions must be positive");
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError(name + ": kernel sizes must be odd for same padding");
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const auto area = kernel.value.dim(2) * kernel.value.dim(3);
  glorot_uniform(kernel.value, c_in() * area, c_out() * area, rng);
  bias.value.fill(T{0});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  require_rank(x.shape(), 4, kernel.name);
  if (x.dim(1) != c_in()) {
    throw ShapeError(kernel.name + ": input has " + std::to_string(x.dim(1)) + " channels, expected " +
                     std::to_string(c_in()));
  }
  input_ = x;
  const kernels::Conv2dShape s{x.dim(0), c_in(), c_out(), x.dim(2), x.dim(3), kernel.value.dim(2),
                               kernel.value.dim(3)};
  Tensor<T> y({s.batch, s.c_out, s.height, s.width}, uninitialized);
  kernels::conv2d_forward(s, x.raw(), kernel.value.raw(), bias.value.raw(), y.raw());
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  const kernels::Conv2dShape s{input_.dim(0), c_in(), c_out(), input_.dim(2), input_.dim(3),
                               kernel.value.dim(2), kernel.value.dim(3)};
  require_shape(dy.shape(), {s.batch, s.c_out, s.height, s.width}, kernel.name + " backward");
  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(input_.shape(), uninitialized);
  kernels::conv2d_backward(s, input_.raw(), kernel.value.raw(), dy.raw(), need_input_grad ? dx.raw() : nullptr,
                           kernel.grad.raw(), bias.grad.raw());
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

// Mean and 1/sqrt(var + eps) of one channel of an NCHW tensor. Training mode
// uses the biased batch statistics and updates the running estimates.
template <typename T>
std::pair<double, T> channel_stats(const Tensor<T>& x, std::size_t uc, Mode mode, T momentum,
                                   Tensor<T>& running_mean, Tensor<T>& running_var) {
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  double mean, var;
  if (mode == Mode::train) {
    const auto count = static_cast<double>(n * hw);
    // One pass over values shifted by the channel's first element.
    const double pivot = x[uc * hw];
    double s1[8] = {}, s2[8] = {};
    for (std::size_t b = 0; b < n; ++b) {
      const T* p = x.raw() + (b * c + uc) * hw;
      std::size_t i = 0;
      for (; i + 8 <= hw; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) {
          const double d = static_cast<double>(p[i + j]) - pivot;
          s1[j] += d;
          s2[j] += d * d;
        }
      }
      for (; i < hw; ++i) {
        const double d = static_cast<double>(p[i]) - pivot;
        s1[i % 8] += d;
        s2[i % 8] += d * d;
      }
    }
    const auto fold = [](const double* l) {
      return ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]));
    };
    const double shift = fold(s1) / count;
    mean = pivot + shift;
    var = std::max(fold(s2) / count - shift * shift, 0.0);
    running_mean[uc] = static_cast<T>(momentum * running_mean[uc] + (T(1) - momentum) * static_cast<T>(mean));
    running_var[uc] = static_cast<T>(momentum * running_var[uc] + (T(1) - momentum) * static_cast<T>(var));
  } else {
    mean = running_mean[uc];
    var = running_var[uc];
  }
  return {mean, static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(BatchNorm2d<T>::kEpsilon)))};
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, std::size_t channels, T mom)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean({channels}, T{0}),
      running_var({channels}, T{1}),
      momentum(mom) {
  if (channels == 0) throw ConfigError(name + ": channel count must be positive");
  gamma.value.fill(T{1});
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank(x.shape(), 4, gamma.name);
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c != gamma.value.size()) throw ShapeError(gamma.name + ": channel mismatch");
  if (mode == Mode::train && n < 2) {
    throw ShapeError(gamma.name + ": batch normalization needs a batch of at least 2 in training mode");
  }
  mode_ = mode;
  xhat_ = Tensor<T>(x.shape(), uninitialized);
  inv_std_.assign(c, T{0});
  Tensor<T> y(x.shape(), uninitialized);
  const auto channels = static_cast<std::ptrdiff_t>(c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ch = 0; ch < channels; ++ch) {
    const auto uc = static_cast<std::size_t>(ch);
    const auto [mean, inv] = channel_stats(x, uc, mode, momentum, running_mean, running_var);
    inv_std_[uc] = inv;
    const T g = gamma.value[uc], bt = beta.value[uc];
    const T m = static_cast<T>(mean);
    for (std::size_t b = 0; b < n; ++b) {
      const auto off = (b * c + uc) * hw;
      const T* xp = x.raw() + off;
      T* hp = xhat_.raw() + off;
      T* yp = y.raw() + off;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (xp[i] - m) * inv;
        hp[i] = xh;
        yp[i] = g * xh + bt;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  require_shape(dy.shape(), xhat_.shape(), gamma.name + " backward");
  const auto n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  const auto count = static_cast<T>(n * hw);
  Tensor<T> dx(dy.shape(), uninitialized);
  const auto channels = static_cast<std::ptrdiff_t>(c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ch = 0; ch < channels; ++ch) {
    const auto uc = static_cast<std::size_t>(ch);
    T sum_dy{0}, sum_dy_xhat{0};
    for (std::size_t b = 0; b < n; ++b) {
      const T* g = dy.raw() + (b * c + uc) * hw;
      const T* h = xhat_.raw() + (b * c + uc) * hw;
      sum_dy += lane_sum<T>(hw, [g](std::size_t i) { return g[i]; });
      sum_dy_xhat += lane_sum<T>(hw, [g, h](std::size_t i) { return g[i] * h[i]; });
    }
    gamma.grad[uc] += sum_dy_xhat;
    beta.grad[uc] += sum_dy;
    const T g = gamma.value[uc];
    if (mode_ == Mode::train) {
      const T scale = g * inv_std_[uc] / count;
      for (std::size_t b = 0; b < n; ++b) {
        const auto off = (b * c + uc) * hw;
        const T* gp = dy.raw() + off;
        const T* hp = xhat_.raw() + off;
        T* dp = dx.raw() + off;
        for (std::size_t i = 0; i < hw; ++i) dp[i] = scale * (count * gp[i] - sum_dy - hp[i] * sum_dy_xhat);
      }
    } else {
      const T scale = g * inv_std_[uc];
      for (std::size_t b = 0; b < n; ++b) {
        const auto off = (b * c + uc) * hw;
        for (std::size_t i = 0; i < hw; ++i) dx[off + i] = scale * dy[off + i];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Elu

template <typename T>
Tensor<T> Elu<T>::forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape(), uninitialized);
  const auto n = static_cast<Eigen::Index>(x.size());
  const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xv(x.raw(), n);
  Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> yv(y.raw(), n);
  yv = xv.min(T{0}).exp();
  const T* xp = x.raw();
  T* yp = y.raw();
  const T a = alpha_;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T neg = a * (yp[i] - T{1});
    yp[i] = xp[i] > T{0} ? xp[i] : neg;
  }
  output_ = y;
  return y;
}

template <typename T>
Tensor<T> Elu<T>::backward(const Tensor<T>& dy) {
  require_shape(dy.shape(), output_.shape(), "elu backward");
  Tensor<T> dx(dy.shape(), uninitialized);
  const std::size_t n = dy.size();
  const T* yp = output_.raw();
  const T* gp = dy.raw();
  T* dp = dx.raw();
  const T a = alpha_;
  // For v <= 0, d/dv alpha (e^v - 1) = alpha e^v = y + alpha.
  for (std::size_t i = 0; i < n; ++i) {
    const T slope = yp[i] + a;
    dp[i] = gp[i] * (yp[i] > T{0} ? T{1} : slope);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

template <typename T>
MaxPool2d<T>::MaxPool2d(std::size_t pool_h, std::size_t pool_w) : ph_(pool_h), pw_(pool_w) {
  if (pool_h == 0 || pool_w == 0) throw ConfigError("pool sizes must be at least 1");
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "maxpool");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = h / ph_, ow = w / pw_;
  if (oh == 0 || ow == 0) {
    throw ShapeError("maxpool: pool " + std::to_string(ph_) + "x" + std::to_string(pw_) +
                     " is larger than input " + shape_str(x.shape()));
  }
  input_shape_ = x.shape();
  Tensor<T> y({n, c, oh, ow}, uninitialized);
  argmax_.assign(y.size(), 0);
  const auto planes = static_cast<std::ptrdiff_t>(n * c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const auto up = static_cast<std::size_t>(p);
    const T* in = x.raw() + up * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (i * ph_) * w + j * pw_;
        T best_v = in[best];
        for (std::size_t a = 0; a < ph_; ++a) {
          for (std::size_t b = 0; b < pw_; ++b) {
            const auto idx = (i * ph_ + a) * w + j * pw_ + b;
            if (in[idx] > best_v) {
              best_v = in[idx];
              best = idx;
            }
          }
        }
        const auto o = (up * oh + i) * ow + j;
        y[o] = best_v;
        argmax_[o] = up * h * w + best;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& dy) {
  if (dy.size() != argmax_.size()) throw ShapeError("maxpool backward: gradient shape mismatch");
  Tensor<T> dx(input_shape_);
  // Windows do not overlap, so each input element receives at most one value.
  for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += dy[o];
  return dx;
}

// ---------------------------------------------------------------------------
// NormEluPool

// Max pool of one h x w plane without data-dependent branches. Rows of each
// window are reduced first over whole contiguous rows (col_max/col_row are
// w-long scratch), then columns. Ties resolve to the first maximum in
// row-major window order.
template <typename T, std::size_t PW>
void pool_plane(const T* in, std::size_t w, std::size_t ph, std::size_t pw_runtime, std::size_t oh, std::size_t ow,
                T* out, std::uint32_t* arg, T* col_max, std::uint32_t* col_row) {
  const std::size_t pw = PW ? PW : pw_runtime;
  for (std::size_t i = 0; i < oh; ++i) {
    const T* first = in + i * ph * w;
    for (std::size_t x = 0; x < w; ++x) {
      col_max[x] = first[x];
      col_row[x] = 0;
    }
    for (std::size_t r = 1; r < ph; ++r) {
      const T* row = first + r * w;
      const auto rr = static_cast<std::uint32_t>(r);
      for (std::size_t x = 0; x < w; ++x) {
        const T v = row[x];
        const bool gt = v > col_max[x];
        col_max[x] = gt ? v : col_max[x];
        col_row[x] = gt ? rr : col_row[x];
      }
    }
    for (std::size_t j = 0; j < ow; ++j) {
      std::size_t bx = j * pw;
      T bv = col_max[bx];
      std::uint32_t br = col_row[bx];
      for (std::size_t q = 1; q < pw; ++q) {
        const auto x = j * pw + q;
        const bool better = (col_max[x] > bv) | ((col_max[x] == bv) & (col_row[x] < br));
        bv = better ? col_max[x] : bv;
        br = better ? col_row[x] : br;
        bx = better ? x : bx;
      }
      out[i * ow + j] = bv;
      arg[i * ow + j] = static_cast<std::uint32_t>((i * ph + br) * w + bx);
    }
  }
}

template <typename T>
NormEluPool<T>::NormEluPool(const std::string& name, std::size_t channels, std::size_t pool_h,
                            std::size_t pool_w, T mom, T alpha)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean({channels}, T{0}),
      running_var({channels}, T{1}),
      momentum(mom),
      ph_(pool_h),
      pw_(pool_w),
      alpha_(alpha) {
  if (channels == 0) throw ConfigError(name + ": channel count must be positive");
  if (pool_h == 0 || pool_w == 0) throw ConfigError("pool sizes must be at least 1");
  gamma.value.fill(T{1});
}

template <typename T>
Tensor<T> NormEluPool<T>::forward(Tensor<T> x, Mode mode) {
  require_rank(x.shape(), 4, gamma.name);
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), hw = h * w;
  if (c != gamma.value.size()) throw ShapeError(gamma.name + ": channel mismatch");
  if (mode == Mode::train && n < 2) {
    throw ShapeError(gamma.name + ": batch normalization needs a batch of at least 2 in training mode");
  }
  const auto oh = h / ph_, ow = w / pw_;
  if (oh == 0 || ow == 0) {
    throw ShapeError("maxpool: pool " + std::to_string(ph_) + "x" + std::to_string(pw_) +
                     " is larger than input " + shape_str(x.shape()));
  }
  mode_ = mode;
  mean_.assign(c, T{0});
  inv_std_.assign(c, T{0});
  Tensor<T> y({n, c, oh, ow}, uninitialized);
  output_shape_ = y.shape();
  argmax_.assign(y.size(), 0);
  const auto channels = static_cast<std::ptrdiff_t>(c);
#pragma omp parallel
  {
    AlignedVector<T> act(hw), col_max(w);
    std::vector<std::uint32_t> col_row(w);
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> av(act.data(), static_cast<Eigen::Index>(hw));
#pragma omp for schedule(static)
    for (std::ptrdiff_t ch = 0; ch < channels; ++ch) {
      const auto uc = static_cast<std::size_t>(ch);
      const auto [mean, inv] = channel_stats(x, uc, mode, momentum, running_mean, running_var);
      mean_[uc] = static_cast<T>(mean);
      inv_std_[uc] = inv;
      const T g = gamma.value[uc], bt = beta.value[uc];
      const T m = static_cast<T>(mean);
      const T a = alpha_;
      for (std::size_t b = 0; b < n; ++b) {
        const auto plane = b * c + uc;
        const T* xp = x.raw() + plane * hw;
        T* ap = act.data();
        for (std::size_t i = 0; i < hw; ++i) ap[i] = std::min(g * ((xp[i] - m) * inv) + bt, T{0});
        // ELU: v for v > 0, otherwise alpha (e^v - 1).
        av = av.exp();
        for (std::size_t i = 0; i < hw; ++i) {
          const T v = g * ((xp[i] - m) * inv) + bt;
          const T neg = a * (ap[i] - T{1});
          ap[i] = v > T{0} ? v : neg;
        }
        T* yp = y.raw() + plane * oh * ow;
        std::uint32_t* am = argmax_.data() + plane * oh * ow;
        if (pw_ == 2) {
          pool_plane<T, 2>(ap, w, ph_, pw_, oh, ow, yp, am, col_max.data(), col_row.data());
        } else {
          pool_plane<T, 0>(ap, w, ph_, pw_, oh, ow, yp, am, col_max.data(), col_row.data());
        }
      }
    }
  }
  input_ = std::move(x);
  return y;
}

template <typename T>
Tensor<T> NormEluPool<T>::backward(const Tensor<T>& dy) {
  require_shape(dy.shape(), output_shape_, gamma.name + " backward");
  const auto n = input_.dim(0), c = input_.dim(1), hw = input_.dim(2) * input_.dim(3);
  const auto pooled = output_shape_[2] * output_shape_[3];
  const auto count = static_cast<T>(n * hw);
  Tensor<T> dx(input_.shape());
  const auto channels = static_cast<std::ptrdiff_t>(c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ch = 0; ch < channels; ++ch) {
    const auto uc = static_cast<std::size_t>(ch);
    const T g = gamma.value[uc], bt = beta.value[uc], a = alpha_;
    const T m = mean_[uc], inv = inv_std_[uc];
    // Gradient at the batch-norm output is nonzero only at pooling maxima.
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const auto plane = b * c + uc;
      const T* gp = dy.raw() + plane * pooled;
      const std::uint32_t* am = argmax_.data() + plane * pooled;
      const T* xp = input_.raw() + plane * hw;
      T* dp = dx.raw() + plane * hw;
      for (std::size_t o = 0; o < pooled; ++o) {
        const T xh = (xp[am[o]] - m) * inv;
        const T v = g * xh + bt;
        const T d = v > T{0} ? gp[o] : gp[o] * a * std::exp(v);
        dp[am[o]] = d;
        sum_dy += d;
        sum_dy_xhat += static_cast<double>(d) * xh;
      }
    }
    gamma.grad[uc] += static_cast<T>(sum_dy_xhat);
    beta.grad[uc] += static_cast<T>(sum_dy);
    if (mode_ == Mode::train) {
      const T scale = g * inv / count;
      const T s1 = static_cast<T>(sum_dy), s2 = static_cast<T>(sum_dy_xhat);
      for (std::size_t b = 0; b < n; ++b) {
        const auto off = (b * c + uc) * hw;
        const T* xp = input_.raw() + off;
        T* dp = dx.raw() + off;
        for (std::size_t i = 0; i < hw; ++i) dp[i] = scale * (count * dp[i] - s1 - ((xp[i] - m) * inv) * s2);
      }
    } else {
      const T scale = g * inv;
      for (std::size_t b = 0; b < n; ++b) {
        T* dp = dx.raw() + (b * c + uc) * hw;
        for (std::size_t i = 0; i < hw; ++i) dp[i] *= scale;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout

template <typename T>
Dropout<T>::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
}

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Mode mode) {
  if (mode == Mode::infer || rate_ == 0.0) {
    mask_.clear();
    return x;
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate_));
  mask_.resize(x.size());
  Tensor<T> y(x.shape(), uninitialized);
  // Sequential on purpose: the mask must follow one RNG stream.
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = uniform01(rng_) < rate_ ? T{0} : scale;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& dy) {
  if (mask_.empty()) return dy;
  if (dy.size() != mask_.size()) throw ShapeError("dropout backward: gradient shape mismatch");
  Tensor<T> dx(dy.shape(), uninitialized);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Gru

template <typename T>
Gru<T>::Gru(const std::string& name, std::size_t input_dim, std::size_t units)
    : kernel(name + ".kernel", {input_dim, 3 * units}),
      recurrent(name + ".recurrent", {units, 3 * units}),
      bias(name + ".bias", {3 * units}) {
  if (input_dim == 0 || units == 0) throw ConfigError(name + ": dimensions must be positive");
}

template <typename T>
void Gru<T>::init(Rng& rng) {
  glorot_uniform(kernel.value, input_dim(), 3 * units(), rng);
  glorot_uniform(recurrent.value, units(), 3 * units(), rng);
  bias.value.fill(T{0});
}

template <typename T>
GruOutput<T> Gru<T>::forward(const Tensor<T>& x, const Tensor<T>& h0) {
  require_rank(x.shape(), 3, kernel.name);
  const auto B = x.dim(0), steps = x.dim(1), D = x.dim(2), U = units();
  if (D != input_dim()) {
    throw ShapeError(kernel.name + ": input feature size " + std::to_string(D) + ", expected " +
                     std::to_string(input_dim()));
  }
  if (steps == 0) throw ShapeError(kernel.name + ": sequence must have at least one step");
  input_ = x;

  RowMat<T> h = RowMat<T>::Zero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(U));
  if (!h0.empty()) {
    require_shape(h0.shape(), {B, U}, kernel.name + " initial state");
    h = as_matrix(h0, B, U);
  }

  // Input projections for every step at once: (B*T) x 3U.
  RowMat<T> xw = as_matrix(x, B * steps, D) * as_matrix(kernel.value, D, 3 * U);
  const auto bias_row = as_matrix(bias.value, 1, 3 * U);
  xw.rowwise() += bias_row.row(0);

  const auto Uz = as_matrix(recurrent.value, U, 3 * U).leftCols(static_cast<Eigen::Index>(U));
  const auto Ur = as_matrix(recurrent.value, U, 3 * U).middleCols(static_cast<Eigen::Index>(U), static_cast<Eigen::Index>(U));
  const auto Uc = as_matrix(recurrent.value, U, 3 * U).rightCols(static_cast<Eigen::Index>(U));

  h_prev_ = Tensor<T>({B, steps, U});
  z_ = Tensor<T>({B, steps, U});
  r_ = Tensor<T>({B, steps, U});
  cand_ = Tensor<T>({B, steps, U});
  GruOutput<T> out{Tensor<T>({B, steps, U}), Tensor<T>({B, U})};

  for (std::size_t t = 0; t < steps; ++t) {
    const RowMat<T> hz = h * Uz;
    const RowMat<T> hr = h * Ur;
    RowMat<T> z(B, U), r(B, U);
    for (std::size_t b = 0; b < B; ++b) {
      const auto row = static_cast<Eigen::Index>(b * steps + t);
      for (std::size_t u = 0; u < U; ++u) {
        const auto eb = static_cast<Eigen::Index>(b), eu = static_cast<Eigen::Index>(u);
        z(eb, eu) = sigmoid(xw(row, eu) + hz(eb, eu));
        r(eb, eu) = sigmoid(xw(row, static_cast<Eigen::Index>(U + u)) + hr(eb, eu));
      }
    }
    const RowMat<T> rh = r.cwiseProduct(h);
    const RowMat<T> rhu = rh * Uc;
    RowMat<T> next(B, U);
    for (std::size_t b = 0; b < B; ++b) {
      const auto row = static_cast<Eigen::Index>(b * steps + t);
      for (std::size_t u = 0; u < U; ++u) {
        const auto eb = static_cast<Eigen::Index>(b), eu = static_cast<Eigen::Index>(u);
        const T c = std::tanh(xw(row, static_cast<Eigen::Index>(2 * U + u)) + rhu(eb, eu));
        const auto idx = (b * steps + t) * U + u;
        h_prev_[idx] = h(eb, eu);
        z_[idx] = z(eb, eu);
        r_[idx] = r(eb, eu);
        cand_[idx] = c;
        next(eb, eu) = (T(1) - z(eb, eu)) * h(eb, eu) + z(eb, eu) * c;
        out.outputs[idx] = next(eb, eu);
      }
    }
    h = std::move(next);
  }
  as_matrix(out.final_state, B, U) = h;
  return out;
}

template <typename T>
GruGrads<T> Gru<T>::backward(const Tensor<T>& d_outputs) {
  const auto B = input_.dim(0), steps = input_.dim(1), D = input_.dim(2), U = units();
  require_shape(d_outputs.shape(), {B, steps, U}, kernel.name + " backward");
  const auto eB = static_cast<Eigen::Index>(B), eU = static_cast<Eigen::Index>(U);

  const auto Rm = as_matrix(recurrent.value, U, 3 * U);
  auto dR = as_matrix(recurrent.grad, U, 3 * U);

  RowMat<T> dxw = RowMat<T>::Zero(static_cast<Eigen::Index>(B * steps), 3 * eU);
  RowMat<T> dh = RowMat<T>::Zero(eB, eU);

  for (std::size_t tt = steps; tt-- > 0;) {
    RowMat<T> hp(eB, eU), da_z(eB, eU), da_r(eB, eU), da_c(eB, eU), rh(eB, eU), rr(eB, eU);
    RowMat<T> dh_prev(eB, eU);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t u = 0; u < U; ++u) {
        const auto idx = (b * steps + tt) * U + u;
        const auto eb = static_cast<Eigen::Index>(b), eu = static_cast<Eigen::Index>(u);
        const T g = dh(eb, eu) + d_outputs[idx];
        const T z = z_[idx], c = cand_[idx], h = h_prev_[idx];
        hp(eb, eu) = h;
        rr(eb, eu) = r_[idx];
        rh(eb, eu) = r_[idx] * h;
        da_z(eb, eu) = g * (c - h) * z * (T(1) - z);
        da_c(eb, eu) = g * z * (T(1) - c * c);
        dh_prev(eb, eu) = g * (T(1) - z);
      }
    }
    const RowMat<T> d_rh = da_c * Rm.rightCols(eU).transpose();
    for (Eigen::Index b = 0; b < eB; ++b) {
      for (Eigen::Index u = 0; u < eU; ++u) {
        const T r = rr(b, u);
        da_r(b, u) = d_rh(b, u) * hp(b, u) * r * (T(1) - r);
        dh_prev(b, u) += d_rh(b, u) * r;
      }
    }
    dR.leftCols(eU).noalias() += hp.transpose() * da_z;
    dR.middleCols(eU, eU).noalias() += hp.transpose() * da_r;
    dR.rightCols(eU).noalias() += rh.transpose() * da_c;
    dh_prev.noalias() += da_z * Rm.leftCols(eU).transpose();
    dh_prev.noalias() += da_r * Rm.middleCols(eU, eU).transpose();
    for (std::size_t b = 0; b < B; ++b) {
      const auto row = static_cast<Eigen::Index>(b * steps + tt);
      const auto eb = static_cast<Eigen::Index>(b);
      dxw.row(row).segment(0, eU) = da_z.row(eb);
      dxw.row(row).segment(eU, eU) = da_r.row(eb);
      dxw.row(row).segment(2 * eU, eU) = da_c.row(eb);
    }
    dh = std::move(dh_prev);
  }

  as_matrix(kernel.grad, D, 3 * U).noalias() += as_matrix(input_, B * steps, D).transpose() * dxw;
  as_matrix(bias.grad, 1, 3 * U).row(0) += dxw.colwise().sum();

  GruGrads<T> grads{Tensor<T>(input_.shape()), Tensor<T>({B, U})};
  as_matrix(grads.dx, B * steps, D).noalias() = dxw * as_matrix(kernel.value, D, 3 * U).transpose();
  as_matrix(grads.dh0, B, U) = dh;
  return grads;
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(const std::string& name, std::size_t in, std::size_t out)
    : kernel(name + ".kernel", {in, out}), bias(name + ".bias", {out}) {
  if (in == 0 || out == 0) throw ConfigError(name + ": dimensions must be positive");
}

template <typename T>
void Dense<T>::init(Rng& rng) {
  glorot_uniform(kernel.value, kernel.value.dim(0), kernel.value.dim(1), rng);
  bias.value.fill(T{0});
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x) {
  require_rank(x.shape(), 2, kernel.name);
  const auto in = kernel.value.dim(0), out = kernel.value.dim(1);
  if (x.dim(1) != in) {
    throw ShapeError(kernel.name + ": input width " + std::to_string(x.dim(1)) + ", expected " +
                     std::to_string(in));
  }
  input_ = x;
  Tensor<T> y({x.dim(0), out});
  auto ym = as_matrix(y, x.dim(0), out);
  ym.noalias() = as_matrix(x, x.dim(0), in) * as_matrix(kernel.value, in, out);
  ym.rowwise() += as_matrix(bias.value, 1, out).row(0);
  return y;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& dy) {
  const auto n = input_.dim(0), in = kernel.value.dim(0), out = kernel.value.dim(1);
  require_shape(dy.shape(), {n, out}, kernel.name + " backward");
  const auto dym = as_matrix(dy, n, out);
  as_matrix(kernel.grad, in, out).noalias() += as_matrix(input_, n, in).transpose() * dym;
  as_matrix(bias.grad, 1, out).row(0) += dym.colwise().sum();
  Tensor<T> dx({n, in});
  as_matrix(dx, n, in).noalias() = dym * as_matrix(kernel.value, in, out).transpose();
  return dx;
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax");
  const auto n = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* row = logits.raw() + b * k;
    const T mx = *std::max_element(row, row + k);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) {
      p[b * k + j] = std::exp(row[j] - mx);
      sum += p[b * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) p[b * k + j] /= sum;
  }
  return p;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  require_rank(logits.shape(), 2, "cross-entropy");
  const auto n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross-entropy: label count does not match batch");
  if (n == 0) throw ShapeError("cross-entropy: empty batch");
  LossResult<T> res{T{0}, Tensor<T>(logits.shape())};
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ShapeError("cross-entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    const T* row = logits.raw() + b * k;
    const T mx = *std::max_element(row, row + k);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const T log_sum = std::log(sum);
    total += static_cast<double>(log_sum - (row[label] - mx));
    for (std::size_t j = 0; j < k; ++j) {
      const T p = std::exp(row[j] - mx - log_sum);
      res.d_logits[b * k + j] = (p - (static_cast<int>(j) == label ? T(1) : T(0))) / static_cast<T>(n);
    }
  }
  res.loss = static_cast<T>(total / static_cast<double>(n));
  return res;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config.lr > 0.0)) throw ConfigError("learning rate must be positive");
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T lr = static_cast<T>(config_.lr), eps = static_cast<T>(config_.epsilon);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    require_shape(p.grad.shape(), p.value.shape(), p.name + " adam");
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = p.grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const T mhat = m[j] * inv_c1;
      const T vhat = v[j] * inv_c2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

#define ARTISTID_INSTANTIATE(T)                                                                 \
  template class Conv2d<T>;                                                                     \
  template class BatchNorm2d<T>;                                                                \
  template class Elu<T>;                                                                        \
  template class MaxPool2d<T>;                                                                  \
  template class NormEluPool<T>;                                                                \
  template class Dropout<T>;                                                                    \
  template class Gru<T>;                                                                        \
  template class Dense<T>;                                                                      \
  template class Adam<T>;                                                                       \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                              \
  template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);   \
  template void glorot_uniform<T>(Tensor<T>&, std::size_t, std::size_t, Rng&);

ARTISTID_INSTANTIATE(float)
ARTISTID_INSTANTIATE(double)

#undef ARTISTID_INSTANTIATE

}  // namespace artistid
