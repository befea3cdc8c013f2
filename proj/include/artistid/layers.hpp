#pragma once

// Layers with hand-written forward and backward passes. Each layer caches
// what its backward pass needs during forward(); call backward() at most once
// per forward(). Parameter gradients accumulate, so zero them between steps.
//
// Everything is templated on the scalar so the same code trains in float and
// is gradient-checked in double.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "artistid/random.hpp"
#include "artistid/tensor.hpp"

namespace artistid {

enum class Mode { train, infer };

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);
  /// Returns dx, or an empty tensor when need_input_grad is false.
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  std::vector<Parameter<T>*> parameters() { return {&kernel, &bias}; }

  std::size_t c_in() const { return kernel.value.dim(1); }
  std::size_t c_out() const { return kernel.value.dim(0); }

  Parameter<T> kernel;  // c_out x c_in x kh x kw
  Parameter<T> bias;    // c_out

 private:
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  static constexpr T kEpsilon = T(1e-5);

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, std::size_t channels, T momentum = T(0.9));

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  std::vector<Parameter<T>*> parameters() { return {&gamma, &beta}; }

  Parameter<T> gamma;
  Parameter<T> beta;
  // running = momentum * running + (1 - momentum) * batch statistic
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.9);

 private:
  Mode mode_ = Mode::infer;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
class Elu {
 public:
  explicit Elu(T alpha = T(1)) : alpha_(alpha) {}
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

 private:
  T alpha_;
  Tensor<T> output_;
};

/// Non-overlapping max pooling (stride = pool). Trailing rows/columns that do
/// not fill a window are dropped. Ties route the gradient to the first
/// maximum in row-major window order.
template <typename T>
class MaxPool2d {
 public:
  MaxPool2d() = default;
  MaxPool2d(std::size_t pool_h, std::size_t pool_w);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  std::pair<std::size_t, std::size_t> pool() const { return {ph_, pw_}; }

 private:
  std::size_t ph_ = 1;
  std::size_t pw_ = 1;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

/// Batch norm, ELU and max pooling fused into one pass per channel. Holds the
/// same parameters and statistics as BatchNorm2d and matches the three layers
/// applied in turn up to float rounding.
template <typename T>
class NormEluPool {
 public:
  static constexpr T kEpsilon = BatchNorm2d<T>::kEpsilon;

  NormEluPool() = default;
  NormEluPool(const std::string& name, std::size_t channels, std::size_t pool_h, std::size_t pool_w,
              T momentum = T(0.9), T alpha = T(1));

  /// Keeps x for the backward pass; pass an rvalue to avoid a copy.
  Tensor<T> forward(Tensor<T> x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  std::vector<Parameter<T>*> parameters() { return {&gamma, &beta}; }
  std::pair<std::size_t, std::size_t> pool() const { return {ph_, pw_}; }

  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.9);

 private:
  std::size_t ph_ = 1;
  std::size_t pw_ = 1;
  T alpha_ = T(1);
  Mode mode_ = Mode::infer;
  Tensor<T> input_;
  Shape output_shape_;
  std::vector<T> mean_;
  std::vector<T> inv_std_;
  std::vector<std::uint32_t> argmax_;  // index within the input plane
};

/// Inverted dropout: survivors are scaled by 1/(1 - rate), so inference is
/// the identity.
template <typename T>
class Dropout {
 public:
  Dropout() = default;
  Dropout(double rate, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  double rate() const { return rate_; }
  const Rng& rng() const { return rng_; }

 private:
  double rate_ = 0.0;
  Rng rng_;
  std::vector<T> mask_;
};

template <typename T>
struct GruOutput {
  Tensor<T> outputs;      // batch x time x units
  Tensor<T> final_state;  // batch x units
};

template <typename T>
struct GruGrads {
  Tensor<T> dx;   // batch x time x input_dim
  Tensor<T> dh0;  // batch x units
};

/// Gated recurrent unit with the reset gate applied before the candidate's
/// recurrent product:
///   z = sig(x Wz + h Uz + bz),  r = sig(x Wr + h Ur + br)
///   c = tanh(x Wc + (r * h) Uc + bc),  h' = (1 - z) h + z c
/// Weights are packed [z | r | c] along the last axis.
template <typename T>
class Gru {
 public:
  Gru() = default;
  Gru(const std::string& name, std::size_t input_dim, std::size_t units);

  void init(Rng& rng);
  /// h0 may be empty (zeros).
  GruOutput<T> forward(const Tensor<T>& x, const Tensor<T>& h0 = {});
  /// d_outputs is batch x time x units; backprop through time.
  GruGrads<T> backward(const Tensor<T>& d_outputs);
  std::vector<Parameter<T>*> parameters() { return {&kernel, &recurrent, &bias}; }

  std::size_t input_dim() const { return kernel.value.dim(0); }
  std::size_t units() const { return recurrent.value.dim(0); }

  Parameter<T> kernel;     // input_dim x 3*units
  Parameter<T> recurrent;  // units x 3*units
  Parameter<T> bias;       // 3*units

 private:
  Tensor<T> input_;
  // batch x time x units, per step
  Tensor<T> h_prev_, z_, r_, cand_;
};

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  std::vector<Parameter<T>*> parameters() { return {&kernel, &bias}; }

  Parameter<T> kernel;  // in x out
  Parameter<T> bias;    // out

 private:
  Tensor<T> input_;
};

/// Row-wise softmax of batch x classes logits.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

template <typename T>
struct LossResult {
  T loss;               // mean over the batch
  Tensor<T> d_logits;   // (p - onehot) / batch
};

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig config = {});

  /// One bias-corrected update of every parameter from its grad.
  void step();
  void zero_grad();

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::uint64_t step_ = 0;
};

/// Glorot-uniform fill: U(-l, l), l = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace artistid
