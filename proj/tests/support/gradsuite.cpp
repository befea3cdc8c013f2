#include "gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <span>

#include "artistid/layers.hpp"
#include "artistid/random.hpp"

namespace gradsuite {

using namespace artistid;
using T = Tensor<double>;

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

T random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  T t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

double dot(const T& a, const T& b) { return std::inner_product(a.data().begin(), a.data().end(), b.data().begin(), 0.0); }

// One tensor under test: its values (perturbed in place) and the analytic
// gradient captured before any perturbation.
struct Probe {
  T* point;
  std::vector<double> analytic;
};

GradCheckReport check(const std::function<double()>& loss, std::vector<Probe> probes) {
  GradCheckReport total;
  total.passed = true;
  for (auto& p : probes) {
    const auto r = finite_diff_check(loss, p.point->data(), p.analytic, kTolerance);
    if (r.max_rel_error >= total.max_rel_error) {
      total.max_rel_error = r.max_rel_error;
      total.worst_index = r.worst_index;
    }
    total.max_abs_error = std::max(total.max_abs_error, r.max_abs_error);
    total.checked += r.checked;
    total.passed = total.passed && r.passed;
  }
  return total;
}

std::vector<double> copy(const T& t) { return {t.data().begin(), t.data().end()}; }

Case conv_case(Rng& rng) {
  const std::size_t b = pick(rng, 1, 3), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
  const std::size_t h = pick(rng, 3, 6), w = pick(rng, 3, 6), k = pick(rng, 0, 1) ? 3 : 1;
  Conv2d<double> conv("conv", ci, co, k, k);
  conv.init(rng);
  for (auto& v : conv.bias.value.data()) v = uniform(rng, -0.5, 0.5);
  T x = random_tensor({b, ci, h, w}, rng);
  const T r = random_tensor({b, co, h, w}, rng);
  auto loss = [&] { return dot(conv.forward(x), r); };
  loss();
  conv.kernel.zero_grad();
  conv.bias.zero_grad();
  const T dx = conv.backward(r);
  return {"conv2d", shape_str(x.shape()) + " k" + std::to_string(k) + " c_out" + std::to_string(co),
          check(loss, {{&x, copy(dx)}, {&conv.kernel.value, copy(conv.kernel.grad)}, {&conv.bias.value, copy(conv.bias.grad)}})};
}

Case batchnorm_case(Rng& rng, Mode mode) {
  const std::size_t b = pick(rng, 2, 4), c = pick(rng, 1, 3), h = pick(rng, 2, 4), w = pick(rng, 2, 4);
  BatchNorm2d<double> bn("bn", c);
  for (auto& v : bn.gamma.value.data()) v = uniform(rng, 0.5, 1.5);
  for (auto& v : bn.beta.value.data()) v = uniform(rng, -0.5, 0.5);
  for (auto& v : bn.running_mean.data()) v = uniform(rng, -0.5, 0.5);
  for (auto& v : bn.running_var.data()) v = uniform(rng, 0.5, 2.0);
  T x = random_tensor({b, c, h, w}, rng, -2.0, 2.0);
  const T r = random_tensor(x.shape(), rng);
  auto loss = [&] { return dot(bn.forward(x, mode), r); };
  loss();
  bn.gamma.zero_grad();
  bn.beta.zero_grad();
  const T dx = bn.backward(r);
  return {mode == Mode::train ? "batchnorm2d(train)" : "batchnorm2d(infer)", shape_str(x.shape()),
          check(loss, {{&x, copy(dx)}, {&bn.gamma.value, copy(bn.gamma.grad)}, {&bn.beta.value, copy(bn.beta.grad)}})};
}

Case elu_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 3), d = pick(rng, 3, 12);
  T x({n, d});
  // Bounded away from the kink at 0.
  for (auto& v : x.data()) v = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * uniform(rng, 0.1, 2.0);
  const T r = random_tensor(x.shape(), rng);
  Elu<double> elu;
  auto loss = [&] { return dot(elu.forward(x), r); };
  loss();
  const T dx = elu.backward(r);
  return {"elu", shape_str(x.shape()), check(loss, {{&x, copy(dx)}})};
}

Case maxpool_case(Rng& rng) {
  const std::size_t ph = pick(rng, 1, 3), pw = pick(rng, 1, 3);
  const std::size_t b = pick(rng, 1, 2), c = pick(rng, 1, 2);
  const std::size_t h = ph * pick(rng, 1, 3) + pick(rng, 0, 1), w = pw * pick(rng, 1, 3) + pick(rng, 0, 1);
  T x({b, c, h, w});
  // Distinct values 0.01 apart so a 1e-4 step never changes a window's argmax.
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(perm), rng);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * static_cast<double>(perm[i]);
  const T r = random_tensor({b, c, h / ph, w / pw}, rng);
  MaxPool2d<double> pool(ph, pw);
  auto loss = [&] { return dot(pool.forward(x), r); };
  loss();
  const T dx = pool.backward(r);
  return {"maxpool2d", shape_str(x.shape()) + " pool" + std::to_string(ph) + "x" + std::to_string(pw),
          check(loss, {{&x, copy(dx)}})};
}

Case norm_elu_pool_case(Rng& rng, Mode mode) {
  const std::size_t ph = pick(rng, 1, 3), pw = pick(rng, 1, 3);
  const std::size_t b = pick(rng, 2, 3), c = pick(rng, 1, 2);
  const std::size_t h = ph * pick(rng, 1, 2) + pick(rng, 0, 1), w = pw * pick(rng, 1, 2) + pick(rng, 0, 1);
  NormEluPool<double> nep("nep", c, ph, pw);
  for (auto& v : nep.gamma.value.data()) v = uniform(rng, 0.5, 1.5);
  for (auto& v : nep.beta.value.data()) v = uniform(rng, -0.5, 0.5);
  for (auto& v : nep.running_mean.data()) v = uniform(rng, -0.5, 0.5);
  for (auto& v : nep.running_var.data()) v = uniform(rng, 0.5, 2.0);
  // Distinct, well separated inputs keep every window's argmax fixed.
  T x({b, c, h, w});
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(perm), rng);
  const double spacing = 4.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = -2.0 + spacing * static_cast<double>(perm[i]);
  const T r = random_tensor({b, c, h / ph, w / pw}, rng);
  auto loss = [&] { return dot(nep.forward(x, mode), r); };
  loss();
  nep.gamma.zero_grad();
  nep.beta.zero_grad();
  const T dx = nep.backward(r);
  return {mode == Mode::train ? "norm_elu_pool(train)" : "norm_elu_pool(infer)",
          shape_str(x.shape()) + " pool" + std::to_string(ph) + "x" + std::to_string(pw),
          check(loss, {{&x, copy(dx)}, {&nep.gamma.value, copy(nep.gamma.grad)}, {&nep.beta.value, copy(nep.beta.grad)}})};
}

Case dropout_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 4), d = pick(rng, 4, 20);
  const double rate = uniform(rng, 0.1, 0.6);
  const std::uint64_t seed = rng();
  T x = random_tensor({n, d}, rng);
  const T r = random_tensor(x.shape(), rng);
  Dropout<double> drop(rate, seed);
  auto loss = [&] {
    drop.reseed(seed);  // same mask on every evaluation
    return dot(drop.forward(x, Mode::train), r);
  };
  loss();
  const T dx = drop.backward(r);
  return {"dropout", shape_str(x.shape()), check(loss, {{&x, copy(dx)}})};
}

Case gru_case(Rng& rng) {
  const std::size_t b = pick(rng, 1, 3), steps = pick(rng, 1, 4), d = pick(rng, 1, 5), u = pick(rng, 1, 4);
  Gru<double> gru("gru", d, u);
  gru.init(rng);
  for (auto& v : gru.bias.value.data()) v = uniform(rng, -0.5, 0.5);
  T x = random_tensor({b, steps, d}, rng);
  T h0 = random_tensor({b, u}, rng, -0.5, 0.5);
  const T r = random_tensor({b, steps, u}, rng);
  auto loss = [&] { return dot(gru.forward(x, h0).outputs, r); };
  loss();
  for (auto* p : gru.parameters()) p->zero_grad();
  const auto g = gru.backward(r);
  return {"gru", shape_str(x.shape()) + " units" + std::to_string(u),
          check(loss, {{&x, copy(g.dx)},
                       {&h0, copy(g.dh0)},
                       {&gru.kernel.value, copy(gru.kernel.grad)},
                       {&gru.recurrent.value, copy(gru.recurrent.grad)},
                       {&gru.bias.value, copy(gru.bias.grad)}})};
}

Case dense_case(Rng& rng, double scale_analytic) {
  const std::size_t b = pick(rng, 1, 4), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
  Dense<double> dense("dense", in, out);
  dense.init(rng);
  for (auto& v : dense.bias.value.data()) v = uniform(rng, -0.5, 0.5);
  T x = random_tensor({b, in}, rng);
  const T r = random_tensor({b, out}, rng);
  auto loss = [&] { return dot(dense.forward(x), r); };
  loss();
  dense.kernel.zero_grad();
  dense.bias.zero_grad();
  const T dx = dense.backward(r);
  auto scaled = [&](const T& t) {
    auto v = copy(t);
    for (auto& e : v) e *= scale_analytic;
    return v;
  };
  return {"dense", shape_str(x.shape()) + " out" + std::to_string(out),
          check(loss, {{&x, scaled(dx)}, {&dense.kernel.value, scaled(dense.kernel.grad)}, {&dense.bias.value, scaled(dense.bias.grad)}})};
}

Case softmax_ce_case(Rng& rng) {
  const std::size_t b = pick(rng, 1, 5), k = pick(rng, 2, 6);
  T logits = random_tensor({b, k}, rng, -3.0, 3.0);
  std::vector<int> labels(b);
  for (auto& l : labels) l = static_cast<int>(uniform_index(rng, k));
  auto loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
  const auto res = softmax_cross_entropy(logits, labels);
  return {"softmax_cross_entropy", shape_str(logits.shape()), check(loss, {{&logits, copy(res.d_logits)}})};
}

}  // namespace

std::vector<Case> run_all(std::uint64_t seed, int shapes_per_layer) {
  Rng rng(seed);
  std::vector<Case> out;
  for (int i = 0; i < shapes_per_layer; ++i) {
    out.push_back(conv_case(rng));
    out.push_back(batchnorm_case(rng, Mode::train));
    out.push_back(batchnorm_case(rng, Mode::infer));
    out.push_back(elu_case(rng));
    out.push_back(maxpool_case(rng));
    out.push_back(norm_elu_pool_case(rng, Mode::train));
    out.push_back(norm_elu_pool_case(rng, Mode::infer));
    out.push_back(dropout_case(rng));
    out.push_back(gru_case(rng));
    out.push_back(dense_case(rng, 1.0));
    out.push_back(softmax_ce_case(rng));
  }
  return out;
}

Case negative_control(std::uint64_t seed) {
  Rng rng(seed);
  auto c = dense_case(rng, 2.0);
  c.layer = "dense(gradient x2)";
  return c;
}

}  // namespace gradsuite
