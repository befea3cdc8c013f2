#include <doctest.h>

#include <cmath>

#include "artistid/error.hpp"
#include "artistid/gradcheck.hpp"
#include "artistid/kernels.hpp"
#include "artistid/layers.hpp"
#include "gradsuite.hpp"

using namespace artistid;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(uniform(rng, -1.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(reinterpret_cast<std::uintptr_t>(t.raw()) % 64 == 0);
  t.reshape({3, 2});
  CHECK(t.dim(0) == 3);
  CHECK_THROWS_AS(t.reshape({4, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  t[0] = std::nanf("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("conv2d hand cases") {
  SUBCASE("1x1 identity kernel") {
    Conv2d<double> conv("c", 1, 1, 1, 1);
    conv.kernel.value.fill(1.0);
    Rng rng(1);
    const auto x = random_tensor<double>({2, 1, 3, 4}, rng);
    CHECK(conv.forward(x) == x);
  }
  SUBCASE("valid-mode cross-correlation") {
    const double x[] = {1, 2, 3, 4};
    const double k[] = {1, 0, 0, 1};
    double y = 0;
    kernels::reference::correlate2d_valid(2, 2, x, 2, 2, k, &y);
    CHECK(y == 5.0);
  }
  CHECK_THROWS_AS(Conv2d<float>("c", 1, 1, 2, 2), ConfigError);
}

TEST_CASE("parallel conv kernels match the reference loops") {
  Rng rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    const kernels::Conv2dShape s{1 + uniform_index(rng, 3), 1 + uniform_index(rng, 4), 1 + uniform_index(rng, 4),
                                 1 + uniform_index(rng, 7), 1 + uniform_index(rng, 7), trial % 2 ? 3u : 1u,
                                 trial % 3 ? 3u : 5u};
    std::vector<double> x(s.input_size()), k(s.kernel_size()), b(s.c_out), dy(s.output_size());
    for (auto* v : {&x, &k, &b, &dy}) {
      for (auto& e : *v) e = uniform(rng, -1, 1);
    }
    std::vector<double> y1(s.output_size()), y2(s.output_size());
    kernels::conv2d_forward(s, x.data(), k.data(), b.data(), y1.data());
    kernels::reference::conv2d_forward(s, x.data(), k.data(), b.data(), y2.data());
    std::vector<double> dx1(x.size()), dx2(x.size()), dk1(k.size()), dk2(k.size()), db1(b.size()), db2(b.size());
    kernels::conv2d_backward(s, x.data(), k.data(), dy.data(), dx1.data(), dk1.data(), db1.data());
    kernels::reference::conv2d_backward(s, x.data(), k.data(), dy.data(), dx2.data(), dk2.data(), db2.data());
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < dx1.size(); ++i) CHECK(dx1[i] == doctest::Approx(dx2[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < dk1.size(); ++i) CHECK(dk1[i] == doctest::Approx(dk2[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < db1.size(); ++i) CHECK(db1[i] == doctest::Approx(db2[i]).epsilon(1e-12));
  }
}

TEST_CASE("batch norm statistics") {
  BatchNorm2d<double> bn("bn", 2);
  SUBCASE("constant channels map to beta") {
    bn.beta.value[0] = 0.25;
    bn.beta.value[1] = -1.0;
    Tensor<double> x({3, 2, 2, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i / 4) % 2 ? 7.0 : -3.0;
    const auto y = bn.forward(x, Mode::train);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ((i / 4) % 2 ? -1.0 : 0.25)) < 1e-3);
  }
  SUBCASE("normalised output has zero mean and unit variance") {
    Rng rng(8);
    auto x = random_tensor<double>({4, 2, 5, 5}, rng);
    for (auto& v : x.data()) v = 3.0 * v + 2.0;
    const auto y = bn.forward(x, Mode::train);
    for (std::size_t c = 0; c < 2; ++c) {
      double sum = 0, sq = 0;
      for (std::size_t b = 0; b < 4; ++b) {
        for (std::size_t i = 0; i < 25; ++i) {
          const double v = y[(b * 2 + c) * 25 + i];
          sum += v;
          sq += v * v;
        }
      }
      CHECK(std::abs(sum / 100) < 1e-5);
      CHECK(std::abs(sq / 100 - 1.0) < 1e-3);
    }
    CHECK(bn.running_mean[0] != 0.0);
  }
  CHECK_THROWS_AS(bn.forward(Tensor<double>({1, 2, 2, 2}), Mode::train), ShapeError);
}

TEST_CASE("elu values") {
  Elu<double> elu;
  const auto y = elu.forward(Tensor<double>({3}, std::vector<double>{0.0, -1.0, 2.0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-14));
  CHECK(y[2] == 2.0);
}

TEST_CASE("max pooling") {
  MaxPool2d<float> pool(2, 2);
  const auto y = pool.forward(Tensor<float>({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4}));
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == 4.0f);
  Tensor<float> x({1, 1, 128, 3}, 1.0f);
  for (std::size_t ph : {4, 4, 4, 2}) x = MaxPool2d<float>(ph, 1).forward(x);
  CHECK(x.dim(2) == 1);
  CHECK_THROWS_AS(MaxPool2d<float>(4, 1).forward(Tensor<float>({1, 1, 3, 3})), ShapeError);
}

TEST_CASE("fused norm-elu-pool matches the separate layers") {
  Rng rng(21);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t ph = 1 + uniform_index(rng, 4), pw = 1 + uniform_index(rng, 3);
    const std::size_t b = 2 + uniform_index(rng, 3), c = 1 + uniform_index(rng, 4);
    const std::size_t h = ph * (1 + uniform_index(rng, 4)) + uniform_index(rng, 2);
    const std::size_t w = pw * (1 + uniform_index(rng, 6)) + uniform_index(rng, 2);
    const auto mode = trial % 3 == 2 ? Mode::infer : Mode::train;
    INFO("trial " << trial);
    auto x = random_tensor<float>({b, c, h, w}, rng);
    // Coarse values make ties common, which exercises the argmax order.
    if (trial % 2) {
      for (auto& v : x.data()) v = std::round(v * 2.0f);
    }
    BatchNorm2d<float> bn("bn", c);
    Elu<float> elu;
    MaxPool2d<float> pool(ph, pw);
    NormEluPool<float> fused("bn", c, ph, pw);
    for (std::size_t k = 0; k < c; ++k) {
      bn.gamma.value[k] = fused.gamma.value[k] = static_cast<float>(uniform(rng, 0.5, 1.5));
      bn.beta.value[k] = fused.beta.value[k] = static_cast<float>(uniform(rng, -0.5, 0.5));
    }
    const auto ref = pool.forward(elu.forward(bn.forward(x, mode)));
    const auto got = fused.forward(x, mode);
    REQUIRE(got.shape() == ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    CHECK(fused.running_mean == bn.running_mean);
    CHECK(fused.running_var == bn.running_var);

    const auto dy = random_tensor<float>(ref.shape(), rng);
    const auto dref = bn.backward(elu.backward(pool.backward(dy)));
    const auto dgot = fused.backward(dy);
    for (std::size_t i = 0; i < dref.size(); ++i) CHECK(dgot[i] == doctest::Approx(dref[i]).epsilon(1e-4).scale(1.0));
    for (std::size_t k = 0; k < c; ++k) {
      CHECK(fused.gamma.grad[k] == doctest::Approx(bn.gamma.grad[k]).epsilon(1e-4));
      CHECK(fused.beta.grad[k] == doctest::Approx(bn.beta.grad[k]).epsilon(1e-4));
    }
  }
  CHECK_THROWS_AS(NormEluPool<float>("n", 2, 4, 1).forward(Tensor<float>({2, 2, 3, 3}), Mode::train), ShapeError);
  CHECK_THROWS_AS(NormEluPool<float>("n", 2, 1, 1).forward(Tensor<float>({1, 2, 3, 3}), Mode::train), ShapeError);
}

TEST_CASE("dropout") {
  Rng rng(2);
  const auto x = random_tensor<float>({10, 10}, rng);
  CHECK(Dropout<float>(0.0, 1).forward(x, Mode::train) == x);
  CHECK(Dropout<float>(0.7, 1).forward(x, Mode::infer) == x);
  Dropout<double> half(0.5, 9);
  const auto y = half.forward(Tensor<double>({1000000}, 1.0), Mode::train);
  double mean = 0;
  for (double v : y.data()) mean += v;
  CHECK(std::abs(mean / 1e6 - 1.0) < 0.01);
  CHECK_THROWS_AS(Dropout<float>(1.0, 0), ConfigError);
}

TEST_CASE("gru hand cases") {
  SUBCASE("zero input and zero state stay at zero") {
    Gru<double> gru("g", 3, 4);
    Rng rng(1);
    gru.init(rng);
    const auto out = gru.forward(Tensor<double>({2, 5, 3}));
    for (double v : out.outputs.data()) CHECK(v == 0.0);
  }
  SUBCASE("one step of a scalar cell") {
    Gru<double> gru("g", 1, 1);
    // kernel [z r c], recurrent [z r c], bias [z r c]
    gru.kernel.value = Tensor<double>({1, 3}, std::vector<double>{0.5, -0.3, 0.8});
    gru.recurrent.value = Tensor<double>({1, 3}, std::vector<double>{0.2, 0.4, -0.6});
    gru.bias.value = Tensor<double>({3}, std::vector<double>{0.1, 0.0, -0.1});
    const double x = 0.7, h = -0.2;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double z = sig(0.5 * x + 0.2 * h + 0.1);
    const double r = sig(-0.3 * x + 0.4 * h);
    const double c = std::tanh(0.8 * x + r * (-0.6 * h) - 0.1);
    const double expected = (1 - z) * h + z * c;
    const auto out = gru.forward(Tensor<double>({1, 1, 1}, std::vector<double>{x}),
                                 Tensor<double>({1, 1}, std::vector<double>{h}));
    CHECK(out.outputs[0] == doctest::Approx(expected).epsilon(1e-14));
    CHECK(out.final_state[0] == out.outputs[0]);
  }
}

TEST_CASE("dense hand cases") {
  Dense<double> dense("d", 2, 2);
  dense.kernel.value = Tensor<double>({2, 2}, std::vector<double>{1, 0, 0, 1});
  const Tensor<double> x({1, 2}, std::vector<double>{1, 2});
  CHECK(dense.forward(x) == x);
  dense.bias.value.fill(1.0);
  const auto y = dense.forward(x);
  CHECK(y[0] == 2.0);
  CHECK(y[1] == 3.0);
}

TEST_CASE("softmax cross-entropy") {
  const auto uniform20 = softmax_cross_entropy(Tensor<double>({1, 20}, 0.3), {4});
  CHECK(std::abs(uniform20.loss - std::log(20.0)) < 1e-4);
  const auto half = softmax_cross_entropy(Tensor<double>({1, 2}, 0.0), {1});
  CHECK(std::abs(half.loss - 0.693147) < 1e-5);
  const auto sure = softmax_cross_entropy(Tensor<double>({1, 2}, std::vector<double>{-500.0, 500.0}), {1});
  CHECK(sure.loss < 1e-12);
  CHECK(std::isfinite(softmax_cross_entropy(Tensor<float>({1, 2}, std::vector<float>{-500.f, 500.f}), {0}).loss));
  const auto p = softmax(Tensor<double>({2, 3}, std::vector<double>{1, 2, 3, -1, 0, 1000}));
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
  CHECK(p[5] == doctest::Approx(1.0));
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor<double>({1, 2}), {2}), ShapeError);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter<double> p("p", {3});
    p.value.fill(0.5);
    Adam<double> adam({&p});
    adam.step();
    for (double v : p.value.data()) CHECK(v == 0.5);
    CHECK(adam.steps() == 1);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    Parameter<double> p("p", {2});
    p.grad[0] = 0.5;
    p.grad[1] = -0.5;
    Adam<double> adam({&p});
    CHECK(adam.config().lr == 1e-4);
    adam.step();
    CHECK(std::abs(p.value[0] + 1e-4) < 1e-9);
    CHECK(std::abs(p.value[1] - 1e-4) < 1e-9);
    adam.zero_grad();
    CHECK(p.grad[0] == 0.0);
  }
}

TEST_CASE("finite-difference checker") {
  SUBCASE("elu away from zero is accurate to 1e-6") {
    Elu<double> elu;
    Tensor<double> x({4}, std::vector<double>{-1.5, -0.4, 0.3, 2.0});
    auto loss = [&] {
      double s = 0;
      const auto y = elu.forward(x);
      for (double v : y.data()) s += v;
      return s;
    };
    loss();
    const auto dx = elu.backward(Tensor<double>({4}, 1.0));
    const auto r = finite_diff_check(loss, x.data(), dx.data(), 1e-6);
    CHECK(r.passed);
    CHECK(r.checked == 4);
  }
  SUBCASE("all layers on random shapes") {
    for (const auto& c : gradsuite::run_all(17, 2)) {
      INFO(c.layer << " " << c.shape << " rel=" << c.report.max_rel_error);
      CHECK(c.report.passed);
    }
  }
  SUBCASE("a doubled gradient fails") {
    CHECK_FALSE(gradsuite::negative_control(3).report.passed);
  }
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 1e-9) < 1e-2);
}
