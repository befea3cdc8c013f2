// Parallel kernels against the serial reference implementations they are
// tested against.

#include <benchmark/benchmark.h>

#include <vector>

#include "artistid/dsp.hpp"
#include "artistid/kernels.hpp"
#include "artistid/layers.hpp"
#include "artistid/memory.hpp"

using namespace artistid;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(uniform(rng, -1.0, 1.0));
  return v;
}

kernels::Conv2dShape conv_shape(const benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  return {4, c, c, 32, 47, 3, 3};
}

template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
  const auto s = conv_shape(state);
  const auto x = noise(s.input_size(), 1), k = noise(s.kernel_size(), 2), b = noise(s.c_out, 3);
  std::vector<float> y(s.output_size());
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::conv2d_forward(s, x.data(), k.data(), b.data(), y.data());
    } else {
      kernels::conv2d_forward(s, x.data(), k.data(), b.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * s.output_size() * s.c_in * 9));
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& state) {
  const auto s = conv_shape(state);
  const auto x = noise(s.input_size(), 1), k = noise(s.kernel_size(), 2), dy = noise(s.output_size(), 3);
  std::vector<float> dx(s.input_size()), dk(s.kernel_size()), db(s.c_out);
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::conv2d_backward(s, x.data(), k.data(), dy.data(), dx.data(), dk.data(), db.data());
    } else {
      kernels::conv2d_backward(s, x.data(), k.data(), dy.data(), dx.data(), dk.data(), db.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Serial>
void BM_Stft(benchmark::State& state) {
  DspParams params;
  Waveform wave;
  wave.sample_rate = params.sample_rate;
  wave.samples = noise(static_cast<std::size_t>(state.range(0) * params.sample_rate), 4);
  for (auto _ : state) {
    auto p = Serial ? stft_power_serial(wave, params) : stft_power(wave, params);
    benchmark::DoNotOptimize(p.data());
  }
}

Tensor<float> block_input() {
  Tensor<float> x({8, 64, 128, 93}, uninitialized);
  const auto v = noise(x.size(), 5);
  std::copy(v.begin(), v.end(), x.raw());
  return x;
}

void BM_BlockSeparate(benchmark::State& state) {
  const auto x = block_input();
  BatchNorm2d<float> bn("bn", 64);
  Elu<float> elu;
  MaxPool2d<float> pool(4, 2);
  for (auto _ : state) {
    auto y = pool.forward(elu.forward(bn.forward(x, Mode::train)));
    auto dx = bn.backward(elu.backward(pool.backward(y)));
    benchmark::DoNotOptimize(dx.raw());
  }
}

void BM_BlockFused(benchmark::State& state) {
  const auto x = block_input();
  NormEluPool<float> fused("bn", 64, 4, 2);
  for (auto _ : state) {
    auto y = fused.forward(x, Mode::train);
    auto dx = fused.backward(y);
    benchmark::DoNotOptimize(dx.raw());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/parallel")->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/reference")->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/parallel")->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/reference")->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Stft<false>)->Name("stft/parallel")->Arg(30)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Stft<true>)->Name("stft/serial")->Arg(30)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BlockSeparate)->Name("norm_elu_pool/separate")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BlockFused)->Name("norm_elu_pool/fused")->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  retain_freed_memory();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
