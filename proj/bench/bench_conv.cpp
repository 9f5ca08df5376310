// Parallel vs serial reference convolution on the network's layer shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "hcdg/common.hpp"
#include "hcdg/kernels.hpp"

using hcdg::kernels::ConvShape;

namespace {

// (in_channels, out_channels, side, stride) of representative layers at 64x64.
const int kLayers[][4] = {{3, 8, 64, 1}, {8, 16, 64, 2}, {16, 32, 32, 2}, {32, 32, 16, 2}, {32, 16, 16, 1}, {16, 8, 32, 1}};

struct Buffers {
  ConvShape s;
  std::vector<double> x, w, b, out, dout, dx, dw, db;
};

Buffers make(const benchmark::State& state) {
  const auto* l = kLayers[state.range(0)];
  Buffers buf;
  buf.s.batch = static_cast<int>(state.range(1));
  buf.s.in_channels = l[0];
  buf.s.out_channels = l[1];
  buf.s.in_h = buf.s.in_w = l[2];
  buf.s.stride = l[3];
  hcdg::Rng rng(1);
  auto fill = [&rng](std::vector<double>& v, size_t n) {
    v.resize(n);
    for (auto& e : v) e = rng.uniform(-1, 1);
  };
  const auto& s = buf.s;
  const size_t out_n = static_cast<size_t>(s.batch) * s.out_channels * s.out_h() * s.out_w();
  fill(buf.x, static_cast<size_t>(s.batch) * s.in_channels * s.in_h * s.in_w);
  fill(buf.w, static_cast<size_t>(s.out_channels) * s.patch());
  fill(buf.b, s.out_channels);
  fill(buf.dout, out_n);
  buf.out.assign(out_n, 0.0);
  buf.dx.assign(buf.x.size(), 0.0);
  buf.dw.assign(buf.w.size(), 0.0);
  buf.db.assign(buf.b.size(), 0.0);
  return buf;
}

void set_counters(benchmark::State& state, const ConvShape& s) {
  const double flops = 2.0 * s.batch * s.out_channels * s.out_h() * s.out_w() * s.patch();
  state.counters["GFLOP/s"] = benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

template <auto Fn>
void forward(benchmark::State& state) {
  auto buf = make(state);
  for (auto _ : state) {
    Fn(buf.s, buf.x, buf.w, buf.b, buf.out);
    benchmark::DoNotOptimize(buf.out.data());
  }
  set_counters(state, buf.s);
}

template <auto Fn>
void backward(benchmark::State& state) {
  auto buf = make(state);
  for (auto _ : state) {
    Fn(buf.s, buf.x, buf.w, buf.dout, buf.dx, buf.dw, buf.db);
    benchmark::DoNotOptimize(buf.dx.data());
  }
  set_counters(state, buf.s);
}

void layer_args(benchmark::internal::Benchmark* b) {
  for (int l = 0; l < 6; ++l)
    for (int n : {3, 25}) b->Args({l, n});
  b->ArgNames({"layer", "batch"})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(forward<hcdg::kernels::parallel::conv2d_forward>)->Name("forward/parallel")->Apply(layer_args);
BENCHMARK(forward<hcdg::kernels::reference::conv2d_forward>)->Name("forward/reference")->Apply(layer_args);
BENCHMARK(backward<hcdg::kernels::parallel::conv2d_backward>)->Name("backward/parallel")->Apply(layer_args);
BENCHMARK(backward<hcdg::kernels::reference::conv2d_backward>)->Name("backward/reference")->Apply(layer_args);

BENCHMARK_MAIN();
