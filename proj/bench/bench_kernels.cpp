// Serial reference kernels against the OpenMP/GEMM versions on layer shapes
// of the default model (base width 16, 32^3 patches, batch 2).

#include <random>

#include <benchmark/benchmark.h>

#include "mmunet/kernels.hpp"

using namespace mmunet;
using namespace mmunet::kernels;

namespace {

std::vector<Real> random_vec(std::size_t n, std::uint64_t seed, Real lo = -1, Real hi = 1) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<Real> dist(lo, hi);
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(eng);
  return v;
}

ConvGeometry conv_geo(std::size_t ch_in, std::size_t ch_out, std::size_t extent, std::size_t k, std::size_t s) {
  ConvGeometry g;
  g.batch = 2;
  g.in_ch = ch_in;
  g.out_ch = ch_out;
  g.in = {extent, extent, extent};
  g.kernel = {k, k, k};
  g.stride = {s, s, s};
  const std::size_t p = k == s ? 0 : k / 2;
  g.pad = {p, p, p};
  g.out = conv_output_extent(g.in, g.kernel, g.stride, g.pad);
  return g;
}

// Args: in channels, out channels, extent, kernel, stride.
ConvGeometry conv_args(const benchmark::State& st) {
  return conv_geo(st.range(0), st.range(1), st.range(2), st.range(3), st.range(4));
}

template <bool Serial>
void BM_ConvForward(benchmark::State& st) {
  const auto g = conv_args(st);
  const auto x = random_vec(g.batch * g.in_ch * g.in_volume(), 1);
  const auto w = random_vec(g.out_ch * g.in_ch * g.kernel_volume(), 2);
  std::vector<Real> y(g.batch * g.out_ch * g.out_volume());
  for (auto _ : st) {
    if constexpr (Serial)
      serial::conv3d_forward(g, x.data(), w.data(), nullptr, y.data());
    else
      conv3d_forward(g, x.data(), w.data(), nullptr, y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Serial>
void BM_ConvBackward(benchmark::State& st) {
  const auto g = conv_args(st);
  const auto x = random_vec(g.batch * g.in_ch * g.in_volume(), 1);
  const auto w = random_vec(g.out_ch * g.in_ch * g.kernel_volume(), 2);
  const auto gy = random_vec(g.batch * g.out_ch * g.out_volume(), 3);
  std::vector<Real> gx(x.size()), gw(w.size()), gb(g.out_ch);
  for (auto _ : st) {
    if constexpr (Serial) {
      serial::conv3d_backward_input(g, gy.data(), w.data(), gx.data());
      serial::conv3d_backward_weight(g, gy.data(), x.data(), gw.data(), gb.data());
    } else {
      conv3d_backward_input(g, gy.data(), w.data(), gx.data());
      conv3d_backward_weight(g, gy.data(), x.data(), gw.data(), gb.data());
    }
    benchmark::DoNotOptimize(gx.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

// Args: channels in (fine), channels out, coarse extent. Kernel = stride = 2.
template <bool Serial>
void BM_ConvTranspose(benchmark::State& st) {
  ConvGeometry g;
  g.batch = 2;
  g.in_ch = st.range(0);
  g.out_ch = st.range(1);
  const std::size_t e = st.range(2);
  g.in = {e, e, e};
  g.kernel = g.stride = {2, 2, 2};
  g.out = conv_transpose_output_extent(g.in, g.kernel, g.stride);
  const auto x = random_vec(g.batch * g.in_ch * g.in_volume(), 1);
  const auto w = random_vec(g.in_ch * g.out_ch * g.kernel_volume(), 2);
  const auto gy = random_vec(g.batch * g.out_ch * g.out_volume(), 3);
  std::vector<Real> y(gy.size()), gx(x.size()), gw(w.size()), gb(g.out_ch);
  for (auto _ : st) {
    if constexpr (Serial) {
      serial::conv_transpose3d_forward(g, x.data(), w.data(), nullptr, y.data());
      serial::conv_transpose3d_backward_input(g, gy.data(), w.data(), gx.data());
      serial::conv_transpose3d_backward_weight(g, gy.data(), x.data(), gw.data(), gb.data());
    } else {
      conv_transpose3d_forward(g, x.data(), w.data(), nullptr, y.data());
      conv_transpose3d_backward_input(g, gy.data(), w.data(), gx.data());
      conv_transpose3d_backward_weight(g, gy.data(), x.data(), gw.data(), gb.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

struct ScanData {
  ScanGeometry g;
  std::vector<Real> u, delta, b, c, a, gy;

  explicit ScanData(const benchmark::State& st) {
    g.batch = 2;
    g.channels = st.range(0);
    g.length = st.range(1);
    g.state = st.range(2);
    g.segment = g.length;
    const std::size_t bcl = g.batch * g.channels * g.length, bnl = g.batch * g.state * g.length;
    u = random_vec(bcl, 1);
    delta = random_vec(bcl, 2, Real(1e-3), Real(0.1));
    b = random_vec(bnl, 3);
    c = random_vec(bnl, 4);
    a = random_vec(g.channels * g.state, 5, Real(-4), Real(-0.5));
    gy = random_vec(bcl, 6);
  }
  ScanInputs inputs() const { return {u.data(), delta.data(), b.data(), c.data(), a.data()}; }
};

// Args: channels, length, state.
template <bool Serial>
void BM_ScanForward(benchmark::State& st) {
  const ScanData d(st);
  std::vector<Real> y(d.u.size());
  for (auto _ : st) {
    if constexpr (Serial)
      serial::selective_scan_forward(d.g, d.inputs(), y.data());
    else
      selective_scan_forward(d.g, d.inputs(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

// Forward plus backward, as one training step runs them.
template <bool Serial>
void BM_ScanTrain(benchmark::State& st) {
  const ScanData d(st);
  std::vector<Real> y(d.u.size()), gu(d.u.size()), gd(d.u.size()), gb(d.b.size()), gc(d.c.size()), ga(d.a.size());
  const ScanGrads grads{gu.data(), gd.data(), gb.data(), gc.data(), ga.data()};
  for (auto _ : st) {
    if constexpr (Serial) {
      serial::selective_scan_forward(d.g, d.inputs(), y.data());
      serial::selective_scan_backward(d.g, d.inputs(), d.gy.data(), grads);
    } else {
      ScanTape tape;
      selective_scan_forward(d.g, d.inputs(), y.data(), &tape);
      selective_scan_backward(d.g, d.inputs(), d.gy.data(), grads, &tape);
    }
    benchmark::DoNotOptimize(gu.data());
  }
}

void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({16, 16, 32, 3, 1})->Args({32, 32, 16, 3, 1})->Args({64, 64, 8, 3, 1})->Args({16, 32, 32, 2, 2});
  b->ArgNames({"cin", "cout", "extent", "k", "s"})->Unit(benchmark::kMillisecond);
}

void transpose_shapes(benchmark::internal::Benchmark* b) {
  b->Args({32, 16, 16})->Args({64, 32, 8})->ArgNames({"cin", "cout", "extent"})->Unit(benchmark::kMillisecond);
}

void scan_shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 512, 16})->Args({128, 64, 16})->ArgNames({"ch", "len", "state"})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Name("conv3d_forward/serial")->Apply(conv_shapes);
BENCHMARK(BM_ConvForward<false>)->Name("conv3d_forward/omp")->Apply(conv_shapes);
BENCHMARK(BM_ConvBackward<true>)->Name("conv3d_backward/serial")->Apply(conv_shapes);
BENCHMARK(BM_ConvBackward<false>)->Name("conv3d_backward/omp")->Apply(conv_shapes);
BENCHMARK(BM_ConvTranspose<true>)->Name("conv_transpose3d/serial")->Apply(transpose_shapes);
BENCHMARK(BM_ConvTranspose<false>)->Name("conv_transpose3d/omp")->Apply(transpose_shapes);
BENCHMARK(BM_ScanForward<true>)->Name("selective_scan_forward/serial")->Apply(scan_shapes);
BENCHMARK(BM_ScanForward<false>)->Name("selective_scan_forward/omp")->Apply(scan_shapes);
BENCHMARK(BM_ScanTrain<true>)->Name("selective_scan_train/serial")->Apply(scan_shapes);
BENCHMARK(BM_ScanTrain<false>)->Name("selective_scan_train/omp")->Apply(scan_shapes);

BENCHMARK_MAIN();
