// Parallel kernels against their serial references at model-like sizes.
// Arg 0 selects the implementation: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "makgcn/kernels.hpp"

namespace k = makgcn::kernels;

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> d(-1.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

void label(benchmark::State& state) { state.SetLabel(state.range(0) ? "parallel" : "serial"); }

// Edge-feature 1x1 convolution of a mid-network stage: 16 clouds, 960 points,
// 20 neighbours, 128 -> 64 channels.
void BM_LinearForward(benchmark::State& state) {
  const std::size_t b = 16, ci = 128, co = 64, m = 960 * 20 / 8;
  const auto x = noise(b * ci * m, 1), w = noise(co * ci, 2);
  std::vector<float> out(b * co * m);
  for (auto _ : state) {
    if (state.range(0)) k::linear_forward<float>(b, ci, co, m, x.data(), w.data(), nullptr, out.data());
    else k::serial::linear_forward<float>(b, ci, co, m, x.data(), w.data(), nullptr, out.data());
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

void BM_NeighbourSearch(benchmark::State& state) {
  const std::size_t b = 8, c = 3, n = 960, kk = 20;
  const auto x = noise(b * c * n, 3);
  std::vector<float> sim(b * n * n);
  std::vector<std::int64_t> idx(b * n * kk);
  for (auto _ : state) {
    if (state.range(0)) {
      k::pairwise_similarity<float>(b, c, n, x.data(), sim.data());
      k::topk_rows<float>(b, n, kk, sim.data(), idx.data());
    } else {
      k::serial::pairwise_similarity<float>(b, c, n, x.data(), sim.data());
      k::serial::topk_rows<float>(b, n, kk, sim.data(), idx.data());
    }
    benchmark::DoNotOptimize(idx.data());
  }
  label(state);
}

void BM_DynamicFilter(benchmark::State& state) {
  k::DynamicFilterDims d;
  d.batch = 4;
  d.positions = 960 * 20;
  d.mid = 8;
  d.c_in = 6;
  d.c_out = 64;
  d.heads = 2;
  const auto y1 = noise(d.batch * d.mid * d.positions, 4), x = noise(d.batch * d.c_in * d.positions, 5);
  const auto w1 = noise(d.kernel_channels() * d.mid, 6), b1 = noise(d.kernel_channels(), 7);
  std::vector<float> out(d.batch * d.c_out * d.positions);
  for (auto _ : state) {
    if (state.range(0)) k::dynamic_filter_forward<float>(d, y1.data(), x.data(), w1.data(), b1.data(), out.data());
    else k::serial::dynamic_filter_forward<float>(d, y1.data(), x.data(), w1.data(), b1.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

void BM_DynamicFilterBackward(benchmark::State& state) {
  k::DynamicFilterDims d;
  d.batch = 4;
  d.positions = 960 * 20;
  d.mid = 8;
  d.c_in = 6;
  d.c_out = 64;
  d.heads = 2;
  const auto y1 = noise(d.batch * d.mid * d.positions, 4), x = noise(d.batch * d.c_in * d.positions, 5);
  const auto w1 = noise(d.kernel_channels() * d.mid, 6), b1 = noise(d.kernel_channels(), 7);
  const auto g = noise(d.batch * d.c_out * d.positions, 8);
  std::vector<float> gy(y1.size()), gx(x.size()), gw(w1.size()), gb(b1.size());
  for (auto _ : state) {
    if (state.range(0)) {
      k::dynamic_filter_backward<float>(d, y1.data(), x.data(), w1.data(), b1.data(), g.data(), gy.data(), gx.data(),
                                        gw.data(), gb.data());
    } else {
      k::serial::dynamic_filter_backward<float>(d, y1.data(), x.data(), w1.data(), b1.data(), g.data(), gy.data(),
                                                gx.data(), gw.data(), gb.data());
    }
    benchmark::DoNotOptimize(gw.data());
  }
  label(state);
}

void BM_EdgeGather(benchmark::State& state) {
  const std::size_t b = 8, c = 64, n = 960, kk = 20;
  const auto x = noise(b * c * n, 9);
  std::vector<std::int64_t> idx(b * n * kk);
  std::mt19937 gen(10);
  for (auto& i : idx) i = static_cast<std::int64_t>(gen() % n);
  std::vector<float> out(b * 2 * c * n * kk);
  for (auto _ : state) {
    if (state.range(0)) k::gather_edge_features<float>(b, c, n, kk, x.data(), idx.data(), out.data());
    else k::serial::gather_edge_features<float>(b, c, n, kk, x.data(), idx.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

}  // namespace

BENCHMARK(BM_LinearForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_NeighbourSearch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DynamicFilter)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DynamicFilterBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EdgeGather)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
