// Serial reference kernels against their OpenMP counterparts.
// Run with --benchmark_filter=<kernel> to compare one pair; the second
// argument of the omp variants is the worker count.

#include <benchmark/benchmark.h>

#include <vector>

#include "histopipe/kernels.hpp"
#include "histopipe/rng.hpp"

namespace hk = histopipe::kernels;

namespace {

constexpr int kWidth = 1024;
constexpr int kHeight = 768;
constexpr std::size_t kPixels = static_cast<std::size_t>(kWidth) * kHeight;

const std::vector<std::uint8_t>& image_bytes() {
  static const std::vector<std::uint8_t> bytes = [] {
    histopipe::CounterRng rng(1);
    std::vector<std::uint8_t> v(kPixels * 3);
    for (auto& b : v) b = static_cast<std::uint8_t>(40 + rng.below(216));
    return v;
  }();
  return bytes;
}

hk::Mat23 pinv() {
  hk::Mat23 p;
  p.row[0] = {1.88, -0.07, -0.60};
  p.row[1] = {-1.02, 1.13, -0.48};
  return p;
}

hk::Mat32 stains() {
  hk::Mat32 m;
  m.col[0] = {0.650, 0.704, 0.286};
  m.col[1] = {0.072, 0.990, 0.105};
  return m;
}

template <bool Parallel>
void BM_rgb_to_od(benchmark::State& state) {
  if constexpr (Parallel) hk::set_max_threads(static_cast<int>(state.range(0)));
  std::vector<double> od(kPixels * 3);
  for (auto _ : state) {
    if constexpr (Parallel) hk::omp::rgb_to_od(image_bytes(), 255.0, od);
    else hk::serial::rgb_to_od(image_bytes(), 255.0, od);
    benchmark::DoNotOptimize(od.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kPixels));
}

template <bool Parallel>
void BM_unmix_remix(benchmark::State& state) {
  if constexpr (Parallel) hk::set_max_threads(static_cast<int>(state.range(0)));
  std::vector<double> conc(kPixels * 2);
  std::vector<std::uint8_t> out(kPixels * 3);
  for (auto _ : state) {
    if constexpr (Parallel) {
      hk::omp::unmix(image_bytes(), pinv(), 255.0, conc);
      hk::omp::remix(conc, {1.1, 0.9}, stains(), 255.0, out);
    } else {
      hk::serial::unmix(image_bytes(), pinv(), 255.0, conc);
      hk::serial::remix(conc, {1.1, 0.9}, stains(), 255.0, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kPixels));
}

template <bool Parallel>
void BM_downscale(benchmark::State& state) {
  if constexpr (Parallel) hk::set_max_threads(static_cast<int>(state.range(0)));
  std::vector<std::uint8_t> out(kPixels * 3 / 4);
  for (auto _ : state) {
    if constexpr (Parallel) hk::omp::downscale_half(image_bytes(), kWidth, kHeight, out);
    else hk::serial::downscale_half(image_bytes(), kWidth, kHeight, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_pnorm_pool(benchmark::State& state) {
  if constexpr (Parallel) hk::set_max_threads(static_cast<int>(state.range(0)));
  // 20 crops of a 2048-wide descriptor, as pooled per augmentation.
  constexpr std::size_t rows = 20, len = 2048;
  histopipe::CounterRng rng(2);
  std::vector<double> data(rows * len);
  for (auto& v : data) v = rng.uniform(0.0, 4.0);
  std::vector<double> out(len);
  for (auto _ : state) {
    if constexpr (Parallel) hk::omp::pnorm_pool(data, rows, len, 3.0, out);
    else hk::serial::pnorm_pool(data, rows, len, 3.0, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_histograms(benchmark::State& state) {
  if constexpr (Parallel) hk::set_max_threads(static_cast<int>(state.range(0)));
  constexpr std::size_t n = 18000;
  constexpr int nf = 2048, num_bins = 255;
  histopipe::CounterRng rng(3);
  std::vector<std::uint8_t> bins(n * nf);
  for (auto& b : bins) b = static_cast<std::uint8_t>(rng.below(num_bins));
  std::vector<double> grad(n), hess(n, 0.2);
  for (auto& g : grad) g = rng.uniform(-1.0, 1.0);
  std::vector<std::uint32_t> rows;
  for (std::uint32_t r = 0; r < n; r += 2) rows.push_back(r);
  std::vector<int> features;
  for (int f = 0; f < nf; f += 5) features.push_back(f);
  std::vector<hk::HistBin> out(features.size() * num_bins);
  const hk::BinnedView view{bins, n};
  for (auto _ : state) {
    if constexpr (Parallel) hk::omp::build_histograms(view, rows, grad, hess, features, num_bins, out);
    else hk::serial::build_histograms(view, rows, grad, hess, features, num_bins, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void thread_args(benchmark::internal::Benchmark* b) {
  for (const int t : {1, 2, 4, 8}) b->Arg(t);
  b->UseRealTime();
}

}  // namespace

BENCHMARK(BM_rgb_to_od<false>)->UseRealTime();
BENCHMARK(BM_rgb_to_od<true>)->Apply(thread_args);
BENCHMARK(BM_unmix_remix<false>)->UseRealTime();
BENCHMARK(BM_unmix_remix<true>)->Apply(thread_args);
BENCHMARK(BM_downscale<false>)->UseRealTime();
BENCHMARK(BM_downscale<true>)->Apply(thread_args);
BENCHMARK(BM_pnorm_pool<false>)->UseRealTime();
BENCHMARK(BM_pnorm_pool<true>)->Apply(thread_args);
BENCHMARK(BM_histograms<false>)->UseRealTime();
BENCHMARK(BM_histograms<true>)->Apply(thread_args);

BENCHMARK_MAIN();
