#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "detail.hpp"

namespace histopipe::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_threads(int n) {
#ifdef _OPENMP
  if (n >= 1) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace omp {

namespace {
// Below this many elements the fork/join costs more than the loop.
constexpr std::ptrdiff_t kMinParallel = 1 << 14;
}  // namespace

void rgb_to_od(std::span<const std::uint8_t> rgb, double i0, std::span<double> od) {
  const detail::OdTable table(i0);
  const auto n = static_cast<std::ptrdiff_t>(rgb.size());
#pragma omp parallel for schedule(static) if (n >= kMinParallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) od[i] = table.od[rgb[i]];
}

void od_to_rgb(std::span<const double> od, double i0, std::span<std::uint8_t> rgb) {
  const auto n = static_cast<std::ptrdiff_t>(od.size());
#pragma omp parallel for schedule(static) if (n >= kMinParallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) rgb[i] = detail::intensity_from_od(od[i], i0);
}

void unmix(std::span<const std::uint8_t> rgb, const Mat23& pinv, double i0,
           std::span<double> conc) {
  const detail::OdTable table(i0);
  const auto n = static_cast<std::ptrdiff_t>(rgb.size() / 3);
#pragma omp parallel for schedule(static) if (n >= kMinParallel)
  for (std::ptrdiff_t p = 0; p < n; ++p) {
    detail::unmix_pixel(&rgb[3 * p], table, pinv, &conc[2 * p]);
  }
}

void remix(std::span<const double> conc, const std::array<double, 2>& scale, const Mat32& stains,
           double i0, std::span<std::uint8_t> rgb) {
  const auto n = static_cast<std::ptrdiff_t>(conc.size() / 2);
#pragma omp parallel for schedule(static) if (n >= kMinParallel)
  for (std::ptrdiff_t p = 0; p < n; ++p) {
    detail::remix_pixel(&conc[2 * p], scale, stains, i0, &rgb[3 * p]);
  }
}

void downscale_half(std::span<const std::uint8_t> src, int width, int height,
                    std::span<std::uint8_t> dst) {
  const int rows = height / 2;
#pragma omp parallel for schedule(static) if (static_cast<std::ptrdiff_t>(rows) * width >= kMinParallel)
  for (int y = 0; y < rows; ++y) detail::downscale_row(src.data(), width, y, dst.data());
}

void pnorm_pool(std::span<const double> rows, std::size_t num_rows, std::size_t len, double p,
                std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(len);
#pragma omp parallel for schedule(static) if (static_cast<std::ptrdiff_t>(num_rows) * n >= kMinParallel)
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    out[j] = detail::pnorm_column(rows.data(), num_rows, len, static_cast<std::size_t>(j), p);
  }
}

void build_histograms(BinnedView binned, std::span<const std::uint32_t> rows,
                      std::span<const double> grad, std::span<const double> hess,
                      std::span<const int> features, int num_bins, std::span<HistBin> out) {
  std::fill(out.begin(), out.end(), HistBin{});
  const auto nf = static_cast<std::ptrdiff_t>(features.size());
  const auto work = nf * static_cast<std::ptrdiff_t>(rows.size());
#pragma omp parallel for schedule(dynamic, 4) if (work >= kMinParallel)
  for (std::ptrdiff_t k = 0; k < nf; ++k) {
    detail::histogram_feature(binned, rows, grad, hess, features[k],
                              out.data() + k * static_cast<std::ptrdiff_t>(num_bins));
  }
}

}  // namespace omp
}  // namespace histopipe::kernels
