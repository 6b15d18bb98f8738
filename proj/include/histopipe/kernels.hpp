#pragma once

// Data-parallel inner loops. Every kernel exists twice: `serial` is the
// reference implementation used by tests and benchmarks, `omp` is the
// OpenMP version called by the library. The two must agree bit for bit:
// parallel loops only split independent outputs, never a reduction.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace histopipe::kernels {

/// 3×2 matrix, column-major: col[j][i] is row i of column j.
struct Mat32 {
  std::array<std::array<double, 3>, 2> col{};
};

/// 2×3 matrix, row-major.
struct Mat23 {
  std::array<std::array<double, 3>, 2> row{};
};

/// One histogram cell of the GBDT split search.
struct HistBin {
  double grad = 0.0;
  double hess = 0.0;
  std::uint32_t count = 0;
};

/// Column-major quantized feature matrix: bins[f * num_rows + r].
struct BinnedView {
  std::span<const std::uint8_t> bins;
  std::size_t num_rows = 0;
};

#define HISTOPIPE_KERNEL_DECLS                                                                   \
  /* od = -log10(max(I,1)/i0), floored at 0; one value per channel */                           \
  void rgb_to_od(std::span<const std::uint8_t> rgb, double i0, std::span<double> od);            \
  /* I = round(i0 * 10^-od), clamped to [0, 255] */                                              \
  void od_to_rgb(std::span<const double> od, double i0, std::span<std::uint8_t> rgb);            \
  /* per pixel c = max(pinv * od, 0); conc has 2 values per pixel */                             \
  void unmix(std::span<const std::uint8_t> rgb, const Mat23& pinv, double i0,                   \
             std::span<double> conc);                                                            \
  /* per pixel od = stains * (scale .* c), then od_to_rgb */                                     \
  void remix(std::span<const double> conc, const std::array<double, 2>& scale,                 \
             const Mat32& stains, double i0, std::span<std::uint8_t> rgb);                      \
  /* 2x2 block mean, rounded half up; width and height must be even */                           \
  void downscale_half(std::span<const std::uint8_t> src, int width, int height,                 \
                      std::span<std::uint8_t> dst);                                             \
  /* out[j] = ((1/N) sum_i rows[i*len + j]^p)^(1/p); rows summed in index order */              \
  void pnorm_pool(std::span<const double> rows, std::size_t num_rows, std::size_t len,          \
                  double p, std::span<double> out);                                              \
  /* out[k*num_bins + b] accumulates (g, h, 1) over `rows` for features[k] */                    \
  void build_histograms(BinnedView binned, std::span<const std::uint32_t> rows,                 \
                        std::span<const double> grad, std::span<const double> hess,             \
                        std::span<const int> features, int num_bins, std::span<HistBin> out);

namespace serial {
HISTOPIPE_KERNEL_DECLS
}  // namespace serial

namespace omp {
HISTOPIPE_KERNEL_DECLS
}  // namespace omp

#undef HISTOPIPE_KERNEL_DECLS

/// Number of OpenMP workers the `omp` kernels will use (1 without OpenMP).
int max_threads();
/// Caps the worker count for subsequent parallel regions; n < 1 is ignored.
void set_max_threads(int n);

}  // namespace histopipe::kernels
