#include <algorithm>

#include "detail.hpp"

namespace histopipe::kernels::serial {

void rgb_to_od(std::span<const std::uint8_t> rgb, double i0, std::span<double> od) {
  const detail::OdTable table(i0);
  for (std::size_t i = 0; i < rgb.size(); ++i) od[i] = table.od[rgb[i]];
}

void od_to_rgb(std::span<const double> od, double i0, std::span<std::uint8_t> rgb) {
  for (std::size_t i = 0; i < od.size(); ++i) rgb[i] = detail::intensity_from_od(od[i], i0);
}

void unmix(std::span<const std::uint8_t> rgb, const Mat23& pinv, double i0,
           std::span<double> conc) {
  const detail::OdTable table(i0);
  const std::size_t n = rgb.size() / 3;
  for (std::size_t p = 0; p < n; ++p) detail::unmix_pixel(&rgb[3 * p], table, pinv, &conc[2 * p]);
}

void remix(std::span<const double> conc, const std::array<double, 2>& scale, const Mat32& stains,
           double i0, std::span<std::uint8_t> rgb) {
  const std::size_t n = conc.size() / 2;
  for (std::size_t p = 0; p < n; ++p) {
    detail::remix_pixel(&conc[2 * p], scale, stains, i0, &rgb[3 * p]);
  }
}

void downscale_half(std::span<const std::uint8_t> src, int width, int height,
                    std::span<std::uint8_t> dst) {
  for (int y = 0; y < height / 2; ++y) detail::downscale_row(src.data(), width, y, dst.data());
}

void pnorm_pool(std::span<const double> rows, std::size_t num_rows, std::size_t len, double p,
                std::span<double> out) {
  for (std::size_t j = 0; j < len; ++j) {
    out[j] = detail::pnorm_column(rows.data(), num_rows, len, j, p);
  }
}

void build_histograms(BinnedView binned, std::span<const std::uint32_t> rows,
                      std::span<const double> grad, std::span<const double> hess,
                      std::span<const int> features, int num_bins, std::span<HistBin> out) {
  std::fill(out.begin(), out.end(), HistBin{});
  for (std::size_t k = 0; k < features.size(); ++k) {
    detail::histogram_feature(binned, rows, grad, hess, features[k],
                              out.data() + k * static_cast<std::size_t>(num_bins));
  }
}

}  // namespace histopipe::kernels::serial
