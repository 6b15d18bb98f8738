#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "histopipe/kernels.hpp"

namespace histopipe::kernels::detail {

inline constexpr double kLn10 = 2.302585092994045684017991454684364208;

struct OdTable {
  std::array<double, 256> od{};

  explicit OdTable(double i0) {
    for (int v = 0; v < 256; ++v) {
      const double clamped = std::min<double>(std::max(v, 1), i0);
      od[v] = std::max(0.0, -std::log10(clamped / i0));
    }
  }
};

inline std::uint8_t intensity_from_od(double od, double i0) {
  const double value = std::round(i0 * std::exp(-od * kLn10));
  return static_cast<std::uint8_t>(std::clamp(value, 0.0, 255.0));
}

inline void unmix_pixel(const std::uint8_t* px, const OdTable& table, const Mat23& pinv,
                        double* c) {
  const double r = table.od[px[0]];
  const double g = table.od[px[1]];
  const double b = table.od[px[2]];
  for (int k = 0; k < 2; ++k) {
    const double v = pinv.row[k][0] * r + pinv.row[k][1] * g + pinv.row[k][2] * b;
    c[k] = v > 0.0 ? v : 0.0;
  }
}

inline void remix_pixel(const double* c, const std::array<double, 2>& scale, const Mat32& stains,
                        double i0, std::uint8_t* px) {
  const double ch = c[0] * scale[0];
  const double ce = c[1] * scale[1];
  for (int i = 0; i < 3; ++i) {
    const double od = stains.col[0][i] * ch + stains.col[1][i] * ce;
    px[i] = intensity_from_od(od, i0);
  }
}

inline void downscale_row(const std::uint8_t* src, int width, int y, std::uint8_t* dst) {
  const int out_w = width / 2;
  const std::size_t stride = static_cast<std::size_t>(width) * 3;
  const std::uint8_t* top = src + static_cast<std::size_t>(2 * y) * stride;
  const std::uint8_t* bottom = top + stride;
  std::uint8_t* out = dst + static_cast<std::size_t>(y) * out_w * 3;
  for (int x = 0; x < out_w; ++x) {
    for (int c = 0; c < 3; ++c) {
      const unsigned sum = top[6 * x + c] + top[6 * x + 3 + c] + bottom[6 * x + c] +
                           bottom[6 * x + 3 + c];
      out[3 * x + c] = static_cast<std::uint8_t>((sum + 2) / 4);
    }
  }
}

inline double pnorm_column(const double* rows, std::size_t num_rows, std::size_t len,
                           std::size_t j, double p) {
  double acc = 0.0;
  if (p == 1.0) {
    for (std::size_t i = 0; i < num_rows; ++i) acc += rows[i * len + j];
    return acc / static_cast<double>(num_rows);
  }
  if (p == 3.0) {
    for (std::size_t i = 0; i < num_rows; ++i) {
      const double v = rows[i * len + j];
      acc += v * v * v;
    }
    return std::cbrt(acc / static_cast<double>(num_rows));
  }
  for (std::size_t i = 0; i < num_rows; ++i) acc += std::pow(rows[i * len + j], p);
  const double mean = acc / static_cast<double>(num_rows);
  // Odd integer powers keep the sign, so the root must too.
  if (mean < 0.0) return -std::pow(-mean, 1.0 / p);
  return std::pow(mean, 1.0 / p);
}

inline void histogram_feature(BinnedView binned, std::span<const std::uint32_t> rows,
                              std::span<const double> grad, std::span<const double> hess,
                              int feature, HistBin* out) {
  const std::uint8_t* col = binned.bins.data() + static_cast<std::size_t>(feature) * binned.num_rows;
  for (const std::uint32_t r : rows) {
    HistBin& cell = out[col[r]];
    cell.grad += grad[r];
    cell.hess += hess[r];
    ++cell.count;
  }
}

}  // namespace histopipe::kernels::detail
