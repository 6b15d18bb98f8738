#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace histopipe {

/// 8-bit interleaved RGB raster, row-major, channel order R, G, B.
class RgbImage {
 public:
  static constexpr int kChannels = 3;

  RgbImage() = default;
  RgbImage(int width, int height, std::uint8_t fill = 0);
  RgbImage(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t& at(int x, int y, int c) {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }

  std::span<std::uint8_t> data() noexcept { return pixels_; }
  std::span<const std::uint8_t> data() const noexcept { return pixels_; }

  /// Copy of the w×h window whose top-left corner is (x, y).
  RgbImage crop(int x, int y, int w, int h) const;

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Per-pixel 3-channel optical densities, same layout as RgbImage.
struct OdImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
};

/// Per-pixel (hematoxylin, eosin) concentrations, interleaved.
struct ConcentrationMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
};

RgbImage flip_horizontal(const RgbImage& img);
RgbImage flip_vertical(const RgbImage& img);
/// Rotates counter-clockwise by k quarter turns; k is taken modulo 4.
RgbImage rotate90(const RgbImage& img, int k);

/// Lossless image I/O. Any format OpenCV decodes is accepted on read; alpha
/// and grayscale inputs are converted to RGB. Throws Error(UnreadableImage).
RgbImage read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace histopipe
