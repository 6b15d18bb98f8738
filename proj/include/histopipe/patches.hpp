#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "histopipe/image.hpp"
#include "histopipe/label.hpp"

namespace histopipe::patches {

struct ImageRecord {
  std::string image_id;
  Label label = Label::Normal;
  std::filesystem::path source_path;
  /// Filled when the manifest was loaded with `keep_pixels`; otherwise use load().
  std::optional<RgbImage> pixels;

  RgbImage load() const;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::array<std::size_t, kNumClasses> class_counts{};

  const ImageRecord* find(const std::string& image_id) const;
};

/// Reads `labels_file` (header `image_id,filename,label`); filenames resolve
/// against `root`. Every image is decoded once to prove it is readable.
DatasetManifest load_dataset(const std::filesystem::path& root,
                             const std::filesystem::path& labels_file, bool keep_pixels = false);

/// 2×2 block mean, rounded half up. Throws OddDimensions.
RgbImage downscale_half(const RgbImage& img);

struct CropSpec {
  std::vector<int> sizes{400, 650};
  int crops_per_size = 20;
  std::uint64_t seed = 0;
};

struct Crop {
  RgbImage pixels;
  int x = 0;
  int y = 0;
  int size = 0;
  int ordinal = 0;
  std::string image_id;
  int augmentation_index = 0;
};

struct Origin {
  int x = 0;
  int y = 0;
  friend bool operator==(const Origin&, const Origin&) = default;
};

/// Origin of one crop; a pure function of its key, so crops can be drawn in
/// any order.
Origin crop_origin(int image_width, int image_height, int size, std::uint64_t seed,
                   const std::string& image_id, int augmentation_index, int ordinal);

/// `crops_per_size` crops for every size, grouped by size in spec order.
/// Throws CropLargerThanImage.
std::vector<Crop> extract_random_crops(const RgbImage& img, const CropSpec& spec,
                                       const std::string& image_id, int augmentation_index);

}  // namespace histopipe::patches
