#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histopipe/features.hpp"

namespace histopipe::store {

inline constexpr char kStoreMagic[9] = "HPDESC01";

/// JSON header of a descriptor store. Rows are ordered (image, augmentation).
struct StoreHeader {
  std::string encoder_id;
  int crop_size = 0;
  std::size_t descriptor_len = 0;
  std::vector<std::string> image_ids;
  int augmentation_count = 0;
  /// "half" for crops of the downscaled image, "full" for the original scale.
  std::string scale = "half";
  /// Hash of every setting that influenced the values; a mismatch means stale.
  std::string config_fingerprint;
  /// FNV-1a of the float payload, hex.
  std::string payload_checksum;

  std::size_t rows() const noexcept { return image_ids.size() * static_cast<std::size_t>(augmentation_count); }
};

/// All descriptors of one (encoder, crop size) pair, stored as 32-bit floats.
class DescriptorStore {
 public:
  DescriptorStore() = default;
  explicit DescriptorStore(StoreHeader header);

  const StoreHeader& header() const noexcept { return header_; }
  std::size_t rows() const noexcept { return header_.rows(); }
  std::size_t cols() const noexcept { return header_.descriptor_len; }

  std::span<const float> row(std::size_t image_index, int augmentation) const;
  std::span<float> row(std::size_t image_index, int augmentation);
  std::span<const float> values() const noexcept { return values_; }

  /// Index of `image_id` in the header, or nullopt.
  std::optional<std::size_t> image_index(const std::string& image_id) const;

  void set_row(std::size_t image_index, int augmentation, std::span<const double> values);

  /// Recomputes header().payload_checksum from the values.
  void seal();

 private:
  StoreHeader header_;
  std::vector<float> values_;
};

std::string store_filename(const std::string& encoder_id, int crop_size);

std::vector<char> serialize_store(const DescriptorStore& store);
/// Throws CorruptStore on bad magic or header, PartialStore on a truncated
/// payload or checksum mismatch.
DescriptorStore deserialize_store(std::span<const char> bytes);

void write_store(const std::filesystem::path& path, const DescriptorStore& store);
DescriptorStore read_store(const std::filesystem::path& path);

}  // namespace histopipe::store
