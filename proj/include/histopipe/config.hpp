#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "histopipe/boosting.hpp"
#include "histopipe/features.hpp"

namespace histopipe::pipeline {

struct PipelineConfig {
  std::filesystem::path dataset_root;
  std::filesystem::path labels_file;
  std::vector<std::filesystem::path> test_images;
  std::filesystem::path output_dir = "artifacts";

  std::vector<features::EncoderSpec> encoders;
  features::ExtractionOptions extraction;
  int k = 10;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  boosting::GbdtParams gbdt;
  /// Master seed: crops, augmentations, folds and GBDT subsampling derive from it.
  std::uint64_t seed = 0;
  std::vector<double> setpoints{0.33, 0.50};

  /// Throws ConfigError.
  void validate() const;
  /// Pushes the master seed into the nested option structs.
  void apply_seed(std::uint64_t master);
  std::vector<int> crop_sizes() const { return features::all_crop_sizes(extraction); }
  /// Expected number of bank models.
  std::size_t bank_size() const {
    return static_cast<std::size_t>(k) * seeds.size() * crop_sizes().size() * encoders.size();
  }
  std::size_t descriptors_per_image() const {
    return static_cast<std::size_t>(extraction.n_augmentations) * crop_sizes().size() *
           encoders.size();
  }
};

/// Parses a TOML document; relative paths resolve against `base_dir`.
/// Each override is `dotted.key=value`, the value read as a TOML literal or,
/// failing that, as a bare string. Throws ConfigError.
PipelineConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir,
                            const std::vector<std::string>& overrides = {});

/// Throws MissingFile or ConfigError.
PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides = {});

/// Canonical TOML rendering of a config (paths absolute).
std::string to_toml(const PipelineConfig& config);

}  // namespace histopipe::pipeline
