#include "histopipe/patches.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "histopipe/error.hpp"
#include "histopipe/kernels.hpp"
#include "histopipe/rng.hpp"

namespace histopipe::patches {

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

RgbImage ImageRecord::load() const {
  if (pixels) return *pixels;
  return read_image(source_path);
}

const ImageRecord* DatasetManifest::find(const std::string& image_id) const {
  for (const auto& r : records) {
    if (r.image_id == image_id) return &r;
  }
  return nullptr;
}

DatasetManifest load_dataset(const std::filesystem::path& root,
                             const std::filesystem::path& labels_file, bool keep_pixels) {
  std::ifstream in(labels_file);
  if (!in) throw Error(ErrorCode::MissingFile, "labels file '" + labels_file.string() + "' not found");

  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::ConfigError, "labels file '" + labels_file.string() + "' is empty");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (trim(line) != "image_id,filename,label") {
    throw Error(ErrorCode::ConfigError,
                "labels file header must be 'image_id,filename,label', got '" + trim(line) + "'");
  }

  DatasetManifest manifest;
  std::set<std::string> seen;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto fields = split_csv_row(line);
    if (fields.size() != 3) {
      throw Error(ErrorCode::ConfigError, "row " + std::to_string(row) + ": expected 3 fields");
    }
    for (auto& f : fields) f = trim(f);
    const std::string where = "row " + std::to_string(row) + " ('" + fields[0] + "')";

    const auto label = parse_label(fields[2]);
    if (!label) throw Error(ErrorCode::UnknownLabel, where + ": unknown label '" + fields[2] + "'");
    if (!seen.insert(fields[0]).second) {
      throw Error(ErrorCode::DuplicateImageId, where + ": duplicate image_id");
    }
    const std::filesystem::path path = root / fields[1];
    if (!std::filesystem::is_regular_file(path)) {
      throw Error(ErrorCode::MissingFile, where + ": file '" + path.string() + "' does not exist");
    }

    ImageRecord rec{fields[0], *label, path, std::nullopt};
    RgbImage img;
    try {
      img = read_image(path);
    } catch (const Error& e) {
      throw Error(ErrorCode::UnreadableImage, where + ": " + e.detail());
    }
    if (keep_pixels) rec.pixels = std::move(img);
    ++manifest.class_counts[index_of(*label)];
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

RgbImage downscale_half(const RgbImage& img) {
  if (img.width() % 2 != 0 || img.height() % 2 != 0) {
    throw Error(ErrorCode::OddDimensions, "downscale_half needs even dimensions, got " +
                                              std::to_string(img.width()) + "x" +
                                              std::to_string(img.height()));
  }
  RgbImage out(img.width() / 2, img.height() / 2);
  kernels::omp::downscale_half(img.data(), img.width(), img.height(), out.data());
  return out;
}

Origin crop_origin(int image_width, int image_height, int size, std::uint64_t seed,
                   const std::string& image_id, int augmentation_index, int ordinal) {
  CounterRng rng(make_key(seed, fnv1a64(image_id), static_cast<std::uint64_t>(augmentation_index),
                          static_cast<std::uint64_t>(size), static_cast<std::uint64_t>(ordinal)));
  const auto x = static_cast<int>(rng.below(static_cast<std::uint64_t>(image_width - size + 1)));
  const auto y = static_cast<int>(rng.below(static_cast<std::uint64_t>(image_height - size + 1)));
  return {x, y};
}

std::vector<Crop> extract_random_crops(const RgbImage& img, const CropSpec& spec,
                                       const std::string& image_id, int augmentation_index) {
  if (spec.crops_per_size < 1) {
    throw Error(ErrorCode::InvalidArgument, "crops_per_size must be at least 1");
  }
  for (int size : spec.sizes) {
    if (size < 1 || size > img.width() || size > img.height()) {
      throw Error(ErrorCode::CropLargerThanImage,
                  "crop size " + std::to_string(size) + " does not fit a " +
                      std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                      " image ('" + image_id + "')");
    }
  }
  std::vector<Crop> crops;
  crops.reserve(spec.sizes.size() * static_cast<std::size_t>(spec.crops_per_size));
  for (int size : spec.sizes) {
    for (int ordinal = 0; ordinal < spec.crops_per_size; ++ordinal) {
      const Origin o = crop_origin(img.width(), img.height(), size, spec.seed, image_id,
                                   augmentation_index, ordinal);
      crops.push_back(
          Crop{img.crop(o.x, o.y, size, size), o.x, o.y, size, ordinal, image_id, augmentation_index});
    }
  }
  return crops;
}

}  // namespace histopipe::patches
