#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histopipe/image.hpp"
#include "histopipe/patches.hpp"
#include "histopipe/stainlab.hpp"

namespace histopipe::features {

enum class EncoderKind { ResNet50, InceptionV3, Vgg16, Stub };

std::string_view encoder_id(EncoderKind kind) noexcept;
std::optional<EncoderKind> parse_encoder_id(std::string_view id) noexcept;

/// Pixel rule applied before the network: out = (in - mean) * scale, per
/// channel, after optional reordering to BGR. Means are in network order.
struct Preprocessing {
  bool bgr = false;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  double scale = 1.0;
};

struct EncoderSpec {
  EncoderKind kind = EncoderKind::Stub;
  std::string model_path;
  /// Graph node names whose outputs are average-pooled and concatenated.
  std::vector<std::string> tap_layers;
  /// Expected channel count per tap; checked on every forward pass.
  std::vector<int> tap_channels;
  std::size_t descriptor_len = 64;
  Preprocessing preprocessing;
  std::uint64_t stub_seed = 0;
  int stub_input_side = 32;

  /// Keras-style defaults: final 2048-channel conv for ResNet-50 and
  /// InceptionV3, block2..block5 outputs (128+256+512+512) for VGG-16.
  static EncoderSpec resnet50(std::string model_path);
  static EncoderSpec inception_v3(std::string model_path);
  static EncoderSpec vgg16(std::string model_path);
  static EncoderSpec stub(std::size_t descriptor_len = 64, std::uint64_t seed = 0);

  std::string_view id() const noexcept { return encoder_id(kind); }
  /// Throws InvalidArgument when taps, channels and length disagree.
  void validate() const;
};

/// Activations of one layer, channel-major: values[(c * height + y) * width + x].
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;
};

/// Mean over all spatial cells per channel. Throws EmptyFeatureMap.
std::vector<double> spatial_average_pool(const FeatureMap& fm);

struct Descriptor {
  std::vector<double> values;
  std::string image_id;
  EncoderKind encoder = EncoderKind::Stub;
  int crop_size = 0;
  int augmentation_index = 0;
  /// Crop ordinal for per-crop descriptors, -1 once pooled.
  int ordinal = -1;
};

struct PoolParams {
  double p = 3.0;
};

/// Elementwise power mean ((1/N) Σ dᵢ^p)^(1/p), reduced in ascending ordinal
/// order so the result does not depend on input order.
/// Throws MixedProvenance, NegativeFeature, InvalidArgument (p < 1, empty).
Descriptor pnorm_pool(std::span<const Descriptor> descriptors, const PoolParams& params);

/// A loaded network. encode() is safe to call from several threads.
class Encoder {
 public:
  virtual ~Encoder() = default;
  const EncoderSpec& spec() const noexcept { return spec_; }
  /// Descriptor values for one crop. Throws ShapeMismatch.
  virtual std::vector<double> encode(const RgbImage& crop) const = 0;

  /// Throws ModelLoadError.
  static std::unique_ptr<Encoder> load(const EncoderSpec& spec);

 protected:
  explicit Encoder(EncoderSpec spec) : spec_(std::move(spec)) {}
  EncoderSpec spec_;
};

Descriptor encode_crop(const patches::Crop& crop, const Encoder& encoder);
/// Loads the network for a single call; prefer the overload above in loops.
Descriptor encode_crop(const patches::Crop& crop, const EncoderSpec& spec);

struct ExtractionOptions {
  patches::CropSpec crops;
  /// Crop sizes taken from the full-resolution image instead of the half-scale one.
  std::vector<int> full_scale_sizes;
  int n_augmentations = 50;
  bool normalize = true;
  bool affine = true;
  stain::MacenkoParams stain;
  PoolParams pool;
  std::uint64_t seed = 0;
};

/// Every crop size of the grid, half-scale sizes first.
std::vector<int> all_crop_sizes(const ExtractionOptions& opts);

/// normalize → per augmentation: H&E jitter + flips → downscale → crops →
/// encode → p-norm pool. Returns n_augmentations × |sizes| × |encoders|
/// descriptors ordered by (augmentation, size, encoder). Errors are re-thrown
/// with the image id prefixed.
std::vector<Descriptor> build_descriptor_set(const RgbImage& image, const std::string& image_id,
                                             std::span<const Encoder* const> encoders,
                                             const ExtractionOptions& opts);

std::vector<Descriptor> build_descriptor_set(const patches::ImageRecord& record,
                                             std::span<const Encoder* const> encoders,
                                             const ExtractionOptions& opts);

/// Seed of the augmentation parameters for one (image, augmentation) pair.
std::uint64_t augmentation_seed(std::uint64_t seed, const std::string& image_id, int index);

}  // namespace histopipe::features
