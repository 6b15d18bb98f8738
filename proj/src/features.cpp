#include "histopipe/features.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iterator>
#include <mutex>
#include <numeric>

#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>

#include "histopipe/error.hpp"
#include "histopipe/kernels.hpp"
#include "histopipe/rng.hpp"

namespace histopipe::features {

std::string_view encoder_id(EncoderKind kind) noexcept {
  switch (kind) {
    case EncoderKind::ResNet50: return "resnet50";
    case EncoderKind::InceptionV3: return "inception_v3";
    case EncoderKind::Vgg16: return "vgg16";
    case EncoderKind::Stub: return "stub";
  }
  return "?";
}

std::optional<EncoderKind> parse_encoder_id(std::string_view id) noexcept {
  for (auto k : {EncoderKind::ResNet50, EncoderKind::InceptionV3, EncoderKind::Vgg16,
                 EncoderKind::Stub}) {
    if (encoder_id(k) == id) return k;
  }
  return std::nullopt;
}

EncoderSpec EncoderSpec::resnet50(std::string model_path) {
  EncoderSpec s;
  s.kind = EncoderKind::ResNet50;
  s.model_path = std::move(model_path);
  s.tap_layers = {"conv5_block3_out"};
  s.tap_channels = {2048};
  s.descriptor_len = 2048;
  s.preprocessing = {true, {103.939, 116.779, 123.68}, 1.0};
  return s;
}

EncoderSpec EncoderSpec::inception_v3(std::string model_path) {
  EncoderSpec s;
  s.kind = EncoderKind::InceptionV3;
  s.model_path = std::move(model_path);
  s.tap_layers = {"mixed10"};
  s.tap_channels = {2048};
  s.descriptor_len = 2048;
  s.preprocessing = {false, {127.5, 127.5, 127.5}, 1.0 / 127.5};
  return s;
}

EncoderSpec EncoderSpec::vgg16(std::string model_path) {
  EncoderSpec s;
  s.kind = EncoderKind::Vgg16;
  s.model_path = std::move(model_path);
  s.tap_layers = {"block2_conv2", "block3_conv3", "block4_conv3", "block5_conv3"};
  s.tap_channels = {128, 256, 512, 512};
  s.descriptor_len = 1408;
  s.preprocessing = {true, {103.939, 116.779, 123.68}, 1.0};
  return s;
}

EncoderSpec EncoderSpec::stub(std::size_t descriptor_len, std::uint64_t seed) {
  EncoderSpec s;
  s.kind = EncoderKind::Stub;
  s.descriptor_len = descriptor_len;
  s.stub_seed = seed;
  s.preprocessing = {false, {127.5, 127.5, 127.5}, 1.0 / 127.5};
  return s;
}

void EncoderSpec::validate() const {
  if (descriptor_len == 0) throw Error(ErrorCode::InvalidArgument, "descriptor_len must be positive");
  if (kind == EncoderKind::Stub) {
    if (stub_input_side < 1) throw Error(ErrorCode::InvalidArgument, "stub input side must be >= 1");
    return;
  }
  if (tap_layers.empty()) {
    throw Error(ErrorCode::InvalidArgument, std::string(id()) + ": tap_layers must not be empty");
  }
  if (tap_channels.size() != tap_layers.size()) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(id()) + ": tap_channels must list one count per tap layer");
  }
  const auto total = std::accumulate(tap_channels.begin(), tap_channels.end(), std::size_t{0});
  if (total != descriptor_len) {
    throw Error(ErrorCode::InvalidArgument, std::string(id()) + ": tap channels sum to " +
                                                std::to_string(total) + ", descriptor_len is " +
                                                std::to_string(descriptor_len));
  }
}

std::vector<double> spatial_average_pool(const FeatureMap& fm) {
  const std::size_t cells = static_cast<std::size_t>(std::max(fm.height, 0)) *
                            static_cast<std::size_t>(std::max(fm.width, 0));
  if (cells == 0 || fm.channels <= 0) {
    throw Error(ErrorCode::EmptyFeatureMap, "feature map has no spatial cells");
  }
  if (fm.values.size() != cells * static_cast<std::size_t>(fm.channels)) {
    throw Error(ErrorCode::InvalidArgument, "feature map buffer does not match its shape");
  }
  std::vector<double> out(static_cast<std::size_t>(fm.channels));
  for (int c = 0; c < fm.channels; ++c) {
    const double* v = fm.values.data() + static_cast<std::size_t>(c) * cells;
    double acc = 0.0;
    for (std::size_t i = 0; i < cells; ++i) acc += v[i];
    out[static_cast<std::size_t>(c)] = acc / static_cast<double>(cells);
  }
  return out;
}

Descriptor pnorm_pool(std::span<const Descriptor> descriptors, const PoolParams& params) {
  if (descriptors.empty()) throw Error(ErrorCode::InvalidArgument, "nothing to pool");
  if (!(params.p >= 1.0) || !std::isfinite(params.p)) {
    throw Error(ErrorCode::InvalidArgument, "pooling exponent must be a finite p >= 1");
  }
  const Descriptor& first = descriptors.front();
  const std::size_t len = first.values.size();
  const bool integral = std::floor(params.p) == params.p;
  for (const Descriptor& d : descriptors) {
    if (d.values.size() != len || d.image_id != first.image_id || d.encoder != first.encoder ||
        d.crop_size != first.crop_size || d.augmentation_index != first.augmentation_index) {
      throw Error(ErrorCode::MixedProvenance,
                  "cannot pool descriptors of different images, encoders, sizes or augmentations");
    }
    if (!integral) {
      for (double v : d.values) {
        if (v < 0.0) {
          throw Error(ErrorCode::NegativeFeature,
                      "negative feature with non-integer pooling exponent");
        }
      }
    }
  }

  std::vector<const Descriptor*> order(descriptors.size());
  for (std::size_t i = 0; i < descriptors.size(); ++i) order[i] = &descriptors[i];
  std::sort(order.begin(), order.end(), [](const Descriptor* a, const Descriptor* b) {
    if (a->ordinal != b->ordinal) return a->ordinal < b->ordinal;
    return a->values < b->values;
  });
  std::vector<double> rows(order.size() * len);
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::copy(order[i]->values.begin(), order[i]->values.end(), rows.begin() + i * len);
  }

  Descriptor out;
  out.values.resize(len);
  out.image_id = first.image_id;
  out.encoder = first.encoder;
  out.crop_size = first.crop_size;
  out.augmentation_index = first.augmentation_index;
  out.ordinal = -1;
  kernels::omp::pnorm_pool(rows, order.size(), len, params.p, out.values);
  return out;
}

namespace {

class StubEncoder final : public Encoder {
 public:
  explicit StubEncoder(EncoderSpec spec) : Encoder(std::move(spec)) {
    const int side = spec_.stub_input_side;
    in_dim_ = static_cast<std::size_t>(side) * side * 3;
    weights_.resize(spec_.descriptor_len * in_dim_);
    const double a = std::sqrt(3.0 / static_cast<double>(in_dim_));
    CounterRng rng(make_key(spec_.stub_seed, 0x5708ULL));
    for (double& w : weights_) w = rng.uniform(-a, a);
  }

  std::vector<double> encode(const RgbImage& crop) const override {
    const int side = spec_.stub_input_side;
    cv::Mat rgb(crop.height(), crop.width(), CV_8UC3, const_cast<std::uint8_t*>(crop.data().data()));
    cv::Mat as_float;
    rgb.convertTo(as_float, CV_32FC3);
    cv::Mat small;
    cv::resize(as_float, small, cv::Size(side, side), 0, 0, cv::INTER_CUBIC);

    const Preprocessing& pp = spec_.preprocessing;
    std::vector<double> x(in_dim_);
    std::size_t i = 0;
    for (int y = 0; y < side; ++y) {
      const auto* row = small.ptr<float>(y);
      for (int xx = 0; xx < side; ++xx) {
        for (int c = 0; c < 3; ++c) {
          const int src = pp.bgr ? 2 - c : c;
          x[i++] = (static_cast<double>(row[3 * xx + src]) - pp.mean[static_cast<std::size_t>(c)]) *
                   pp.scale;
        }
      }
    }
    std::vector<double> out(spec_.descriptor_len);
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double* w = weights_.data() + k * in_dim_;
      double acc = 0.0;
      for (std::size_t j = 0; j < in_dim_; ++j) acc += w[j] * x[j];
      out[k] = acc > 0.0 ? acc : 0.0;
    }
    return out;
  }

 private:
  std::size_t in_dim_ = 0;
  std::vector<double> weights_;
};

class OnnxEncoder final : public Encoder {
 public:
  explicit OnnxEncoder(EncoderSpec spec) : Encoder(std::move(spec)) {
    std::ifstream in(spec_.model_path, std::ios::binary);
    if (!in) {
      throw Error(ErrorCode::ModelLoadError,
                  std::string(spec_.id()) + ": cannot open '" + spec_.model_path + "'");
    }
    model_bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    release(make_net());
  }

  std::vector<double> encode(const RgbImage& crop) const override {
    cv::dnn::Net net = acquire();
    std::vector<cv::Mat> outputs;
    try {
      net.setInput(to_blob(crop));
      std::vector<cv::String> names(spec_.tap_layers.begin(), spec_.tap_layers.end());
      net.forward(outputs, names);
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::ShapeMismatch,
                  std::string(spec_.id()) + ": forward pass failed: " + e.what());
    }
    release(std::move(net));

    std::vector<double> out;
    out.reserve(spec_.descriptor_len);
    for (std::size_t t = 0; t < outputs.size(); ++t) {
      const cv::Mat& blob = outputs[t];
      if (blob.dims != 4 || blob.size[0] != 1 || blob.size[1] != spec_.tap_channels[t]) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::string(spec_.id()) + ": tap '" + spec_.tap_layers[t] + "' has " +
                        (blob.dims >= 2 ? std::to_string(blob.size[1]) : std::string("?")) +
                        " channels, expected " + std::to_string(spec_.tap_channels[t]));
      }
      FeatureMap fm{blob.size[2], blob.size[3], blob.size[1], {}};
      const auto* p = blob.ptr<float>();
      fm.values.assign(p, p + blob.total());
      const auto pooled = spatial_average_pool(fm);
      out.insert(out.end(), pooled.begin(), pooled.end());
    }
    return out;
  }

 private:
  cv::dnn::Net make_net() const {
    try {
      cv::dnn::Net net = cv::dnn::readNetFromONNX(model_bytes_);
      if (net.empty()) throw cv::Exception(0, "empty network", "", "", 0);
      net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
      net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
      return net;
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::ModelLoadError, std::string(spec_.id()) + ": cannot parse '" +
                                                 spec_.model_path + "': " + e.what());
    }
  }

  cv::Mat to_blob(const RgbImage& crop) const {
    const int h = crop.height();
    const int w = crop.width();
    const int dims[] = {1, 3, h, w};
    cv::Mat blob(4, dims, CV_32F);
    const Preprocessing& pp = spec_.preprocessing;
    auto* out = blob.ptr<float>();
    for (int c = 0; c < 3; ++c) {
      const int src = pp.bgr ? 2 - c : c;
      const double mean = pp.mean[static_cast<std::size_t>(c)];
      float* plane = out + static_cast<std::size_t>(c) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          plane[static_cast<std::size_t>(y) * w + x] =
              static_cast<float>((crop.at(x, y, src) - mean) * pp.scale);
        }
      }
    }
    return blob;
  }

  // cv::dnn::Net::forward mutates the network, so each concurrent caller
  // takes its own instance from this pool.
  cv::dnn::Net acquire() const {
    {
      std::lock_guard lock(mu_);
      if (!idle_.empty()) {
        cv::dnn::Net net = std::move(idle_.back());
        idle_.pop_back();
        return net;
      }
    }
    return make_net();
  }

  void release(cv::dnn::Net net) const {
    std::lock_guard lock(mu_);
    idle_.push_back(std::move(net));
  }

  std::vector<uchar> model_bytes_;
  mutable std::mutex mu_;
  mutable std::vector<cv::dnn::Net> idle_;
};

}  // namespace

std::unique_ptr<Encoder> Encoder::load(const EncoderSpec& spec) {
  spec.validate();
  if (spec.kind == EncoderKind::Stub) return std::make_unique<StubEncoder>(spec);
  return std::make_unique<OnnxEncoder>(spec);
}

Descriptor encode_crop(const patches::Crop& crop, const Encoder& encoder) {
  Descriptor d;
  d.values = encoder.encode(crop.pixels);
  if (d.values.size() != encoder.spec().descriptor_len) {
    throw Error(ErrorCode::ShapeMismatch, std::string(encoder.spec().id()) + ": produced " +
                                              std::to_string(d.values.size()) +
                                              " values, expected " +
                                              std::to_string(encoder.spec().descriptor_len));
  }
  d.image_id = crop.image_id;
  d.encoder = encoder.spec().kind;
  d.crop_size = crop.size;
  d.augmentation_index = crop.augmentation_index;
  d.ordinal = crop.ordinal;
  return d;
}

Descriptor encode_crop(const patches::Crop& crop, const EncoderSpec& spec) {
  return encode_crop(crop, *Encoder::load(spec));
}

std::vector<int> all_crop_sizes(const ExtractionOptions& opts) {
  std::vector<int> sizes = opts.crops.sizes;
  sizes.insert(sizes.end(), opts.full_scale_sizes.begin(), opts.full_scale_sizes.end());
  return sizes;
}

std::uint64_t augmentation_seed(std::uint64_t seed, const std::string& image_id, int index) {
  return make_key(seed, fnv1a64(image_id), static_cast<std::uint64_t>(index), 0xa116ULL);
}

namespace {

// Pools one (size, encoder) cell for every size of `crops` and appends in
// (size, encoder) order.
void pool_crops(const std::vector<patches::Crop>& crops, const std::vector<int>& sizes,
                std::span<const Encoder* const> encoders, const PoolParams& pool,
                std::vector<Descriptor>& out) {
  for (int size : sizes) {
    for (const Encoder* enc : encoders) {
      std::vector<Descriptor> per_crop;
      for (const auto& crop : crops) {
        if (crop.size == size) per_crop.push_back(encode_crop(crop, *enc));
      }
      out.push_back(pnorm_pool(per_crop, pool));
    }
  }
}

}  // namespace

std::vector<Descriptor> build_descriptor_set(const RgbImage& image, const std::string& image_id,
                                             std::span<const Encoder* const> encoders,
                                             const ExtractionOptions& opts) {
  if (opts.n_augmentations < 1) {
    throw Error(ErrorCode::InvalidArgument, "n_augmentations must be at least 1");
  }
  if (encoders.empty()) throw Error(ErrorCode::InvalidArgument, "no encoders configured");
  const std::size_t per_aug = all_crop_sizes(opts).size() * encoders.size();
  if (per_aug == 0) throw Error(ErrorCode::InvalidArgument, "no crop sizes configured");

  try {
    stain::StainMatrix stains = opts.stain.reference_stains;
    RgbImage base = image;
    if (opts.normalize) {
      base = stain::normalize_stains(image, opts.stain);
    } else {
      stains = stain::estimate_stain_matrix(image, opts.stain);
    }
    const ConcentrationMap conc = stain::separate_stains(base, stains, opts.stain.i0);

    std::vector<Descriptor> out(static_cast<std::size_t>(opts.n_augmentations) * per_aug);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
    for (int a = 0; a < opts.n_augmentations; ++a) {
      try {
        const auto params =
            stain::sample_augmentation(augmentation_seed(opts.seed, image_id, a), opts.affine);
        const RgbImage augmented =
            stain::augment_concentrations(conc, stains, params, opts.stain.i0);
        std::vector<Descriptor> local;
        local.reserve(per_aug);
        if (!opts.crops.sizes.empty()) {
          const RgbImage half = patches::downscale_half(augmented);
          const auto crops = patches::extract_random_crops(half, opts.crops, image_id, a);
          pool_crops(crops, opts.crops.sizes, encoders, opts.pool, local);
        }
        if (!opts.full_scale_sizes.empty()) {
          patches::CropSpec full = opts.crops;
          full.sizes = opts.full_scale_sizes;
          const auto crops = patches::extract_random_crops(augmented, full, image_id, a);
          pool_crops(crops, full.sizes, encoders, opts.pool, local);
        }
        std::move(local.begin(), local.end(),
                  out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(a) * per_aug));
      } catch (...) {
#pragma omp critical(histopipe_extract_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
  } catch (const Error& e) {
    throw Error(e.code(), "image '" + image_id + "': " + e.detail());
  }
}

std::vector<Descriptor> build_descriptor_set(const patches::ImageRecord& record,
                                             std::span<const Encoder* const> encoders,
                                             const ExtractionOptions& opts) {
  return build_descriptor_set(record.load(), record.image_id, encoders, opts);
}

}  // namespace histopipe::features
