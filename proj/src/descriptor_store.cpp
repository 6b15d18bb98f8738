#include "histopipe/descriptor_store.hpp"

#include <cstring>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "histopipe/error.hpp"
#include "histopipe/rng.hpp"

namespace histopipe::store {

using nlohmann::json;

namespace {

std::uint64_t payload_hash(std::span<const float> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    unsigned char le[4];
    for (int i = 0; i < 4; ++i) le[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
    h = fnv1a64_bytes(le, 4, h);
  }
  return h;
}

}  // namespace

DescriptorStore::DescriptorStore(StoreHeader header)
    : header_(std::move(header)), values_(header_.rows() * header_.descriptor_len, 0.0f) {}

std::span<const float> DescriptorStore::row(std::size_t image_index, int augmentation) const {
  const std::size_t r = image_index * static_cast<std::size_t>(header_.augmentation_count) +
                        static_cast<std::size_t>(augmentation);
  return {values_.data() + r * cols(), cols()};
}

std::span<float> DescriptorStore::row(std::size_t image_index, int augmentation) {
  const std::size_t r = image_index * static_cast<std::size_t>(header_.augmentation_count) +
                        static_cast<std::size_t>(augmentation);
  return {values_.data() + r * cols(), cols()};
}

std::optional<std::size_t> DescriptorStore::image_index(const std::string& image_id) const {
  for (std::size_t i = 0; i < header_.image_ids.size(); ++i) {
    if (header_.image_ids[i] == image_id) return i;
  }
  return std::nullopt;
}

void DescriptorStore::set_row(std::size_t image_index, int augmentation,
                              std::span<const double> values) {
  if (values.size() != cols()) {
    throw Error(ErrorCode::ShapeMismatch, "descriptor length " + std::to_string(values.size()) +
                                              " does not match store width " +
                                              std::to_string(cols()));
  }
  auto dst = row(image_index, augmentation);
  for (std::size_t j = 0; j < values.size(); ++j) dst[j] = static_cast<float>(values[j]);
}

void DescriptorStore::seal() { header_.payload_checksum = detail::hex64(payload_hash(values_)); }

std::string store_filename(const std::string& encoder_id, int crop_size) {
  return encoder_id + "_" + std::to_string(crop_size) + ".hpdesc";
}

std::vector<char> serialize_store(const DescriptorStore& store) {
  const StoreHeader& h = store.header();
  const json header = {
      {"encoder_id", h.encoder_id},
      {"crop_size", h.crop_size},
      {"descriptor_len", h.descriptor_len},
      {"image_ids", h.image_ids},
      {"augmentation_count", h.augmentation_count},
      {"scale", h.scale},
      {"config_fingerprint", h.config_fingerprint},
      {"payload_checksum", detail::hex64(payload_hash(store.values()))},
  };
  const std::string text = header.dump();
  detail::ByteWriter w;
  w.bytes(std::string_view(kStoreMagic, 8));
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  w.buffer().reserve(w.buffer().size() + store.values().size() * 4);
  for (float v : store.values()) w.f32(v);
  return std::move(w.buffer());
}

DescriptorStore deserialize_store(std::span<const char> bytes) {
  detail::ByteReader r(bytes.data(), bytes.size(), ErrorCode::CorruptStore);
  if (r.remaining() < 12 || r.bytes(8) != std::string_view(kStoreMagic, 8)) {
    throw Error(ErrorCode::CorruptStore, "bad descriptor store magic");
  }
  const std::uint32_t header_len = r.u32();
  const std::string_view text = r.bytes(header_len);

  StoreHeader h;
  try {
    const json j = json::parse(text);
    h.encoder_id = j.at("encoder_id").get<std::string>();
    h.crop_size = j.at("crop_size").get<int>();
    h.descriptor_len = j.at("descriptor_len").get<std::size_t>();
    h.image_ids = j.at("image_ids").get<std::vector<std::string>>();
    h.augmentation_count = j.at("augmentation_count").get<int>();
    h.scale = j.value("scale", std::string("half"));
    h.config_fingerprint = j.value("config_fingerprint", std::string());
    h.payload_checksum = j.at("payload_checksum").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptStore, std::string("bad store header: ") + e.what());
  }
  if (h.augmentation_count < 1 || h.descriptor_len == 0) {
    throw Error(ErrorCode::CorruptStore, "store header declares an empty grid");
  }

  const std::size_t expected = h.rows() * h.descriptor_len * 4;
  if (r.remaining() != expected) {
    throw Error(ErrorCode::PartialStore, "payload has " + std::to_string(r.remaining()) +
                                             " bytes, header implies " + std::to_string(expected));
  }
  const std::string checksum = h.payload_checksum;
  DescriptorStore store(std::move(h));
  detail::ByteReader payload(bytes.data() + r.position(), expected, ErrorCode::PartialStore);
  std::vector<double> row(store.cols());
  for (std::size_t i = 0; i < store.header().image_ids.size(); ++i) {
    for (int a = 0; a < store.header().augmentation_count; ++a) {
      auto dst = store.row(i, a);
      for (float& v : dst) v = payload.f32();
    }
  }
  store.seal();
  if (store.header().payload_checksum != checksum) {
    throw Error(ErrorCode::PartialStore, "payload checksum mismatch");
  }
  return store;
}

void write_store(const std::filesystem::path& path, const DescriptorStore& store) {
  detail::write_file_atomic(path.string(), serialize_store(store));
}

DescriptorStore read_store(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path.string(), ErrorCode::MissingArtifacts);
  try {
    return deserialize_store(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), "'" + path.string() + "': " + e.detail());
  }
}

}  // namespace histopipe::store
