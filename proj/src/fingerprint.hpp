#pragma once

// Content hashes that decide whether a stage output is still current.

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>

#include "binary_io.hpp"
#include "histopipe/rng.hpp"

namespace histopipe::detail {

class Fingerprint {
 public:
  Fingerprint& add(std::string_view s) {
    add_u64(s.size());
    h_ = fnv1a64(s, h_);
    return *this;
  }
  Fingerprint& add_u64(std::uint64_t v) {
    h_ = fnv1a64_bytes(&v, sizeof v, h_);
    return *this;
  }
  Fingerprint& add_i64(std::int64_t v) { return add_u64(static_cast<std::uint64_t>(v)); }
  Fingerprint& add_f64(double v) { return add_u64(std::bit_cast<std::uint64_t>(v)); }

  std::uint64_t value() const noexcept { return h_; }
  std::string hex() const { return hex64(h_); }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace histopipe::detail
