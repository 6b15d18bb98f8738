#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace histopipe {

enum class Label : std::uint8_t { Normal = 0, Benign = 1, InSitu = 2, Invasive = 3 };

inline constexpr int kNumClasses = 4;
inline constexpr std::array<Label, kNumClasses> kAllLabels{Label::Normal, Label::Benign,
                                                           Label::InSitu, Label::Invasive};

constexpr int index_of(Label l) noexcept { return static_cast<int>(l); }

constexpr std::string_view to_string(Label l) noexcept {
  switch (l) {
    case Label::Normal: return "normal";
    case Label::Benign: return "benign";
    case Label::InSitu: return "in_situ";
    case Label::Invasive: return "invasive";
  }
  return "?";
}

constexpr std::optional<Label> parse_label(std::string_view s) noexcept {
  for (Label l : kAllLabels) {
    if (to_string(l) == s) return l;
  }
  return std::nullopt;
}

constexpr bool is_carcinoma(Label l) noexcept {
  return l == Label::InSitu || l == Label::Invasive;
}

}  // namespace histopipe
