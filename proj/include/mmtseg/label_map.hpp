#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mmtseg {

using Label = std::int32_t;

/// Per-pixel cluster labels in row-major order.
struct LabelMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Label> labels;

  LabelMap() = default;
  LabelMap(std::size_t w, std::size_t h, Label fill = 0) : width(w), height(h), labels(w * h, fill) {}
  LabelMap(std::size_t w, std::size_t h, std::vector<Label> values);

  std::size_t pixels() const noexcept { return labels.size(); }
  Label& at(std::size_t row, std::size_t col) noexcept { return labels[row * width + col]; }
  Label at(std::size_t row, std::size_t col) const noexcept { return labels[row * width + col]; }

  /// Sorted distinct labels present in the map.
  std::vector<Label> alphabet() const;
  std::size_t cluster_count() const { return alphabet().size(); }
  bool same_dims(const LabelMap& other) const noexcept {
    return width == other.width && height == other.height;
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

}  // namespace mmtseg
