#include "mmtseg/label_map.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace mmtseg {

LabelMap::LabelMap(std::size_t w, std::size_t h, std::vector<Label> values)
    : width(w), height(h), labels(std::move(values)) {
  if (labels.size() != w * h) {
    throw std::invalid_argument("label map holds " + std::to_string(labels.size()) + " values for a " +
                                std::to_string(w) + "x" + std::to_string(h) + " grid");
  }
  for (Label l : labels) {
    if (l < 0) throw std::invalid_argument("label maps hold non-negative labels only");
  }
}

std::vector<Label> LabelMap::alphabet() const {
  std::vector<Label> out = labels;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace mmtseg
