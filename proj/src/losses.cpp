#include "mmtseg/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mmtseg {

namespace {

double sign(double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); }

}  // namespace

LossValue tv_loss(const FeatureMap& features) {
  require_chw(features, "tv_loss");
  const std::size_t q = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (h < 2 || w < 2) throw std::invalid_argument("tv_loss: feature map must be at least 2x2");
  LossValue out{0.0, Tensor::zeros_like(features)};
  Tensor& g = out.gradient;
  for (std::size_t c = 0; c < q; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double y = features.at(c, i, j);
        if (i + 1 < h) {
          const double d = features.at(c, i + 1, j) - y;
          out.value += std::abs(d);
          g.at(c, i + 1, j) += sign(d);
          g.at(c, i, j) -= sign(d);
        }
        if (j + 1 < w) {
          const double d = features.at(c, i, j + 1) - y;
          out.value += std::abs(d);
          g.at(c, i, j + 1) += sign(d);
          g.at(c, i, j) -= sign(d);
        }
      }
    }
  }
  return out;
}

LossValue sim_loss(const FeatureMap& features, const LabelMap& targets) {
  require_chw(features, "sim_loss");
  const std::size_t q = features.dim(0);
  const std::size_t n = features.dim(1) * features.dim(2);
  if (targets.height != features.dim(1) || targets.width != features.dim(2)) {
    throw std::invalid_argument("sim_loss: targets and features differ in size");
  }
  for (Label t : targets.labels) {
    if (t < 0 || static_cast<std::size_t>(t) >= q) {
      throw std::invalid_argument("sim_loss: target label " + std::to_string(t) + " outside [0, " +
                                  std::to_string(q) + ")");
    }
  }
  LossValue out{0.0, softmax_channels(features)};
  Tensor& g = out.gradient;
  // -ln p computed from the logits directly so a saturated softmax stays finite.
  for (std::size_t p = 0; p < n; ++p) {
    double peak = features[p];
    for (std::size_t c = 1; c < q; ++c) peak = std::max(peak, features[c * n + p]);
    double total = 0.0;
    for (std::size_t c = 0; c < q; ++c) total += std::exp(features[c * n + p] - peak);
    const auto t = static_cast<std::size_t>(targets.labels[p]);
    out.value += std::log(total) - (features[t * n + p] - peak);
    g[t * n + p] -= 1.0;
  }
  return out;
}

LossValue total_loss(const FeatureMap& features, const LabelMap& targets, double beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("total_loss: beta must be non-negative");
  LossValue out = sim_loss(features, targets);
  if (beta == 0.0) return out;
  const LossValue tv = tv_loss(features);
  out.value += beta * tv.value;
  for (std::size_t i = 0; i < out.gradient.size(); ++i) out.gradient[i] += beta * tv.gradient[i];
  return out;
}

}  // namespace mmtseg
