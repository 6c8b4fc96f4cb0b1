#pragma once

#include "mmtseg/label_map.hpp"
#include "mmtseg/segnet.hpp"

namespace mmtseg {

struct LossValue {
  double value = 0.0;
  Tensor gradient;  // d(value)/d(features)
};

/// Spatial-continuity loss: sum over channels and all vertically and
/// horizontally adjacent pixel pairs of |difference|.
LossValue tv_loss(const FeatureMap& features);

/// Cross entropy of the per-pixel channel softmax against `targets`, summed
/// over pixels.
LossValue sim_loss(const FeatureMap& features, const LabelMap& targets);

/// sim_loss + beta * tv_loss.
LossValue total_loss(const FeatureMap& features, const LabelMap& targets, double beta);

}  // namespace mmtseg
