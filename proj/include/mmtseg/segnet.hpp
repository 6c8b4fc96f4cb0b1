#pragma once

#include <cstdint>
#include <vector>

#include "mmtseg/label_map.hpp"
#include "mmtseg/ops.hpp"
#include "mmtseg/tensor.hpp"

namespace mmtseg {

/// 3 x H x W image with values in [0, 1].
using ImageTensor = Tensor;
/// q x H x W response map; one q-dimensional feature per pixel.
using FeatureMap = Tensor;

struct NetworkConfig {
  std::size_t layers = 3;     // number of 3x3 conv blocks
  std::size_t channels = 100; // q
  std::size_t kernel = 3;
  double eps = kNormEps;
  Padding padding = Padding::reflect;

  void validate() const;
};

/// conv -> (relu) -> channel_norm.  The head block skips the relu.
struct ConvBlock {
  ParamTensor kernels;
  ParamTensor bias;
  ParamTensor gamma;
  ParamTensor beta;
};

/// Parameters of one feature extractor plus their optimizer state.
struct ModelParams {
  NetworkConfig config;
  std::vector<ConvBlock> blocks;  // 3 -> q, then q -> q
  ConvBlock head;                 // 1x1, q -> q

  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
};

ModelParams init_params(const NetworkConfig& config, std::uint64_t seed);

/// Intermediate values kept by a forward pass for the backward pass.
struct ForwardTrace {
  struct Stage {
    Tensor input;
    Tensor pre_activation;
    ChannelNormCache norm;
  };
  std::vector<Stage> blocks;
  Stage head;
};

FeatureMap forward(const ModelParams& params, const ImageTensor& image);
FeatureMap forward(const ModelParams& params, const ImageTensor& image, ForwardTrace& trace);

/// Accumulates parameter gradients for d(loss)/d(features) = `grad_features`.
void backward(ModelParams& params, const ForwardTrace& trace, const Tensor& grad_features);

/// Per-pixel argmax over channels; ties go to the lowest channel index.
LabelMap assign_labels(const FeatureMap& features);

}  // namespace mmtseg
