#include "mmtseg/segnet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mmtseg {

void NetworkConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("network needs at least one conv block");
  if (channels < 2) throw std::invalid_argument("network needs at least two output channels");
  if (kernel % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  if (!(eps > 0.0)) throw std::invalid_argument("normalization eps must be positive");
}

std::vector<ParamTensor*> ModelParams::tensors() {
  std::vector<ParamTensor*> out;
  out.reserve(4 * (blocks.size() + 1));
  for (auto& b : blocks) out.insert(out.end(), {&b.kernels, &b.bias, &b.gamma, &b.beta});
  out.insert(out.end(), {&head.kernels, &head.bias, &head.gamma, &head.beta});
  return out;
}

std::vector<const ParamTensor*> ModelParams::tensors() const {
  std::vector<const ParamTensor*> out;
  for (auto* p : const_cast<ModelParams*>(this)->tensors()) out.push_back(p);
  return out;
}

namespace {

ConvBlock make_block(std::size_t in, std::size_t out, std::size_t k, std::mt19937_64& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor kernels({out, in, k, k});
  for (double& w : kernels.data()) w = dist(rng);
  return ConvBlock{ParamTensor(std::move(kernels)), ParamTensor(Tensor({out})),
                   ParamTensor(Tensor({out}, 1.0)), ParamTensor(Tensor({out}))};
}

int same_padding(const ParamTensor& kernels) { return static_cast<int>(kernels.value.dim(2) / 2); }

}  // namespace

ModelParams init_params(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams params;
  params.config = config;
  std::size_t in = 3;
  for (std::size_t l = 0; l < config.layers; ++l) {
    params.blocks.push_back(make_block(in, config.channels, config.kernel, rng));
    in = config.channels;
  }
  params.head = make_block(config.channels, config.channels, 1, rng);
  return params;
}

FeatureMap forward(const ModelParams& params, const ImageTensor& image) {
  require_chw(image, "forward");
  if (image.dim(0) != 3) throw std::invalid_argument("forward: expected a 3-channel image");
  Tensor x = image;
  for (const auto& b : params.blocks) {
    x = channel_norm(relu(conv2d(x, b.kernels, b.bias, same_padding(b.kernels), params.config.padding)), b.gamma, b.beta,
                     params.config.eps);
  }
  const auto& h = params.head;
  return channel_norm(conv2d(x, h.kernels, h.bias, 0), h.gamma, h.beta, params.config.eps);
}

FeatureMap forward(const ModelParams& params, const ImageTensor& image, ForwardTrace& trace) {
  require_chw(image, "forward");
  if (image.dim(0) != 3) throw std::invalid_argument("forward: expected a 3-channel image");
  trace.blocks.assign(params.blocks.size(), {});
  Tensor x = image;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const auto& b = params.blocks[l];
    auto& stage = trace.blocks[l];
    stage.input = std::move(x);
    stage.pre_activation = conv2d(stage.input, b.kernels, b.bias, same_padding(b.kernels), params.config.padding);
    x = channel_norm(relu(stage.pre_activation), b.gamma, b.beta, params.config.eps, &stage.norm);
  }
  const auto& h = params.head;
  trace.head.input = std::move(x);
  trace.head.pre_activation = conv2d(trace.head.input, h.kernels, h.bias, 0);
  return channel_norm(trace.head.pre_activation, h.gamma, h.beta, params.config.eps, &trace.head.norm);
}

void backward(ModelParams& params, const ForwardTrace& trace, const Tensor& grad_features) {
  auto& h = params.head;
  Tensor g = channel_norm_backward(trace.head.norm, grad_features, h.gamma, h.beta);
  g = conv2d_backward(trace.head.input, g, h.kernels, h.bias, 0);
  for (std::size_t l = params.blocks.size(); l-- > 0;) {
    auto& b = params.blocks[l];
    const auto& stage = trace.blocks[l];
    g = channel_norm_backward(stage.norm, g, b.gamma, b.beta);
    g = relu_backward(stage.pre_activation, g);
    // The image itself needs no gradient.
    g = conv2d_backward(stage.input, g, b.kernels, b.bias, same_padding(b.kernels), l > 0,
                        params.config.padding);
  }
}

LabelMap assign_labels(const FeatureMap& features) {
  require_chw(features, "assign_labels");
  const std::size_t q = features.dim(0);
  const std::size_t n = features.dim(1) * features.dim(2);
  LabelMap out(features.dim(2), features.dim(1));
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t best = 0;
    double best_value = features[p];
    for (std::size_t c = 1; c < q; ++c) {
      if (features[c * n + p] > best_value) {
        best_value = features[c * n + p];
        best = c;
      }
    }
    out.labels[p] = static_cast<Label>(best);
  }
  return out;
}

}  // namespace mmtseg
