#pragma once

#include <functional>
#include <span>

#include "mmtseg/tensor.hpp"

namespace mmtseg {

inline constexpr double kNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// How taps outside the image are filled: zeros, or mirrored about the edge
/// pixel (x[-1] = x[1]).
enum class Padding { zeros, reflect };

/// Stride-1 cross-correlation.
///
/// `input` is C_in x H x W, `kernels` C_out x C_in x k x k with k odd, `bias`
/// has C_out entries.  `padding` must equal (k - 1) / 2, so the output keeps
/// the input's spatial size.
Tensor conv2d(const Tensor& input, const ParamTensor& kernels, const ParamTensor& bias,
              int padding, Padding mode = Padding::zeros);

/// Accumulates d(loss)/d(kernels) and d(loss)/d(bias) into the parameters'
/// gradient buffers.  Returns d(loss)/d(input) when `want_input_grad`,
/// otherwise an empty tensor.
Tensor conv2d_backward(const Tensor& input, const Tensor& grad_output, ParamTensor& kernels,
                       ParamTensor& bias, int padding, bool want_input_grad = true,
                       Padding mode = Padding::zeros);

// ---------------------------------------------------------------------------
// Pointwise
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& input);
/// Masks `grad_output` by input > 0 (subgradient 0 at exactly 0).
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Per-channel normalization over spatial positions
// ---------------------------------------------------------------------------

struct ChannelNormCache {
  Tensor normalized;               // (x - mean) / sqrt(var + eps)
  std::vector<double> inv_stddev;  // one per channel
};

Tensor channel_norm(const Tensor& input, const ParamTensor& gamma, const ParamTensor& beta,
                    double eps = kNormEps, ChannelNormCache* cache = nullptr);

Tensor channel_norm_backward(const ChannelNormCache& cache, const Tensor& grad_output,
                             ParamTensor& gamma, ParamTensor& beta);

// ---------------------------------------------------------------------------
// Softmax over the channel axis, independently at every pixel.
// ---------------------------------------------------------------------------

Tensor softmax_channels(const Tensor& logits);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// v <- momentum * v + g;  theta <- theta - lr * v;  g <- 0.
void sgd_momentum_step(std::span<ParamTensor* const> params, double lr, double momentum);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Scalar objective.  When `grad` is non-null the callee writes the analytic
/// gradient at `x` into it (already shaped like `x`).
using ScalarFn = std::function<double(const Tensor& x, Tensor* grad)>;

/// Max over coordinates of |a - n| / max(1, |a|, |n|), comparing the analytic
/// gradient `a` with a central difference `n` of step `h`.
double finite_diff_check(const ScalarFn& fn, const Tensor& point, double h = 1e-5);

}  // namespace mmtseg
