#include "mmtseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mmtseg {

namespace {

struct ConvGeometry {
  std::size_t in_channels, out_channels, height, width, k;
  Padding mode;
  std::size_t pixels() const { return height * width; }
  std::size_t patch() const { return in_channels * k * k; }
};

ConvGeometry check_conv(const Tensor& input, const ParamTensor& kernels, const ParamTensor& bias,
                        int padding, Padding mode) {
  require_chw(input, "conv2d input");
  const auto& ks = kernels.value.shape();
  if (ks.size() != 4) {
    throw std::invalid_argument("conv2d: kernels must be C_out x C_in x k x k, got " + shape_string(ks));
  }
  if (ks[2] != ks[3]) throw std::invalid_argument("conv2d: kernels must be square, got " + shape_string(ks));
  if (ks[2] % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd, got " + std::to_string(ks[2]));
  if (ks[1] != input.dim(0)) {
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(ks[1]) +
                                " input channels, input has " + std::to_string(input.dim(0)));
  }
  if (bias.value.rank() != 1 || bias.value.dim(0) != ks[0]) {
    throw std::invalid_argument("conv2d: bias shape " + shape_string(bias.value.shape()) +
                                " does not match " + std::to_string(ks[0]) + " output channels");
  }
  if (padding < 0 || static_cast<std::size_t>(padding) != (ks[2] - 1) / 2) {
    throw std::invalid_argument("conv2d: padding must be (k-1)/2 = " + std::to_string((ks[2] - 1) / 2));
  }
  if (mode == Padding::reflect && padding > 0 &&
      (input.dim(1) <= static_cast<std::size_t>(padding) || input.dim(2) <= static_cast<std::size_t>(padding))) {
    throw std::invalid_argument("conv2d: reflect padding needs every spatial side larger than the padding");
  }
  return {ks[1], ks[0], input.dim(1), input.dim(2), ks[2], mode};
}

// Scratch buffers are reused across calls to avoid re-faulting large pages.
std::vector<double>& scratch(int slot, std::size_t size) {
  thread_local std::vector<double> buffers[2];
  auto& b = buffers[slot];
  if (b.size() < size) b.resize(size);
  return b;
}

// Source coordinate for position x + d along an axis of length n, or -1 for
// a zero-padded tap.
std::ptrdiff_t source_coord(std::ptrdiff_t x, std::ptrdiff_t n, Padding mode) {
  if (x >= 0 && x < n) return x;
  if (mode == Padding::zeros) return -1;
  if (n == 1) return 0;
  return x < 0 ? -x : 2 * (n - 1) - x;
}

// For each tap offset, the source coordinate of every output coordinate.
std::vector<std::ptrdiff_t> tap_table(std::size_t k, std::size_t n, Padding mode) {
  const auto p = static_cast<std::ptrdiff_t>(k / 2);
  const auto len = static_cast<std::ptrdiff_t>(n);
  std::vector<std::ptrdiff_t> t(k * n);
  for (std::size_t u = 0; u < k; ++u) {
    for (std::ptrdiff_t x = 0; x < len; ++x) {
      t[u * n + static_cast<std::size_t>(x)] = source_coord(x + static_cast<std::ptrdiff_t>(u) - p, len, mode);
    }
  }
  return t;
}

// Visits every (column-matrix row, output pixel, input pixel) triple; the
// column matrix row r = (c, u, v) holds input[c, i+u-p, j+v-p] for every (i, j).
template <typename Visit>
void for_each_tap(const ConvGeometry& g, Visit&& visit) {
  const auto rows = tap_table(g.k, g.height, g.mode);
  const auto cols = tap_table(g.k, g.width, g.mode);
  const auto p = static_cast<std::ptrdiff_t>(g.k / 2);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t u = 0; u < g.k; ++u) {
      for (std::size_t v = 0; v < g.k; ++v, ++r) {
        const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - p;
        const std::ptrdiff_t j0 = std::clamp<std::ptrdiff_t>(-dv, 0, w);
        const std::ptrdiff_t j1 = std::clamp<std::ptrdiff_t>(w - dv, j0, w);
        const std::ptrdiff_t* col_src = cols.data() + v * g.width;
        for (std::size_t i = 0; i < g.height; ++i) {
          visit(c, r, i, rows[u * g.height + i], col_src, j0, j1, dv);
        }
      }
    }
  }
}

const double* im2col(const Tensor& input, const ConvGeometry& g) {
  auto& col = scratch(0, g.patch() * g.pixels());
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  for_each_tap(g, [&](std::size_t c, std::size_t r, std::size_t i, std::ptrdiff_t si,
                      const std::ptrdiff_t* col_src, std::ptrdiff_t j0, std::ptrdiff_t j1, std::ptrdiff_t dv) {
    double* row = col.data() + r * g.pixels() + i * g.width;
    if (si < 0) {
      std::fill_n(row, g.width, 0.0);
      return;
    }
    const double* src = input.raw() + c * g.pixels() + si * w;
    for (std::ptrdiff_t j = 0; j < j0; ++j) row[j] = col_src[j] < 0 ? 0.0 : src[col_src[j]];
    std::copy(src + j0 + dv, src + j1 + dv, row + j0);
    for (std::ptrdiff_t j = j1; j < w; ++j) row[j] = col_src[j] < 0 ? 0.0 : src[col_src[j]];
  });
  return col.data();
}

void col2im_add(const double* col, const ConvGeometry& g, Tensor& grad_input) {
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  for_each_tap(g, [&](std::size_t c, std::size_t r, std::size_t i, std::ptrdiff_t si,
                      const std::ptrdiff_t* col_src, std::ptrdiff_t j0, std::ptrdiff_t j1, std::ptrdiff_t dv) {
    if (si < 0) return;
    const double* row = col + r * g.pixels() + i * g.width;
    double* dst = grad_input.raw() + c * g.pixels() + si * w;
    for (std::ptrdiff_t j = 0; j < j0; ++j) {
      if (col_src[j] >= 0) dst[col_src[j]] += row[j];
    }
    for (std::ptrdiff_t j = j0; j < j1; ++j) dst[j + dv] += row[j];
    for (std::ptrdiff_t j = j1; j < w; ++j) {
      if (col_src[j] >= 0) dst[col_src[j]] += row[j];
    }
  });
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;

ConstMatrixView view(const double* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
MatrixView view(double* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

}  // namespace

Tensor conv2d(const Tensor& input, const ParamTensor& kernels, const ParamTensor& bias,
              int padding, Padding mode) {
  const auto g = check_conv(input, kernels, bias, padding, mode);
  Tensor out({g.out_channels, g.height, g.width});
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    std::fill_n(out.raw() + o * g.pixels(), g.pixels(), bias.value[o]);
  }
  const bool pointwise = g.k == 1;
  const double* cols = pointwise ? input.raw() : im2col(input, g);
  view(out.raw(), g.out_channels, g.pixels()).noalias() +=
      view(kernels.value.raw(), g.out_channels, g.patch()) * view(cols, g.patch(), g.pixels());
  return out;
}

Tensor conv2d_backward(const Tensor& input, const Tensor& grad_output, ParamTensor& kernels,
                       ParamTensor& bias, int padding, bool want_input_grad, Padding mode) {
  const auto g = check_conv(input, kernels, bias, padding, mode);
  if (grad_output.shape() != std::vector<std::size_t>{g.out_channels, g.height, g.width}) {
    throw std::invalid_argument("conv2d_backward: gradient shape " + shape_string(grad_output.shape()) +
                                " does not match the forward output");
  }
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double* row = grad_output.raw() + o * g.pixels();
    double s = 0.0;
    for (std::size_t n = 0; n < g.pixels(); ++n) s += row[n];
    bias.grad[o] += s;
  }

  const bool pointwise = g.k == 1;
  const double* cols = pointwise ? input.raw() : im2col(input, g);
  const auto grad_out = view(grad_output.raw(), g.out_channels, g.pixels());
  view(kernels.grad.raw(), g.out_channels, g.patch()).noalias() +=
      grad_out * view(cols, g.patch(), g.pixels()).transpose();

  if (!want_input_grad) return {};
  Tensor grad_input = Tensor::zeros_like(input);
  const auto weights_t = view(kernels.value.raw(), g.out_channels, g.patch()).transpose();
  if (pointwise) {
    view(grad_input.raw(), g.patch(), g.pixels()).noalias() = weights_t * grad_out;
    return grad_input;
  }
  auto& grad_col = scratch(1, g.patch() * g.pixels());
  view(grad_col.data(), g.patch(), g.pixels()).noalias() = weights_t * grad_out;
  col2im_add(grad_col.data(), g, grad_input);
  return grad_input;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  if (!input.same_shape(grad_output)) throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor grad = grad_output;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > 0.0)) grad[i] = 0.0;
  }
  return grad;
}

Tensor channel_norm(const Tensor& input, const ParamTensor& gamma, const ParamTensor& beta, double eps,
                    ChannelNormCache* cache) {
  require_chw(input, "channel_norm input");
  if (!(eps > 0.0)) throw std::invalid_argument("channel_norm: eps must be positive");
  const std::size_t channels = input.dim(0);
  const std::size_t n = input.dim(1) * input.dim(2);
  if (gamma.value.size() != channels || beta.value.size() != channels) {
    throw std::invalid_argument("channel_norm: gamma/beta must have one entry per channel");
  }
  Tensor out(input.shape());
  Tensor normalized(input.shape());
  std::vector<double> inv_stddev(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* x = input.raw() + c * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_stddev[c] = inv;
    double* xh = normalized.raw() + c * n;
    double* y = out.raw() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      xh[i] = (x[i] - mean) * inv;
      y[i] = gamma.value[c] * xh[i] + beta.value[c];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_stddev = std::move(inv_stddev);
  }
  return out;
}

Tensor channel_norm_backward(const ChannelNormCache& cache, const Tensor& grad_output, ParamTensor& gamma,
                             ParamTensor& beta) {
  if (!cache.normalized.same_shape(grad_output)) {
    throw std::invalid_argument("channel_norm_backward: shape mismatch");
  }
  const std::size_t channels = grad_output.dim(0);
  const std::size_t n = grad_output.dim(1) * grad_output.dim(2);
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor grad_input(grad_output.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const double* dy = grad_output.raw() + c * n;
    const double* xh = cache.normalized.raw() + c * n;
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_dy += dy[i];
      sum_dy_xh += dy[i] * xh[i];
    }
    beta.grad[c] += sum_dy;
    gamma.grad[c] += sum_dy_xh;
    const double scale = gamma.value[c] * cache.inv_stddev[c];
    double* dx = grad_input.raw() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      dx[i] = scale * (dy[i] - sum_dy * inv_n - xh[i] * sum_dy_xh * inv_n);
    }
  }
  return grad_input;
}

Tensor softmax_channels(const Tensor& logits) {
  require_chw(logits, "softmax_channels input");
  const std::size_t q = logits.dim(0);
  const std::size_t n = logits.dim(1) * logits.dim(2);
  Tensor out(logits.shape());
  for (std::size_t p = 0; p < n; ++p) {
    double peak = logits[p];
    for (std::size_t c = 1; c < q; ++c) peak = std::max(peak, logits[c * n + p]);
    double total = 0.0;
    for (std::size_t c = 0; c < q; ++c) {
      const double e = std::exp(logits[c * n + p] - peak);
      out[c * n + p] = e;
      total += e;
    }
    for (std::size_t c = 0; c < q; ++c) out[c * n + p] /= total;
  }
  return out;
}

void sgd_momentum_step(std::span<ParamTensor* const> params, double lr, double momentum) {
  for (ParamTensor* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->momentum[i] = momentum * p->momentum[i] + p->grad[i];
      p->value[i] -= lr * p->momentum[i];
    }
    p->zero_grad();
  }
}

double finite_diff_check(const ScalarFn& fn, const Tensor& point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be positive");
  Tensor analytic = Tensor::zeros_like(point);
  const double f0 = fn(point, &analytic);
  if (!std::isfinite(f0)) throw std::domain_error("finite_diff_check: objective is not finite");
  Tensor probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + h;
    const double fp = fn(probe, nullptr);
    probe[i] = point[i] - h;
    const double fm = fn(probe, nullptr);
    probe[i] = point[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::domain_error("finite_diff_check: objective is not finite at a perturbed point");
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mmtseg
