#pragma once

#include <array>
#include <cstddef>

#include "scws/tensor.hpp"

// Forward and backward kernels for the differentiable operations. The
// autograd layer (autograd.hpp) wires these together; tests call them
// directly against loop oracles.
namespace scws::ops {

// ---------------------------------------------------------------------------
// Convolution: cross-correlation with zero padding, NCHW.

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;  // empty when the forward had no bias
};

/// `bias` may be an empty tensor for a bias-free convolution.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias, int stride, int padding,
                            const Tensor& grad_output, bool need_input_grad = true);

// ---------------------------------------------------------------------------
// Batch normalization over N,H,W per channel.

enum class Mode { Train, Eval };

struct BatchNormStats {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C], unbiased batch variance is accumulated

  static BatchNormStats fresh(std::size_t channels);
};

/// Values the backward pass needs from the forward.
struct BatchNormCache {
  Mode mode = Mode::Train;
  Tensor normalized;            // x_hat, same shape as input
  std::vector<double> inv_std;  // per channel
};

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

/// Running stats are updated only when `mode` is Train and `update_stats` is set.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode,
                  double eps, double momentum, BatchNormCache* cache = nullptr, bool update_stats = true);

BatchNormGrads batch_norm_backward(const BatchNormCache& cache, const Tensor& gamma, const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Elementwise.

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

Tensor sigmoid(const Tensor& input);
/// Takes the sigmoid *output*.
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_output);

Tensor softplus(const Tensor& input);
Tensor softplus_backward(const Tensor& input, const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Resampling and pooling.

/// Bilinear, half-pixel centers, edge clamped. Identity when sizes match.
Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor resize_bilinear_backward(const Tensor& grad_output, std::size_t in_h, std::size_t in_w);

Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Tensor& grad_output, std::size_t in_h, std::size_t in_w);

// ---------------------------------------------------------------------------
// Normalized weighted fusion of three aligned feature maps:
//   out = (w0*f0 + w1*f1 + w2*f2) / max(w0 + w1 + w2, eps)
// with one nonnegative weight per sample per branch (weights are [N,1,1,1]).

struct FuseGrads {
  std::array<Tensor, 3> features;
  std::array<Tensor, 3> weights;
};

Tensor weighted_fuse(const std::array<const Tensor*, 3>& features, const std::array<const Tensor*, 3>& weights,
                     double eps);

FuseGrads weighted_fuse_backward(const std::array<const Tensor*, 3>& features,
                                 const std::array<const Tensor*, 3>& weights, double eps,
                                 const Tensor& grad_output);

/// Elementwise sum of two same-shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);

/// Number of worker threads used by the batch-parallel kernels (0 = library default).
void set_num_threads(int threads);

}  // namespace scws::ops
