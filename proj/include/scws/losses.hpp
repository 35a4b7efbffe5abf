#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scws/tensor.hpp"

namespace scws {

/// Per-pixel scribble label. The enumerator values are the on-disk byte encoding.
enum class Label : std::uint8_t { Unlabeled = 0, Background = 128, Foreground = 255 };

struct ScribbleMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Label> labels;

  ScribbleMask() = default;
  ScribbleMask(std::size_t h, std::size_t w, Label fill = Label::Unlabeled) : height(h), width(w), labels(h * w, fill) {}

  Label at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  Label& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::size_t count(Label label) const;
};

/// H x W map with values in [0,1].
struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  SaliencyMap() = default;
  SaliencyMap(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}
  SaliencyMap(std::size_t h, std::size_t w, std::vector<double> v);

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  std::size_t size() const { return values.size(); }
};

/// Sample `n`, channel 0 of an [N,1,H,W] tensor.
SaliencyMap map_from_tensor(const Tensor& t, std::size_t n = 0);
/// [1,1,H,W] tensor holding the map.
Tensor tensor_from_map(const SaliencyMap& m);

struct LscConfig {
  int kernel_size = 5;
  double sigma_p = 6.0;
  double sigma_i = 0.1;
  double weight_norm = 1.0;  // w; every weight is scaled by 1/w

  void validate() const;
};

struct ObjectiveConfig {
  double beta = 0.3;
  double alpha = 0.85;
  // Ordered from the decoder stage nearest the output to the deepest.
  std::array<double, 3> lambda{0.8, 0.6, 0.4};

  void validate() const;
};

/// Scalar loss with its gradient w.r.t. the predicted map (same layout as the map).
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

inline constexpr double kProbClamp = 1e-7;

/// Foreground and background means of the negative log-likelihood over
/// scribbled pixels, each taken separately and summed.
LossValue partial_ce(const SaliencyMap& pred, const ScribbleMask& mask);

double bilateral_weight(std::array<double, 2> pi, std::array<double, 2> pj, std::array<double, 3> ci,
                        std::array<double, 3> cj, const LscConfig& cfg);

/// Precomputed bilateral weights F(i,j) for every pixel i and every offset of
/// the k x k window, for one image. Out-of-bounds neighbours and j == i carry 0.
class LscKernel {
 public:
  /// `image` is [3,H,W] or [1,3,H,W] with colors in [0,1].
  LscKernel(const Tensor& image, const LscConfig& cfg);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  int radius() const { return radius_; }
  std::size_t window() const { return static_cast<std::size_t>(2 * radius_ + 1) * (2 * radius_ + 1); }
  double weight(std::size_t pixel, std::size_t offset) const { return weights_[pixel * window() + offset]; }

 private:
  std::size_t height_, width_;
  int radius_;
  std::vector<double> weights_;
};

/// Mean over reference pixels of the bilateral-weighted L1 discrepancy to
/// each neighbour in the k x k window.
LossValue lsc_loss(const SaliencyMap& pred, const LscKernel& kernel);
LossValue lsc_loss(const SaliencyMap& pred, const Tensor& image, const LscConfig& cfg);

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Per-pixel single-scale SSIM over 3x3 reflection-padded mean windows.
SaliencyMap ssim(const SaliencyMap& x, const SaliencyMap& y);

struct SsimGrads {
  std::vector<double> x;
  std::vector<double> y;
};

/// Gradient of sum_p weights[p] * SSIM(x,y)[p].
SsimGrads ssim_backward(const SaliencyMap& x, const SaliencyMap& y, std::span<const double> weights);

struct PairLoss {
  double value = 0.0;
  std::vector<double> grad_a;
  std::vector<double> grad_b;
};

/// SSIM + L1 consistency between the prediction on the down-scaled input
/// (`small_pred`) and the down-scaled normal prediction (`down`).
PairLoss ssc_loss(const SaliencyMap& small_pred, const SaliencyMap& down, double alpha);

/// Individual terms of the combined objective for one sample.
struct ObjectiveTerms {
  double ce = 0.0;   // partial CE on the final map
  double lsc = 0.0;  // raw LSC on the final map (before beta)
  double ssc = 0.0;
  std::array<double, 3> aux_ce{};
  std::array<double, 3> aux_lsc{};
  double aux = 0.0;  // sum_q lambda_q * (aux_ce + beta * aux_lsc)
  double total = 0.0;
};

struct ObjectiveResult {
  ObjectiveTerms terms;
  std::vector<double> grad_final;
  std::array<std::vector<double>, 3> grad_intermediate;
  std::vector<double> grad_small;  // empty when no small-scale prediction is given
};

/// Inputs for one sample. All full-scale maps are at the image resolution.
struct ObjectiveInputs {
  const SaliencyMap* final_map = nullptr;
  std::span<const SaliencyMap> intermediates;  // exactly three
  const SaliencyMap* small_map = nullptr;      // prediction on the down-scaled input; null disables SSC
  const Tensor* image = nullptr;               // [3,H,W], colors in [0,1]
  const ScribbleMask* mask = nullptr;
};

/// Dominant loss on the final map plus lambda-weighted auxiliary losses on
/// the intermediates. When `compute_lsc` is false the LSC terms are skipped
/// entirely (reported as 0); beta = 0 still evaluates them for reporting.
ObjectiveResult total_objective(const ObjectiveInputs& in, const ObjectiveConfig& cfg, const LscConfig& lsc_cfg,
                                bool compute_lsc = true);

}  // namespace scws
