#include "scws/losses.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "scws/ops.hpp"

namespace scws {

namespace {

std::string dims(std::size_t h, std::size_t w) { return std::to_string(h) + "x" + std::to_string(w); }

void require_same_dims(const SaliencyMap& a, std::size_t h, std::size_t w, const char* what) {
  if (a.height != h || a.width != w) {
    throw ShapeError(std::string(what) + ": map is " + dims(a.height, a.width) + ", expected " + dims(h, w));
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Accepts [3,H,W] or [1,3,H,W].
void image_dims(const Tensor& image, std::size_t& h, std::size_t& w) {
  if (image.rank() == 3 && image.dim(0) == 3) {
    h = image.dim(1);
    w = image.dim(2);
  } else if (image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 3) {
    h = image.dim(2);
    w = image.dim(3);
  } else {
    throw ShapeError("expected an RGB image of shape [3,H,W], got " + to_string(image.shape()));
  }
}

}  // namespace

std::size_t ScribbleMask::count(Label label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

SaliencyMap::SaliencyMap(std::size_t h, std::size_t w, std::vector<double> v)
    : height(h), width(w), values(std::move(v)) {
  if (values.size() != h * w) throw ShapeError("SaliencyMap: " + std::to_string(values.size()) + " values for " + dims(h, w));
}

SaliencyMap map_from_tensor(const Tensor& t, std::size_t n) {
  require_rank(t, 4, "map_from_tensor");
  if (t.dim(1) != 1) throw ShapeError("map_from_tensor: expected 1 channel (dim 1), got " + std::to_string(t.dim(1)));
  if (n >= t.dim(0)) throw ShapeError("map_from_tensor: sample " + std::to_string(n) + " out of range");
  const std::size_t h = t.dim(2), w = t.dim(3);
  const auto begin = t.data().begin() + static_cast<long>(n * h * w);
  return SaliencyMap(h, w, std::vector<double>(begin, begin + static_cast<long>(h * w)));
}

Tensor tensor_from_map(const SaliencyMap& m) { return Tensor({1, 1, m.height, m.width}, m.values); }

void LscConfig::validate() const {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw std::invalid_argument("lsc.kernel_size must be odd and >= 1, got " + std::to_string(kernel_size));
  }
  if (!(sigma_p > 0.0) || !(sigma_i > 0.0)) throw std::invalid_argument("lsc sigmas must be > 0");
  if (!(weight_norm > 0.0)) throw std::invalid_argument("lsc.weight_norm must be > 0");
}

void ObjectiveConfig::validate() const {
  if (!(beta >= 0.0)) throw std::invalid_argument("objective.beta must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("objective.alpha must lie in [0,1]");
  for (double l : lambda) {
    if (!(l >= 0.0)) throw std::invalid_argument("objective.lambda entries must be >= 0");
  }
}

LossValue partial_ce(const SaliencyMap& pred, const ScribbleMask& mask) {
  require_same_dims(pred, mask.height, mask.width, "partial_ce");
  const std::size_t n_fg = mask.count(Label::Foreground);
  const std::size_t n_bg = mask.count(Label::Background);
  LossValue out{0.0, std::vector<double>(pred.size(), 0.0)};
  double fg = 0.0, bg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Label l = mask.labels[i];
    if (l == Label::Unlabeled) continue;
    const double p = pred.values[i];
    const double clamped = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    const bool inside = p > kProbClamp && p < 1.0 - kProbClamp;
    if (l == Label::Foreground) {
      fg -= std::log(clamped);
      if (inside) out.grad[i] = -1.0 / (clamped * static_cast<double>(n_fg));
    } else {
      bg -= std::log(1.0 - clamped);
      if (inside) out.grad[i] = 1.0 / ((1.0 - clamped) * static_cast<double>(n_bg));
    }
  }
  if (n_fg) out.value += fg / static_cast<double>(n_fg);
  if (n_bg) out.value += bg / static_cast<double>(n_bg);
  return out;
}

double bilateral_weight(std::array<double, 2> pi, std::array<double, 2> pj, std::array<double, 3> ci,
                        std::array<double, 3> cj, const LscConfig& cfg) {
  const double dp = (pi[0] - pj[0]) * (pi[0] - pj[0]) + (pi[1] - pj[1]) * (pi[1] - pj[1]);
  double dc = 0.0;
  for (int k = 0; k < 3; ++k) dc += (ci[k] - cj[k]) * (ci[k] - cj[k]);
  return std::exp(-dp / (2.0 * cfg.sigma_p * cfg.sigma_p) - dc / (2.0 * cfg.sigma_i * cfg.sigma_i)) /
         cfg.weight_norm;
}

LscKernel::LscKernel(const Tensor& image, const LscConfig& cfg) : radius_(cfg.kernel_size / 2) {
  cfg.validate();
  image_dims(image, height_, width_);
  const std::size_t plane = height_ * width_;
  const double* rgb = image.data().data();
  weights_.assign(plane * window(), 0.0);
  const auto h = static_cast<long>(height_), w = static_cast<long>(width_);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      const std::array<double, 3> ci{rgb[i], rgb[plane + i], rgb[2 * plane + i]};
      std::size_t o = 0;
      for (long dy = -radius_; dy <= radius_; ++dy) {
        for (long dx = -radius_; dx <= radius_; ++dx, ++o) {
          const long ny = y + dy, nx = x + dx;
          if ((dy == 0 && dx == 0) || ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const auto j = static_cast<std::size_t>(ny * w + nx);
          const std::array<double, 3> cj{rgb[j], rgb[plane + j], rgb[2 * plane + j]};
          weights_[i * window() + o] = bilateral_weight({double(y), double(x)}, {double(ny), double(nx)}, ci, cj, cfg);
        }
      }
    }
  }
}

LossValue lsc_loss(const SaliencyMap& pred, const LscKernel& kernel) {
  require_same_dims(pred, kernel.height(), kernel.width(), "lsc_loss");
  const auto h = static_cast<long>(pred.height), w = static_cast<long>(pred.width);
  const long r = kernel.radius();
  const double inv_count = 1.0 / static_cast<double>(pred.size());
  LossValue out{0.0, std::vector<double>(pred.size(), 0.0)};
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      const double si = pred.values[i];
      double row = 0.0;
      std::size_t o = 0;
      for (long dy = -r; dy <= r; ++dy) {
        for (long dx = -r; dx <= r; ++dx, ++o) {
          const double f = kernel.weight(i, o);
          if (f == 0.0) continue;
          const auto j = static_cast<std::size_t>((y + dy) * w + (x + dx));
          const double diff = si - pred.values[j];
          row += f * std::abs(diff);
          const double g = f * sign(diff) * inv_count;
          out.grad[i] += g;
          out.grad[j] -= g;
        }
      }
      out.value += row;
    }
  }
  out.value *= inv_count;
  return out;
}

LossValue lsc_loss(const SaliencyMap& pred, const Tensor& image, const LscConfig& cfg) {
  return lsc_loss(pred, LscKernel(image, cfg));
}

namespace {

std::size_t reflect(long i, std::size_t n) {
  if (n == 1) return 0;
  const auto m = static_cast<long>(n);
  if (i < 0) i = -i;
  if (i >= m) i = 2 * m - 2 - i;
  return static_cast<std::size_t>(i);
}

// 3x3 mean with reflection padding.
std::vector<double> box3(const std::vector<double>& v, std::size_t h, std::size_t w) {
  std::vector<double> out(v.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (long dy = -1; dy <= 1; ++dy) {
        const std::size_t ry = reflect(static_cast<long>(y) + dy, h);
        for (long dx = -1; dx <= 1; ++dx) s += v[ry * w + reflect(static_cast<long>(x) + dx, w)];
      }
      out[y * w + x] = s / 9.0;
    }
  }
  return out;
}

// Adjoint of box3.
std::vector<double> box3_adjoint(const std::vector<double>& g, std::size_t h, std::size_t w) {
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = g[y * w + x] / 9.0;
      for (long dy = -1; dy <= 1; ++dy) {
        const std::size_t ry = reflect(static_cast<long>(y) + dy, h);
        for (long dx = -1; dx <= 1; ++dx) out[ry * w + reflect(static_cast<long>(x) + dx, w)] += v;
      }
    }
  }
  return out;
}

struct WindowStats {
  std::vector<double> mx, my, xx, yy, xy;
};

WindowStats window_stats(const SaliencyMap& x, const SaliencyMap& y) {
  const std::size_t n = x.size();
  std::vector<double> x2(n), y2(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x2[i] = x.values[i] * x.values[i];
    y2[i] = y.values[i] * y.values[i];
    xy[i] = x.values[i] * y.values[i];
  }
  const std::size_t h = x.height, w = x.width;
  return {box3(x.values, h, w), box3(y.values, h, w), box3(x2, h, w), box3(y2, h, w), box3(xy, h, w)};
}

}  // namespace

SaliencyMap ssim(const SaliencyMap& x, const SaliencyMap& y) {
  require_same_dims(y, x.height, x.width, "ssim");
  const WindowStats s = window_stats(x, y);
  SaliencyMap out(x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double vx = s.xx[i] - s.mx[i] * s.mx[i];
    const double vy = s.yy[i] - s.my[i] * s.my[i];
    const double cxy = s.xy[i] - s.mx[i] * s.my[i];
    const double num = (2.0 * s.mx[i] * s.my[i] + kSsimC1) * (2.0 * cxy + kSsimC2);
    const double den = (s.mx[i] * s.mx[i] + s.my[i] * s.my[i] + kSsimC1) * (vx + vy + kSsimC2);
    out.values[i] = num / den;
  }
  return out;
}

SsimGrads ssim_backward(const SaliencyMap& x, const SaliencyMap& y, std::span<const double> weights) {
  require_same_dims(y, x.height, x.width, "ssim_backward");
  if (weights.size() != x.size()) throw ShapeError("ssim_backward: weight count does not match map size");
  const WindowStats s = window_stats(x, y);
  const std::size_t n = x.size();
  std::vector<double> g_mx(n), g_my(n), g_xx(n), g_yy(n), g_xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mx = s.mx[i], my = s.my[i];
    const double a = 2.0 * mx * my + kSsimC1;
    const double b = 2.0 * (s.xy[i] - mx * my) + kSsimC2;
    const double c = mx * mx + my * my + kSsimC1;
    const double d = (s.xx[i] - mx * mx) + (s.yy[i] - my * my) + kSsimC2;
    const double value = a * b / (c * d);
    const double dA = b / (c * d), dB = a / (c * d), dC = -value / c, dD = -value / d;
    const double g = weights[i];
    g_mx[i] = g * (2.0 * my * dA - 2.0 * my * dB + 2.0 * mx * dC - 2.0 * mx * dD);
    g_my[i] = g * (2.0 * mx * dA - 2.0 * mx * dB + 2.0 * my * dC - 2.0 * my * dD);
    g_xx[i] = g * dD;
    g_yy[i] = g * dD;
    g_xy[i] = g * 2.0 * dB;
  }
  const std::size_t h = x.height, w = x.width;
  const auto a_mx = box3_adjoint(g_mx, h, w), a_my = box3_adjoint(g_my, h, w);
  const auto a_xx = box3_adjoint(g_xx, h, w), a_yy = box3_adjoint(g_yy, h, w), a_xy = box3_adjoint(g_xy, h, w);
  SsimGrads out{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.x[i] = a_mx[i] + 2.0 * x.values[i] * a_xx[i] + y.values[i] * a_xy[i];
    out.y[i] = a_my[i] + 2.0 * y.values[i] * a_yy[i] + x.values[i] * a_xy[i];
  }
  return out;
}

PairLoss ssc_loss(const SaliencyMap& small_pred, const SaliencyMap& down, double alpha) {
  require_same_dims(down, small_pred.height, small_pred.width, "ssc_loss");
  const std::size_t m = small_pred.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  const SaliencyMap sim = ssim(small_pred, down);
  PairLoss out{0.0, std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
  for (std::size_t i = 0; i < m; ++i) {
    const double diff = small_pred.values[i] - down.values[i];
    out.value += alpha * (1.0 - sim.values[i]) / 2.0 + (1.0 - alpha) * std::abs(diff);
    out.grad_a[i] = (1.0 - alpha) * sign(diff) * inv_m;
    out.grad_b[i] = -out.grad_a[i];
  }
  out.value *= inv_m;
  if (alpha != 0.0) {
    const std::vector<double> weights(m, -alpha * 0.5 * inv_m);
    const SsimGrads g = ssim_backward(small_pred, down, weights);
    for (std::size_t i = 0; i < m; ++i) {
      out.grad_a[i] += g.x[i];
      out.grad_b[i] += g.y[i];
    }
  }
  return out;
}

ObjectiveResult total_objective(const ObjectiveInputs& in, const ObjectiveConfig& cfg, const LscConfig& lsc_cfg,
                                bool compute_lsc) {
  if (!in.final_map || !in.image || !in.mask) throw std::invalid_argument("total_objective: missing input");
  if (in.intermediates.size() != 3) {
    throw std::invalid_argument("total_objective: expected 3 intermediate maps, got " +
                                std::to_string(in.intermediates.size()));
  }
  const SaliencyMap& fin = *in.final_map;
  const std::size_t h = fin.height, w = fin.width;
  std::size_t ih = 0, iw = 0;
  image_dims(*in.image, ih, iw);
  if (ih != h || iw != w) throw ShapeError("total_objective: image is " + dims(ih, iw) + ", final map " + dims(h, w));
  require_same_dims(fin, in.mask->height, in.mask->width, "total_objective mask");
  for (const auto& m : in.intermediates) require_same_dims(m, h, w, "total_objective intermediate");

  ObjectiveResult res;
  ObjectiveTerms& t = res.terms;
  std::optional<LscKernel> kernel;
  if (compute_lsc) kernel.emplace(*in.image, lsc_cfg);

  LossValue ce = partial_ce(fin, *in.mask);
  t.ce = ce.value;
  res.grad_final = std::move(ce.grad);
  if (kernel) {
    LossValue l = lsc_loss(fin, *kernel);
    t.lsc = l.value;
    for (std::size_t i = 0; i < l.grad.size(); ++i) res.grad_final[i] += cfg.beta * l.grad[i];
  }

  if (in.small_map) {
    const SaliencyMap& small = *in.small_map;
    if (small.height > h || small.width > w || small.size() == 0) {
      throw ShapeError("total_objective: small-scale map " + dims(small.height, small.width) +
                       " is not a down-scale of " + dims(h, w));
    }
    const Tensor down_t = ops::resize_bilinear(tensor_from_map(fin), small.height, small.width);
    const SaliencyMap down = map_from_tensor(down_t);
    PairLoss ssc = ssc_loss(small, down, cfg.alpha);
    t.ssc = ssc.value;
    res.grad_small = std::move(ssc.grad_a);
    const Tensor back =
        ops::resize_bilinear_backward(Tensor({1, 1, small.height, small.width}, std::move(ssc.grad_b)), h, w);
    for (std::size_t i = 0; i < back.numel(); ++i) res.grad_final[i] += back[i];
  }

  for (std::size_t q = 0; q < 3; ++q) {
    LossValue c = partial_ce(in.intermediates[q], *in.mask);
    t.aux_ce[q] = c.value;
    std::vector<double>& g = res.grad_intermediate[q];
    g = std::move(c.grad);
    if (kernel) {
      LossValue l = lsc_loss(in.intermediates[q], *kernel);
      t.aux_lsc[q] = l.value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.beta * l.grad[i];
    }
    for (double& v : g) v *= cfg.lambda[q];
    t.aux += cfg.lambda[q] * (t.aux_ce[q] + cfg.beta * t.aux_lsc[q]);
  }
  t.total = t.ce + t.ssc + cfg.beta * t.lsc + t.aux;
  return res;
}

}  // namespace scws
