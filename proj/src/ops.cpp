#include "scws/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scws::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, out_h, out_w;
  int stride, padding;

  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, int stride, int padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(padding));
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv2d: input channels (dim 1) = " + std::to_string(g.cin) + " but weight dim 1 = " +
                     std::to_string(weight.dim(1)));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) {
    throw ShapeError("conv2d: kernel dims (dims 2,3) must be odd, got " + std::to_string(g.kh) + "x" +
                     std::to_string(g.kw));
  }
  const auto span_h = static_cast<long>(g.h) + 2L * padding - static_cast<long>(g.kh);
  const auto span_w = static_cast<long>(g.w) + 2L * padding - static_cast<long>(g.kw);
  if (span_h < 0) {
    throw ShapeError("conv2d: height (dim 2) = " + std::to_string(g.h) + " is smaller than kernel " +
                     std::to_string(g.kh) + " with padding " + std::to_string(padding));
  }
  if (span_w < 0) {
    throw ShapeError("conv2d: width (dim 3) = " + std::to_string(g.w) + " is smaller than kernel " +
                     std::to_string(g.kw) + " with padding " + std::to_string(padding));
  }
  g.out_h = static_cast<std::size_t>(span_h / stride) + 1;
  g.out_w = static_cast<std::size_t>(span_w / stride) + 1;
  return g;
}

// Unfold one sample into a [cin*kh*kw, out_h*out_w] column matrix.
void im2col(const double* src, const ConvGeometry& g, double* col) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(ky);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* line = src + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.padding + static_cast<long>(kx);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : line[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* dst) {
  const std::size_t pixels = g.pixels();
  std::fill(dst, dst + g.cin * g.h * g.w, 0.0);
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* line = dst + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.padding + static_cast<long>(kx);
            if (ix >= 0 && ix < static_cast<long>(g.w)) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

// 1x1, stride 1, no padding: the column matrix is the input itself.
bool is_pointwise(const ConvGeometry& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.padding == 0; }

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

}  // namespace

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
  Eigen::setNbThreads(1);
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  const bool has_bias = !bias.empty();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias shape " + to_string(bias.shape()) + " does not match output channels (dim 0) " +
                     std::to_string(g.cout));
  }
  Tensor out({g.n, g.cout, g.out_h, g.out_w});
  const ConstMatrixMap w(weight.data().data(), static_cast<long>(g.cout), static_cast<long>(g.patch()));
  const auto n_samples = static_cast<long>(g.n);

#pragma omp parallel for schedule(static)
  for (long n = 0; n < n_samples; ++n) {
    const double* src = input.data().data() + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
    MatrixMap y(out.data().data() + static_cast<std::size_t>(n) * g.cout * g.pixels(), static_cast<long>(g.cout),
                static_cast<long>(g.pixels()));
    if (is_pointwise(g)) {
      y.noalias() = w * ConstMatrixMap(src, static_cast<long>(g.cin), static_cast<long>(g.pixels()));
    } else {
      Storage col(g.patch() * g.pixels());
      im2col(src, g, col.data());
      y.noalias() = w * ConstMatrixMap(col.data(), static_cast<long>(g.patch()), static_cast<long>(g.pixels()));
    }
    if (has_bias) {
      for (std::size_t c = 0; c < g.cout; ++c) y.row(static_cast<long>(c)).array() += bias[c];
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias, int stride, int padding,
                            const Tensor& grad_output, bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  if (grad_output.shape() != Shape{g.n, g.cout, g.out_h, g.out_w}) {
    throw ShapeError("conv2d_backward: grad_output shape " + to_string(grad_output.shape()) + " does not match " +
                     to_string({g.n, g.cout, g.out_h, g.out_w}));
  }
  Conv2dGrads grads;
  if (need_input_grad) grads.input = Tensor(input.shape());
  grads.weight = Tensor(weight.shape());
  if (has_bias) grads.bias = Tensor({g.cout});

  const ConstMatrixMap w(weight.data().data(), static_cast<long>(g.cout), static_cast<long>(g.patch()));
  const auto n_samples = static_cast<long>(g.n);
  // Per-sample weight gradients are reduced afterwards in sample order, so the
  // result does not depend on how samples are split across threads.
  std::vector<RowMatrix> partial(g.n);

#pragma omp parallel for schedule(static)
  for (long n = 0; n < n_samples; ++n) {
    const auto ns = static_cast<std::size_t>(n);
    const double* src = input.data().data() + ns * g.cin * g.h * g.w;
    const ConstMatrixMap dy(grad_output.data().data() + ns * g.cout * g.pixels(), static_cast<long>(g.cout),
                            static_cast<long>(g.pixels()));
    if (is_pointwise(g)) {
      const ConstMatrixMap x(src, static_cast<long>(g.cin), static_cast<long>(g.pixels()));
      partial[ns].noalias() = dy * x.transpose();
      if (need_input_grad) {
        MatrixMap dx(grads.input.data().data() + ns * g.cin * g.h * g.w, static_cast<long>(g.cin),
                     static_cast<long>(g.pixels()));
        dx.noalias() = w.transpose() * dy;
      }
    } else {
      Storage col(g.patch() * g.pixels());
      im2col(src, g, col.data());
      const ConstMatrixMap x(col.data(), static_cast<long>(g.patch()), static_cast<long>(g.pixels()));
      partial[ns].noalias() = dy * x.transpose();
      if (need_input_grad) {
        MatrixMap dcol(col.data(), static_cast<long>(g.patch()), static_cast<long>(g.pixels()));
        dcol.noalias() = w.transpose() * dy;
        col2im(col.data(), g, grads.input.data().data() + ns * g.cin * g.h * g.w);
      }
    }
  }

  MatrixMap dw(grads.weight.data().data(), static_cast<long>(g.cout), static_cast<long>(g.patch()));
  for (const auto& p : partial) dw += p;
  if (has_bias) {
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t c = 0; c < g.cout; ++c) {
        const double* row = grad_output.data().data() + (n * g.cout + c) * g.pixels();
        double s = 0.0;
        for (std::size_t p = 0; p < g.pixels(); ++p) s += row[p];
        grads.bias[c] += s;
      }
    }
  }
  return grads;
}

BatchNormStats BatchNormStats::fresh(std::size_t channels) {
  return {Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode,
                  double eps, double momentum, BatchNormCache* cache, bool update_stats) {
  require_rank(input, 4, "batch_norm input");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batch_norm: channel count (dim 1) = " + std::to_string(c) + " but gamma " +
                     to_string(gamma.shape()) + ", beta " + to_string(beta.shape()));
  }
  if (stats.running_mean.shape() != Shape{c} || stats.running_var.shape() != Shape{c}) {
    throw ShapeError("batch_norm: running stats do not match channel count " + std::to_string(c));
  }
  if (!(eps > 0.0)) throw std::invalid_argument("batch_norm: eps must be > 0");

  Tensor out(input.shape());
  std::vector<double> inv_std(c);
  const double count = static_cast<double>(n * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::Train) {
      for (std::size_t s = 0; s < n; ++s) {
        const double* x = input.data().data() + (s * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) mean += x[p];
      }
      mean /= count;
      for (std::size_t s = 0; s < n; ++s) {
        const double* x = input.data().data() + (s * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) var += (x[p] - mean) * (x[p] - mean);
      }
      var /= count;
      if (update_stats) {
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        stats.running_mean[ch] = (1.0 - momentum) * stats.running_mean[ch] + momentum * mean;
        stats.running_var[ch] = (1.0 - momentum) * stats.running_var[ch] + momentum * unbiased;
      }
    } else {
      mean = stats.running_mean[ch];
      var = stats.running_var[ch];
    }
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) out[base + p] = (input[base + p] - mean) * inv_std[ch];
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = out;
    cache->inv_std = inv_std;
  }
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* y = out.data().data() + (s * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) y[p] = gamma[ch] * y[p] + beta[ch];
    }
  }
  return out;
}

BatchNormGrads batch_norm_backward(const BatchNormCache& cache, const Tensor& gamma, const Tensor& grad_output) {
  const Tensor& xhat = cache.normalized;
  require_same(xhat, grad_output, "batch_norm_backward");
  const std::size_t n = xhat.dim(0), c = xhat.dim(1), hw = xhat.dim(2) * xhat.dim(3);
  const double count = static_cast<double>(n * hw);
  BatchNormGrads grads{Tensor(xhat.shape()), Tensor({c}), Tensor({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        sum_dy += grad_output[base + p];
        sum_dy_xhat += grad_output[base + p] * xhat[base + p];
      }
    }
    grads.beta[ch] = sum_dy;
    grads.gamma[ch] = sum_dy_xhat;
    const double scale = gamma[ch] * cache.inv_std[ch];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const double dy = grad_output[base + p];
        grads.input[base + p] = cache.mode == Mode::Train
                                    ? scale * (dy - sum_dy / count - xhat[base + p] * sum_dy_xhat / count)
                                    : scale * dy;
      }
    }
  }
  return grads;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  require_same(input, grad_output, "relu_backward");
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0 ? grad_output[i] : 0.0;
  return out;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const double x = input[i];
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_output) {
  require_same(output, grad_output, "sigmoid_backward");
  Tensor out(output.shape());
  for (std::size_t i = 0; i < output.numel(); ++i) out[i] = grad_output[i] * output[i] * (1.0 - output[i]);
  return out;
}

Tensor softplus(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const double x = input[i];
    out[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  return out;
}

Tensor softplus_backward(const Tensor& input, const Tensor& grad_output) {
  require_same(input, grad_output, "softplus_backward");
  Tensor out = sigmoid(input);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= grad_output[i];
  return out;
}

namespace {

// Source coordinate and interpolation weights for one output index.
struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 4, "resize_bilinear input");
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: output size must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), in_h = input.dim(2), in_w = input.dim(3);
  if (in_h == out_h && in_w == out_w) return input;
  const auto ty = bilinear_taps(in_h, out_h);
  const auto tx = bilinear_taps(in_w, out_w);
  Tensor out({n, c, out_h, out_w});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = input.data().data() + plane * in_h * in_w;
    double* dst = out.data().data() + plane * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double* r0 = src + ty[y].lo * in_w;
      const double* r1 = src + ty[y].hi * in_w;
      const double fy = ty[y].frac;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double fx = tx[x].frac;
        const double top = r0[tx[x].lo] + fx * (r0[tx[x].hi] - r0[tx[x].lo]);
        const double bot = r1[tx[x].lo] + fx * (r1[tx[x].hi] - r1[tx[x].lo]);
        dst[y * out_w + x] = top + fy * (bot - top);
      }
    }
  }
  return out;
}

Tensor resize_bilinear_backward(const Tensor& grad_output, std::size_t in_h, std::size_t in_w) {
  require_rank(grad_output, 4, "resize_bilinear_backward grad");
  const std::size_t n = grad_output.dim(0), c = grad_output.dim(1);
  const std::size_t out_h = grad_output.dim(2), out_w = grad_output.dim(3);
  if (in_h == out_h && in_w == out_w) return grad_output;
  const auto ty = bilinear_taps(in_h, out_h);
  const auto tx = bilinear_taps(in_w, out_w);
  Tensor grad({n, c, in_h, in_w});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* g = grad_output.data().data() + plane * out_h * out_w;
    double* dst = grad.data().data() + plane * in_h * in_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = ty[y].frac;
      double* r0 = dst + ty[y].lo * in_w;
      double* r1 = dst + ty[y].hi * in_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double fx = tx[x].frac;
        const double v = g[y * out_w + x];
        r0[tx[x].lo] += v * (1.0 - fy) * (1.0 - fx);
        r0[tx[x].hi] += v * (1.0 - fy) * fx;
        r1[tx[x].lo] += v * fy * (1.0 - fx);
        r1[tx[x].hi] += v * fy * fx;
      }
    }
  }
  return grad;
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool input");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  Tensor out({n, c, 1, 1});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = input.data().data() + plane * hw;
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += src[p];
    out[plane] = s / static_cast<double>(hw);
  }
  return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_output, std::size_t in_h, std::size_t in_w) {
  require_rank(grad_output, 4, "global_avg_pool_backward grad");
  const std::size_t n = grad_output.dim(0), c = grad_output.dim(1), hw = in_h * in_w;
  Tensor grad({n, c, in_h, in_w});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double g = grad_output[plane] / static_cast<double>(hw);
    std::fill(grad.data().begin() + static_cast<long>(plane * hw),
              grad.data().begin() + static_cast<long>((plane + 1) * hw), g);
  }
  return grad;
}

namespace {

void check_fuse_shapes(const std::array<const Tensor*, 3>& f, const std::array<const Tensor*, 3>& w) {
  for (std::size_t b = 0; b < 3; ++b) {
    require_rank(*f[b], 4, "weighted_fuse feature");
    if (!f[b]->same_shape(*f[0])) {
      throw ShapeError("weighted_fuse: feature " + std::to_string(b) + " has shape " + to_string(f[b]->shape()) +
                       ", expected " + to_string(f[0]->shape()));
    }
    if (w[b]->shape() != Shape{f[0]->dim(0), 1, 1, 1}) {
      throw ShapeError("weighted_fuse: weight " + std::to_string(b) + " has shape " + to_string(w[b]->shape()) +
                       ", expected [N,1,1,1] with N=" + std::to_string(f[0]->dim(0)));
    }
  }
}

}  // namespace

Tensor weighted_fuse(const std::array<const Tensor*, 3>& features, const std::array<const Tensor*, 3>& weights,
                     double eps) {
  check_fuse_shapes(features, weights);
  const Tensor& f0 = *features[0];
  const std::size_t n = f0.dim(0), per = f0.numel() / n;
  Tensor out(f0.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const double w0 = (*weights[0])[s], w1 = (*weights[1])[s], w2 = (*weights[2])[s];
    const double denom = std::max(w0 + w1 + w2, eps);
    for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
      out[i] = (w0 * f0[i] + w1 * (*features[1])[i] + w2 * (*features[2])[i]) / denom;
    }
  }
  return out;
}

FuseGrads weighted_fuse_backward(const std::array<const Tensor*, 3>& features,
                                 const std::array<const Tensor*, 3>& weights, double eps,
                                 const Tensor& grad_output) {
  check_fuse_shapes(features, weights);
  require_same(*features[0], grad_output, "weighted_fuse_backward");
  const std::size_t n = features[0]->dim(0), per = features[0]->numel() / n;
  FuseGrads grads;
  for (std::size_t b = 0; b < 3; ++b) {
    grads.features[b] = Tensor(features[b]->shape());
    grads.weights[b] = Tensor(weights[b]->shape());
  }
  for (std::size_t s = 0; s < n; ++s) {
    std::array<double, 3> w{};
    for (std::size_t b = 0; b < 3; ++b) w[b] = (*weights[b])[s];
    const double sum = w[0] + w[1] + w[2];
    const double denom = std::max(sum, eps);
    // d out / d w_b = (f_b - out) / denom while the sum is above eps, f_b / eps below it.
    const bool floored = sum < eps;
    std::array<double, 3> acc{};
    for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
      const double g = grad_output[i];
      const double fused =
          (w[0] * (*features[0])[i] + w[1] * (*features[1])[i] + w[2] * (*features[2])[i]) / denom;
      for (std::size_t b = 0; b < 3; ++b) {
        grads.features[b][i] = g * w[b] / denom;
        acc[b] += g * ((*features[b])[i] - (floored ? 0.0 : fused));
      }
    }
    for (std::size_t b = 0; b < 3; ++b) grads.weights[b][s] = acc[b] / denom;
  }
  return grads;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out = a;
  out += b;
  return out;
}

}  // namespace scws::ops
