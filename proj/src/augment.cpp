#include <algorithm>
#include <cmath>

#include "scws/data.hpp"
#include "scws/ops.hpp"
#include "scws/random.hpp"

namespace scws {

namespace {

constexpr std::size_t kCropRerolls = 10;

// Nearest source index under half-pixel centers.
std::size_t nearest(std::size_t dst, std::size_t in, std::size_t out) {
  const auto src = static_cast<std::size_t>(std::floor((double(dst) + 0.5) * double(in) / double(out)));
  return std::min(src, in - 1);
}

// Applies `index(y, x) -> source pixel` to the scribble and mask; `image` is already transformed.
template <class Fn>
Sample remap_sample(const Sample& s, Tensor image, std::size_t height, std::size_t width, Fn index) {
  Sample out;
  out.id = s.id;
  out.image = std::move(image);
  out.scribble = ScribbleMask(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out.scribble.labels[y * width + x] = s.scribble.labels[index(y, x)];
  if (s.mask) {
    out.mask = BinaryMask(height, width);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.mask->values[y * width + x] = s.mask->values[index(y, x)];
  }
  return out;
}

}  // namespace

std::size_t augment_resize_side(std::size_t train_size) {
  std::size_t side = train_size + (train_size + 9) / 10;
  return side + side % 2;
}

AugmentParams draw_augment(std::uint64_t seed, std::size_t train_size, std::size_t attempt) {
  Rng rng = Rng::stream(seed, attempt);
  AugmentParams p;
  p.resized = augment_resize_side(train_size);
  const long margin = static_cast<long>(p.resized - train_size);
  p.y0 = static_cast<std::size_t>(rng.integer(0, margin));
  p.x0 = static_cast<std::size_t>(rng.integer(0, margin));
  p.flip = rng.coin(0.5);
  return p;
}

Sample resize_sample(const Sample& s, std::size_t height, std::size_t width) {
  const std::size_t h = s.height(), w = s.width();
  Tensor image = ops::resize_bilinear(s.image.reshaped({1, 3, h, w}), height, width).reshaped({3, height, width});
  return remap_sample(s, std::move(image), height, width,
                      [&](std::size_t y, std::size_t x) { return nearest(y, h, height) * w + nearest(x, w, width); });
}

Sample crop_sample(const Sample& s, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width) {
  const std::size_t h = s.height(), w = s.width();
  if (y0 + height > h || x0 + width > w) {
    throw ShapeError("crop_sample: window exceeds the " + std::to_string(h) + "x" + std::to_string(w) + " sample");
  }
  Tensor image({3, height, width});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) image[(c * height + y) * width + x] = s.image[(c * h + y0 + y) * w + x0 + x];
  return remap_sample(s, std::move(image), height, width,
                      [&](std::size_t y, std::size_t x) { return (y0 + y) * w + x0 + x; });
}

Sample flip_sample(const Sample& s) {
  const std::size_t h = s.height(), w = s.width();
  Tensor image({3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) image[(c * h + y) * w + x] = s.image[(c * h + y) * w + (w - 1 - x)];
  return remap_sample(s, std::move(image), h, w, [&](std::size_t y, std::size_t x) { return y * w + (w - 1 - x); });
}

Sample apply_augment(const Sample& s, const AugmentParams& p, std::size_t train_size) {
  Sample out = crop_sample(resize_sample(s, p.resized, p.resized), p.y0, p.x0, train_size, train_size);
  return p.flip ? flip_sample(out) : out;
}

Sample augment(const Sample& s, std::uint64_t seed, std::size_t train_size) {
  if (train_size < 16 || train_size % 16 != 0) {
    throw std::invalid_argument("augment: train_size must be a positive multiple of 16, got " +
                                std::to_string(train_size));
  }
  const std::size_t side = augment_resize_side(train_size);
  const Sample resized = resize_sample(s, side, side);
  const bool had_foreground = resized.scribble.count(Label::Foreground) > 0;
  for (std::size_t attempt = 0;; ++attempt) {
    const AugmentParams p = draw_augment(seed, train_size, attempt);
    Sample out = crop_sample(resized, p.y0, p.x0, train_size, train_size);
    if (had_foreground && out.scribble.count(Label::Foreground) == 0 && attempt < kCropRerolls) continue;
    return p.flip ? flip_sample(out) : out;
  }
}

}  // namespace scws
