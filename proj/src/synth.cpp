#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <optional>

#include "scws/data.hpp"
#include "scws/random.hpp"

namespace scws {

namespace {

constexpr int kPlacementTries = 100;
constexpr double kNoiseSigma = 0.03;
constexpr double kMinColorDistance = 0.25;

using Color = std::array<double, 3>;

double color_distance(const Color& a, const Color& b) {
  double s = 0;
  for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s);
}

struct Grid {
  long n;
  std::vector<int> cells;
  Grid(long size, int fill) : n(size), cells(std::size_t(size * size), fill) {}
  bool inside(long y, long x) const { return y >= 0 && x >= 0 && y < n && x < n; }
  int& at(long y, long x) { return cells[std::size_t(y * n + x)]; }
  int at(long y, long x) const { return cells[std::size_t(y * n + x)]; }
};

// Grows a stroke of straight segments inside `allowed` until `need` pixels are
// covered. A 3x3 brush is stamped at every unit step. When `branch` is set a
// stuck stroke restarts from an already-covered pixel, otherwise it ends.
std::vector<long> draw_stroke(const Grid& allowed, std::size_t need, bool branch, Rng& rng) {
  const long n = allowed.n;
  std::vector<long> candidates;
  for (long i = 0; i < n * n; ++i) {
    if (allowed.cells[std::size_t(i)]) candidates.push_back(i);
  }
  if (candidates.size() < need || candidates.empty()) return {};
  Grid covered(n, 0);
  std::vector<long> order;
  auto stamp = [&](long cy, long cx) {
    for (long dy = -1; dy <= 1 && order.size() < need; ++dy)
      for (long dx = -1; dx <= 1 && order.size() < need; ++dx) {
        const long y = cy + dy, x = cx + dx;
        if (!allowed.inside(y, x) || !allowed.at(y, x) || covered.at(y, x)) continue;
        covered.at(y, x) = 1;
        order.push_back(y * n + x);
      }
  };
  const long start = candidates[std::size_t(rng.integer(0, long(candidates.size()) - 1))];
  double py = double(start / n), px = double(start % n);
  stamp(start / n, start % n);
  int failures = 0;
  for (int guard = 0; order.size() < need && guard < 200000; ++guard) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const long length = rng.integer(3, std::max<long>(4, n / 4));
    int steps = 0;
    for (long s = 0; s < length && order.size() < need; ++s) {
      const double ny = py + std::sin(angle), nx = px + std::cos(angle);
      const long iy = std::lround(ny), ix = std::lround(nx);
      if (!allowed.inside(iy, ix) || !allowed.at(iy, ix)) break;
      py = ny;
      px = nx;
      stamp(iy, ix);
      ++steps;
    }
    if (steps > 0) {
      failures = 0;
      continue;
    }
    if (++failures < 50) continue;
    if (!branch) break;
    const long from = order[std::size_t(rng.integer(0, long(order.size()) - 1))];
    py = double(from / n);
    px = double(from % n);
    failures = 0;
  }
  return order;
}

struct Ellipse {
  double cy, cx, a, b, angle;
  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double u = (dx * std::cos(angle) + dy * std::sin(angle)) / a;
    const double v = (-dx * std::sin(angle) + dy * std::cos(angle)) / b;
    return u * u + v * v <= 1.0;
  }
};

std::optional<SynthSample> try_generate(std::size_t size, Rng& rng) {
  const long n = static_cast<long>(size);
  const std::size_t plane = size * size;
  const long object_gap = std::max<long>(1, n / 20);      // free pixels kept between objects
  const long background_gap = std::max<long>(1, n / 32);  // between the background stroke and any object

  // Low-frequency background: a linear blend between two colors along a random direction.
  Color c0, c1;
  for (auto& v : c0) v = rng.uniform(0.1, 0.9);
  for (auto& v : c1) v = rng.uniform(0.1, 0.9);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double half = (n - 1) / 2.0;
  const double span = (n - 1) * (std::abs(ct) + std::abs(st));
  std::vector<Color> pixels(plane);
  for (long y = 0; y < n; ++y)
    for (long x = 0; x < n; ++x) {
      const double t = 0.5 + ((x - half) * ct + (y - half) * st) / span;
      for (int c = 0; c < 3; ++c) pixels[std::size_t(y * n + x)][c] = c0[c] + (c1[c] - c0[c]) * t;
    }

  const int count = static_cast<int>(rng.integer(1, n >= 32 ? 3 : 1));  // 16x16 fits one object
  Grid owner(n, -1);
  std::vector<Color> colors;
  std::vector<SynthObject> objects;
  const double a_min = std::max(0.10 * double(n), 3.0), a_max = std::max(0.12, 0.30 / std::sqrt(double(count))) * double(n);
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementTries && !placed; ++attempt) {
      Ellipse e{};
      e.a = rng.uniform(a_min, a_max);
      e.b = rng.uniform(a_min, a_max);
      e.angle = rng.uniform(0.0, std::numbers::pi);
      const double extent = std::max(e.a, e.b) + object_gap;
      if (2 * extent >= double(n - 1)) continue;
      e.cy = rng.uniform(extent, double(n - 1) - extent);
      e.cx = rng.uniform(extent, double(n - 1) - extent);
      BinaryMask region(size, size);
      bool clash = false;
      for (long y = 0; y < n && !clash; ++y)
        for (long x = 0; x < n && !clash; ++x) {
          if (!e.contains(double(y), double(x))) continue;
          region.at(std::size_t(y), std::size_t(x)) = 1;
          for (long dy = -object_gap; dy <= object_gap && !clash; ++dy)
            for (long dx = -object_gap; dx <= object_gap && !clash; ++dx) {
              if (owner.inside(y + dy, x + dx) && owner.at(y + dy, x + dx) >= 0) clash = true;
            }
        }
      if (clash || region.positives() < 16) continue;

      Color local{};
      for (std::size_t i = 0; i < plane; ++i) {
        if (!region.values[i]) continue;
        for (int c = 0; c < 3; ++c) local[c] += pixels[i][c];
      }
      for (auto& v : local) v /= double(region.positives());
      std::optional<Color> color;
      for (int t = 0; t < kPlacementTries && !color; ++t) {
        Color cand;
        for (auto& v : cand) v = rng.uniform();
        bool ok = color_distance(cand, local) >= kMinColorDistance;
        for (const auto& other : colors) ok = ok && color_distance(cand, other) >= kMinColorDistance;
        if (ok) color = cand;
      }
      if (!color) continue;

      for (std::size_t i = 0; i < plane; ++i) {
        if (region.values[i]) {
          owner.cells[i] = k;
          pixels[i] = *color;
        }
      }
      colors.push_back(*color);
      objects.push_back({std::move(region), 0});
      placed = true;
    }
    if (!placed) return std::nullopt;
  }

  SynthSample out;
  Sample& s = out.sample;
  s.image = Tensor({3, size, size});
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(pixels[i][c] + rng.normal(0.0, kNoiseSigma), 0.0, 1.0);
      s.image[c * plane + i] = std::round(v * 255.0) / 255.0;  // 8-bit, as stored on disk
    }
  s.scribble = ScribbleMask(size, size);
  s.mask = BinaryMask(size, size);
  for (std::size_t i = 0; i < plane; ++i) s.mask->values[i] = owner.cells[i] >= 0 ? 1 : 0;

  // Foreground: 10-30% of each object's pixels, strictly inside it.
  for (int k = 0; k < count; ++k) {
    Grid interior(n, 0);
    for (long y = 1; y < n - 1; ++y)
      for (long x = 1; x < n - 1; ++x) {
        bool all = true;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) all = all && owner.at(y + dy, x + dx) == k;
        interior.at(y, x) = all ? 1 : 0;
      }
    const double fraction = rng.uniform(0.12, 0.28);
    const auto need = static_cast<std::size_t>(std::ceil(fraction * double(objects[std::size_t(k)].region.positives())));
    const auto stroke = draw_stroke(interior, need, true, rng);
    if (stroke.size() != need) return std::nullopt;
    for (long i : stroke) s.scribble.labels[std::size_t(i)] = Label::Foreground;
    objects[std::size_t(k)].scribbled = stroke.size();
  }

  // Background: a single stroke kept clear of every object.
  Grid clear(n, 0);
  std::size_t clear_count = 0;
  for (long y = 1; y < n - 1; ++y)
    for (long x = 1; x < n - 1; ++x) {
      bool ok = true;
      for (long dy = -background_gap; dy <= background_gap && ok; ++dy)
        for (long dx = -background_gap; dx <= background_gap && ok; ++dx) {
          ok = !owner.inside(y + dy, x + dx) || owner.at(y + dy, x + dx) < 0;
        }
      clear.at(y, x) = ok ? 1 : 0;
      clear_count += ok ? 1 : 0;
    }
  const auto bg_need = static_cast<std::size_t>(std::ceil(rng.uniform(0.05, 0.10) * double(clear_count)));
  const std::size_t bg_min = std::max<std::size_t>(std::size_t(n / 2), bg_need / 3);
  std::vector<long> bg_stroke;
  for (int attempt = 0; attempt < kPlacementTries && bg_stroke.size() < bg_min; ++attempt) {
    bg_stroke = draw_stroke(clear, bg_need, false, rng);
  }
  if (bg_stroke.size() < bg_min) return std::nullopt;
  for (long i : bg_stroke) s.scribble.labels[std::size_t(i)] = Label::Background;

  out.objects = std::move(objects);
  return out;
}

std::string sample_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return buf;
}

}  // namespace

SynthSample synth_sample(std::size_t size, std::uint64_t seed, std::size_t index) {
  if (size < 16 || size % 16 != 0) {
    throw std::invalid_argument("synth: size must be a positive multiple of 16, got " + std::to_string(size));
  }
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng = Rng::stream(seed, index, attempt);
    if (auto s = try_generate(size, rng)) {
      s->sample.id = sample_name(index);
      return std::move(*s);
    }
    std::cerr << "synth: warning: placement failed for sample " << index << " (attempt " << attempt
              << "), regenerating\n";
  }
}

DatasetManifest synth_generate(const std::filesystem::path& out_dir, std::size_t count, std::size_t size,
                               std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("synth: count must be >= 1");
  DatasetManifest m;
  m.root = out_dir;
  m.split = "manifest";
  for (std::size_t i = 0; i < count; ++i) {
    const SynthSample s = synth_sample(size, seed, i);
    ManifestEntry e;
    e.id = s.sample.id;
    e.image = std::filesystem::path("images") / (e.id + ".ppm");
    e.scribble = std::filesystem::path("scribbles") / (e.id + ".pgm");
    e.mask = std::filesystem::path("masks") / (e.id + ".pgm");
    save_image(out_dir / e.image, s.sample.image);
    save_scribble(out_dir / e.scribble, s.sample.scribble);
    save_mask(out_dir / *e.mask, *s.sample.mask);
    m.entries.push_back(std::move(e));
  }
  save_manifest(out_dir / "manifest.tsv", m);
  return m;
}

}  // namespace scws
