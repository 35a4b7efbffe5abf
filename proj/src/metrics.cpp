#include "scws/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace scws {

namespace {

void check_pair(const SaliencyMap& pred, const BinaryMask& gt, const char* what) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError(std::string(what) + ": prediction is " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " but ground truth is " + std::to_string(gt.height) + "x" +
                     std::to_string(gt.width));
  }
  if (pred.values.empty()) throw ShapeError(std::string(what) + ": empty map");
}

void require_positive(const BinaryMask& gt, const char* what) {
  if (gt.positives() == 0) throw std::domain_error(std::string(what) + ": ground truth has no positive pixels");
}

// Highest i in [0,255] with v >= i/255, or -1 when v < 0.
int threshold_level(double v) {
  int i = static_cast<int>(std::clamp(std::floor(v * 255.0), -1.0, 255.0));
  while (i < 255 && v >= (i + 1) / 255.0) ++i;
  while (i >= 0 && v < i / 255.0) --i;
  return i;
}

// Confusion counts per threshold: predicted-positive pixels split by gt.
struct Counts {
  std::array<double, kThresholds> tp{}, fp{};
  double positives = 0, n = 0;
};

Counts count_thresholds(const SaliencyMap& pred, const BinaryMask& gt) {
  std::array<double, kThresholds + 1> pos_hist{}, neg_hist{};
  Counts c;
  c.n = double(pred.values.size());
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const int level = threshold_level(pred.values[i]);
    if (level < 0) continue;
    (gt.values[i] ? pos_hist : neg_hist)[std::size_t(level)] += 1;
  }
  c.positives = double(gt.positives());
  double tp = 0, fp = 0;
  for (int t = kThresholds - 1; t >= 0; --t) {
    tp += pos_hist[std::size_t(t)];
    fp += neg_hist[std::size_t(t)];
    c.tp[std::size_t(t)] = tp;
    c.fp[std::size_t(t)] = fp;
  }
  return c;
}

double curve_mean(const ThresholdCurve& curve) {
  double acc = 0;
  for (double v : curve) acc += v;
  return acc / kThresholds;
}

}  // namespace

double mae(const SaliencyMap& pred, const BinaryMask& gt) {
  check_pair(pred, gt, "mae");
  double s = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) s += std::abs(pred.values[i] - gt.values[i]);
  return s / double(pred.values.size());
}

ThresholdCurve f_measure_curve(const SaliencyMap& pred, const BinaryMask& gt, double beta_sq) {
  check_pair(pred, gt, "f_measure");
  require_positive(gt, "f_measure");
  const Counts c = count_thresholds(pred, gt);
  ThresholdCurve curve{};
  for (std::size_t t = 0; t < kThresholds; ++t) {
    const double tp = c.tp[t], fp = c.fp[t], fn = c.positives - tp;
    if (tp + fp == 0) continue;
    const double precision = tp / (tp + fp), recall = tp / (tp + fn);
    const double den = beta_sq * precision + recall;
    if (den > 0) curve[t] = (1 + beta_sq) * precision * recall / den;
  }
  return curve;
}

ThresholdCurve e_measure_curve(const SaliencyMap& pred, const BinaryMask& gt) {
  check_pair(pred, gt, "e_measure");
  require_positive(gt, "e_measure");
  const Counts c = count_thresholds(pred, gt);
  const double n = c.n;
  const double g_mean = c.positives / n;
  auto enhanced = [](double pb, double pg) {
    const double xi = 2 * pb * pg / (pb * pb + pg * pg + 1e-12);
    return (xi + 1) * (xi + 1) / 4;
  };
  ThresholdCurve curve{};
  for (std::size_t t = 0; t < kThresholds; ++t) {
    const double tp = c.tp[t], fp = c.fp[t];
    const double fn = c.positives - tp, tn = n - c.positives - fp;
    const double b_mean = (tp + fp) / n;
    if (g_mean == 1.0 && b_mean == 1.0) {
      curve[t] = 1.0;
      continue;
    }
    // Centered values take one of four forms, by (B, gt).
    const double e = tp * enhanced(1 - b_mean, 1 - g_mean) + fp * enhanced(1 - b_mean, -g_mean) +
                     fn * enhanced(-b_mean, 1 - g_mean) + tn * enhanced(-b_mean, -g_mean);
    curve[t] = e / n;
  }
  return curve;
}

double f_measure(const SaliencyMap& pred, const BinaryMask& gt, double beta_sq) {
  return curve_mean(f_measure_curve(pred, gt, beta_sq));
}

double e_measure(const SaliencyMap& pred, const BinaryMask& gt) { return curve_mean(e_measure_curve(pred, gt)); }

MetricValues evaluate_image(const SaliencyMap& pred, const BinaryMask& gt) {
  return {f_measure(pred, gt), e_measure(pred, gt), mae(pred, gt)};
}

EvalResult aggregate(std::vector<ImageMetrics> per_image) {
  EvalResult r;
  r.per_image = std::move(per_image);
  if (r.per_image.empty()) return r;
  for (const auto& m : r.per_image) {
    r.dataset.f_beta += m.values.f_beta;
    r.dataset.e_xi += m.values.e_xi;
    r.dataset.mae += m.values.mae;
  }
  const double n = double(r.per_image.size());
  r.dataset.f_beta /= n;
  r.dataset.e_xi /= n;
  r.dataset.mae /= n;
  return r;
}

EvalResult evaluate_dataset(const DatasetManifest& manifest, const std::filesystem::path& predictions_dir) {
  std::vector<const ManifestEntry*> scored;
  std::string missing;
  for (const auto& e : manifest.entries) {
    if (!e.mask) continue;
    scored.push_back(&e);
    if (!std::filesystem::exists(predictions_dir / (e.id + ".pgm"))) missing += (missing.empty() ? "" : ", ") + e.id;
  }
  if (scored.empty()) throw DataError("evaluate: manifest has no ground-truth masks");
  if (!missing.empty()) throw DataError("evaluate: missing predictions in " + predictions_dir.string() + " for ids: " + missing);
  std::vector<ImageMetrics> per_image;
  for (const ManifestEntry* e : scored) {
    const SaliencyMap pred = load_map(predictions_dir / (e->id + ".pgm"));
    const BinaryMask gt = load_mask(manifest.root / *e->mask);
    try {
      per_image.push_back({e->id, evaluate_image(pred, gt)});
    } catch (const std::exception& ex) {
      throw DataError("evaluate: image " + e->id + ": " + ex.what());
    }
  }
  return aggregate(std::move(per_image));
}

std::string report_json(const EvalResult& result) {
  auto triple = [](const MetricValues& v) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "\"f_beta\": %.6f, \"e_xi\": %.6f, \"mae\": %.6f", v.f_beta, v.e_xi, v.mae);
    return std::string(buf);
  };
  std::string out = "{\"dataset\": {" + triple(result.dataset) + "}, \"images\": [";
  for (std::size_t i = 0; i < result.per_image.size(); ++i) {
    const auto& m = result.per_image[i];
    out += (i ? ", " : "") + std::string("{\"id\": ") + nlohmann::json(m.id).dump() + ", " + triple(m.values) + "}";
  }
  return out + "]}";
}

}  // namespace scws
