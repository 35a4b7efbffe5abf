#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "scws/data.hpp"
#include "scws/losses.hpp"

namespace scws {

struct MetricValues {
  double f_beta = 0.0;
  double e_xi = 0.0;
  double mae = 0.0;
};

struct ImageMetrics {
  std::string id;
  MetricValues values;
};

/// Dataset values are unweighted means over images.
struct EvalResult {
  MetricValues dataset;
  std::vector<ImageMetrics> per_image;
};

inline constexpr double kFBetaSq = 0.3;
inline constexpr int kThresholds = 256;  // t = i/255, i = 0..255

/// Per-threshold values, index i for threshold i/255 (pred >= i/255 is positive).
using ThresholdCurve = std::array<double, kThresholds>;

double mae(const SaliencyMap& pred, const BinaryMask& gt);
ThresholdCurve f_measure_curve(const SaliencyMap& pred, const BinaryMask& gt, double beta_sq = kFBetaSq);
ThresholdCurve e_measure_curve(const SaliencyMap& pred, const BinaryMask& gt);
/// Mean F-measure over the 256 thresholds. Throws std::domain_error when gt has no positives.
double f_measure(const SaliencyMap& pred, const BinaryMask& gt, double beta_sq = kFBetaSq);
/// Mean enhanced-alignment measure over the 256 thresholds. Throws std::domain_error when gt has no positives.
double e_measure(const SaliencyMap& pred, const BinaryMask& gt);
MetricValues evaluate_image(const SaliencyMap& pred, const BinaryMask& gt);

EvalResult aggregate(std::vector<ImageMetrics> per_image);

/// Reads `<id>.pgm` from `predictions_dir` for every manifest entry with a mask.
/// Missing predictions raise DataError listing every missing id.
EvalResult evaluate_dataset(const DatasetManifest& manifest, const std::filesystem::path& predictions_dir);

/// {"dataset": {...}, "images": [{"id", ...}]}, floats with 6 decimals.
std::string report_json(const EvalResult& result);

}  // namespace scws
