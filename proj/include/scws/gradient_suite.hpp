#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scws/gradcheck.hpp"

namespace scws {

struct GradSuiteEntry {
  std::string name;
  std::string group;  // "op", "loss" or "network"
  GradCheckReport report;
  double tolerance = 0.0;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double seconds = 0.0;
  bool passed() const;
};

/// Finite-difference checks (h = 1e-6) of every differentiable op, every loss
/// and the end-to-end training objective w.r.t. sampled network parameters.
GradSuiteResult run_gradient_suite(std::uint64_t seed);

}  // namespace scws
