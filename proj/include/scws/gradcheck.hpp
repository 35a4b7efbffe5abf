#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scws/autograd.hpp"

namespace scws {

struct GradCheckOptions {
  double step = 1e-6;       // central-difference h, must lie in [1e-7, 1e-4]
  double tolerance = 1e-4;  // max relative error for a pass
  // Coordinates checked per input; 0 checks every coordinate.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;  // picks the sampled coordinates
  // Denominator floor of the relative error, so exact zeros compare absolutely.
  double scale_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

/// A scalar-valued function of differentiable inputs, built from ag ops.
using GradClosure = std::function<ag::Var(const std::vector<ag::Var>&)>;

/// Compares the reverse-mode gradient of `closure` against central finite
/// differences. Throws ShapeError if the closure output is not a scalar.
GradCheckReport check_gradient(const GradClosure& closure, const std::vector<Tensor>& inputs,
                               const GradCheckOptions& options = {});

/// Finite-difference check for a function whose gradient is computed outside
/// the graph: `value` evaluates f, `gradient` returns df/dx at the same point.
GradCheckReport check_gradient(const std::function<double(const Tensor&)>& value,
                               const std::function<Tensor(const Tensor&)>& gradient, const Tensor& point,
                               const GradCheckOptions& options = {});

std::string describe(const GradCheckReport& report);

}  // namespace scws
