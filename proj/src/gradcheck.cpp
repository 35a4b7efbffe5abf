#include "scws/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

namespace scws {

namespace {

void validate(const GradCheckOptions& options) {
  if (options.step < 1e-7 || options.step > 1e-4) {
    throw std::invalid_argument("check_gradient: step must lie in [1e-7, 1e-4]");
  }
}

std::vector<std::size_t> pick_coords(std::size_t numel, const GradCheckOptions& options, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), 0);
  if (options.max_coords_per_input == 0 || options.max_coords_per_input >= numel) return idx;
  // Partial Fisher-Yates; std::shuffle's exact sequence is implementation-defined.
  for (std::size_t i = 0; i < options.max_coords_per_input; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (numel - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(options.max_coords_per_input);
  return idx;
}

void record(GradCheckReport& report, std::size_t input, std::size_t index, double analytic, double numeric,
            double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  const double err = std::abs(analytic - numeric) / denom;
  ++report.coords_checked;
  if (report.coords_checked == 1 || err > report.max_rel_error) {
    report.max_rel_error = err;
    report.worst_input = input;
    report.worst_index = index;
    report.worst_analytic = analytic;
    report.worst_numeric = numeric;
  }
}

double eval_scalar(const GradClosure& closure, const std::vector<Tensor>& inputs) {
  std::vector<ag::Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(ag::constant(t));
  return closure(vars).value()[0];
}

}  // namespace

GradCheckReport check_gradient(const GradClosure& closure, const std::vector<Tensor>& inputs,
                               const GradCheckOptions& options) {
  validate(options);
  std::vector<ag::Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(ag::leaf(t));
  const ag::Var out = closure(leaves);
  if (out.value().numel() != 1) {
    throw ShapeError("check_gradient: closure output must be scalar, got shape " + to_string(out.shape()));
  }
  ag::backward(out);

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = leaves[k].grad();
    for (std::size_t i : pick_coords(inputs[k].numel(), options, rng)) {
      const double orig = probe[k][i];
      probe[k][i] = orig + options.step;
      const double plus = eval_scalar(closure, probe);
      probe[k][i] = orig - options.step;
      const double minus = eval_scalar(closure, probe);
      probe[k][i] = orig;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      record(report, k, i, a, numeric, options.scale_floor);
    }
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

GradCheckReport check_gradient(const std::function<double(const Tensor&)>& value,
                               const std::function<Tensor(const Tensor&)>& gradient, const Tensor& point,
                               const GradCheckOptions& options) {
  validate(options);
  const Tensor analytic = gradient(point);
  if (!analytic.same_shape(point)) {
    throw ShapeError("check_gradient: gradient shape " + to_string(analytic.shape()) + " does not match point " +
                     to_string(point.shape()));
  }
  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  Tensor probe = point;
  for (std::size_t i : pick_coords(point.numel(), options, rng)) {
    const double orig = probe[i];
    probe[i] = orig + options.step;
    const double plus = value(probe);
    probe[i] = orig - options.step;
    const double minus = value(probe);
    probe[i] = orig;
    record(report, 0, i, analytic[i], (plus - minus) / (2.0 * options.step), options.scale_floor);
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

std::string describe(const GradCheckReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "max rel err %.3e over %zu coords (worst: input %zu[%zu] analytic %.6e numeric %.6e)",
                report.max_rel_error, report.coords_checked, report.worst_input, report.worst_index,
                report.worst_analytic, report.worst_numeric);
  return buf;
}

}  // namespace scws
