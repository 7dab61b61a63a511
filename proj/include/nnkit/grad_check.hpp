#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nnkit/graph.hpp"

namespace nnkit {

struct Evaluation {
  double loss = 0.0;
  std::vector<std::uint8_t> signature;  // see Graph::signature()
};

// Evaluates the model at the current parameter values. With
// `with_gradients`, also runs backward so Parameter::grad holds dL/dp.
using Closure = std::function<Evaluation(bool with_gradients)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Central-difference points: 2 gives (f(x+h) - f(x-h)) / 2h; 4 gives the
  // fourth-order five-point formula, which tolerates a larger step and so
  // less round-off on deep graphs.
  int stencil = 2;
  double tolerance = 1e-4;
  // Entries probed per parameter; 0 probes all of them. Sampled entries are
  // drawn deterministically from `seed`.
  std::size_t max_entries_per_parameter = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string parameter;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // probes that crossed a non-differentiable point
  bool passed = true;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> excluded_entries;
  std::vector<GradCheckEntry> failures;
};

double relative_error(double a, double b);

GradCheckReport grad_check(const Closure& closure, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

}  // namespace nnkit
