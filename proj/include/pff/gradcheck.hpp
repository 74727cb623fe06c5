#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pff/params.hpp"

namespace pff {

struct GradCheckEntry {
  std::string name;
  double max_abs_error = 0.0;
  double rel_error = 0.0;  ///< ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
  double tolerance = 0.0;
};

/// Rebuilds the graph from the current parameter values and returns the scalar loss.
using GraphBuilder = std::function<ad::Var(const ModelParams&)>;

/// Compares backward() gradients of every parameter entry against central
/// differences with step h. Parameter values are restored afterwards.
/// Tensors whose gradient norm is below `norm_floor` are judged on absolute error.
GradCheckReport grad_check(const GraphBuilder& build, ModelParams& params, double tolerance,
                           double h = 1e-5, double norm_floor = 1e-8);

}  // namespace pff
