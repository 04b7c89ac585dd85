// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>

#include "xmodal/tape.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// Scalar objective over a parameter set. When `grad` is non-null the
/// objective also writes its analytic gradient there (same names and shapes).
using Objective = std::function<double(const ParamStore& params, ParamStore* grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the analytic gradient with central differences of step `step`
/// at every coordinate. The error of a coordinate is
/// |analytic - numeric| / max(|numeric|, floor). With the default floor of 1
/// small gradients are compared absolutely; pass a smaller floor for a
/// stricter relative check.
///
/// Throws EvaluationError if the objective is non-finite anywhere it is
/// evaluated, ArgumentError if step <= 0 or floor <= 0.
GradCheckReport grad_check(const Objective& f, const ParamStore& params, double step = 1e-4,
                           double floor = 1.0);

using ParamVars = std::map<std::string, ad::Var>;

ParamVars bind_params(ad::Tape& tape, const ParamStore& params);
ParamStore collect_grads(const ad::Tape& tape, const ParamVars& vars);

/// Adapts a tape-building function into an Objective.
Objective tape_objective(std::function<ad::Var(ad::Tape&, const ParamVars&)> build);

}  // namespace xmodal
