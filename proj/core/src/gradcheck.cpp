// SPDX-License-Identifier: Apache-2.0
#include "xmodal/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {
double finite_or_throw(double v, const std::string& where) {
  if (!std::isfinite(v)) throw EvaluationError("objective is not finite " + where);
  return v;
}
}  // namespace

GradCheckReport grad_check(const Objective& f, const ParamStore& params, double step,
                           double floor) {
  if (!(step > 0.0)) throw ArgumentError("grad_check step must be positive");
  if (!(floor > 0.0)) throw ArgumentError("grad_check floor must be positive");
  ParamStore analytic;
  finite_or_throw(f(params, &analytic), "at the base point");

  GradCheckReport report;
  ParamStore probe = params;
  for (auto& [name, tensor] : probe) {
    const auto g = analytic.find(name);
    if (g == analytic.end() || g->second.size() != tensor.size()) {
      throw DimensionError("objective returned no gradient for parameter " + name);
    }
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + step;
      const double up = finite_or_throw(f(probe, nullptr), "at " + name);
      tensor[i] = saved - step;
      const double down = finite_or_throw(f(probe, nullptr), "at " + name);
      tensor[i] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double scale = std::max(std::abs(numeric), floor);
      const double err = std::abs(g->second[i] - numeric) / scale;
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
        report.analytic = g->second[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

ParamVars bind_params(ad::Tape& tape, const ParamStore& params) {
  ParamVars vars;
  for (const auto& [name, t] : params) vars.emplace(name, tape.variable(t));
  return vars;
}

ParamStore collect_grads(const ad::Tape& tape, const ParamVars& vars) {
  ParamStore grads;
  for (const auto& [name, v] : vars) grads.emplace(name, tape.grad(v));
  return grads;
}

Objective tape_objective(std::function<ad::Var(ad::Tape&, const ParamVars&)> build) {
  return [build = std::move(build)](const ParamStore& params, ParamStore* grad) {
    ad::Tape tape;
    const ParamVars vars = bind_params(tape, params);
    const ad::Var out = build(tape, vars);
    const double value = out.value()[0];
    if (grad != nullptr) {
      tape.backward(out);
      *grad = collect_grads(tape, vars);
    }
    return value;
  };
}

}  // namespace xmodal
