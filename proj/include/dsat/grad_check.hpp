#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsat/layers.hpp"

namespace dsat {

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  Real analytic = 0.0;
  Real numeric = 0.0;
  Real rel_error = 0.0;
};

struct GradCheckReport {
  Real max_rel_error = 0.0;
  GradCheckEntry worst;
  std::size_t checked = 0;
  std::vector<GradCheckEntry> flagged;  // entries with rel_error > tol
  bool passed() const { return flagged.empty(); }
};

/// Compares reverse-mode gradients of a scalar computation against central
/// differences, entry by entry, over every trainable parameter given.
///
/// Relative error is |analytic − numeric| / max(|analytic|, |numeric|, 1e-6). `loss` must
/// be deterministic: every stochastic switch has to be pinned by the caller.
/// Throws NumericError naming the parameter if either gradient is non-finite.
GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<Parameter>& params, Real eps,
                           Real tol);

}  // namespace dsat
