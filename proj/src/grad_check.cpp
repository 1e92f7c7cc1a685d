#include "dsat/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "dsat/error.hpp"

namespace dsat {

namespace {

// Gradients smaller than this are compared on an absolute scale.
constexpr Real kScaleFloor = 1e-6;

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<Parameter>& params, Real eps,
                           Real tol) {
  if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");
  for (const auto& p : params) Tensor(p.value).zero_grad();

  Tensor l = loss();
  l.backward();

  GradCheckReport report;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    Tensor value = p.value;
    const std::vector<Real> analytic(value.grad().begin(), value.grad().end());
    auto data = value.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Real saved = data[i];
      Real plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        data[i] = saved + eps;
        plus = loss().item();
        data[i] = saved - eps;
        minus = loss().item();
        data[i] = saved;
      }
      const Real numeric = (plus - minus) / (2.0 * eps);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        throw NumericError("grad_check: non-finite gradient for " + p.name + "[" + std::to_string(i) + "]");
      }
      GradCheckEntry e{p.name, i, analytic[i], numeric,
                       std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), kScaleFloor})};
      ++report.checked;
      if (e.rel_error > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = e.rel_error;
        report.worst = e;
      }
      if (e.rel_error > tol) report.flagged.push_back(e);
    }
  }
  return report;
}

}  // namespace dsat
