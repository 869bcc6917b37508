#include "saml/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace saml {
namespace {

template <typename Real>
Real evaluate(const ScalarFunction<Real>& fn, const std::vector<Tensor<Real>>& point) {
  Tape<Real> tape;
  std::vector<Tensor<Real>> watched;
  watched.reserve(point.size());
  for (const auto& p : point) watched.push_back(tape.watch(p));
  return fn(tape, watched).item();
}

}  // namespace

template <typename Real>
GradCheckReport grad_check(const ScalarFunction<Real>& fn, const std::vector<Tensor<Real>>& point,
                           double step, Stencil stencil) {
  Tape<Real> tape;
  std::vector<Tensor<Real>> watched;
  watched.reserve(point.size());
  for (const auto& p : point) watched.push_back(tape.watch(p));
  const Tensor<Real> loss = fn(tape, watched);
  if (evaluate(fn, point) != loss.item()) {
    throw NondeterministicFunction("grad_check: function value changed between evaluations");
  }
  const Gradients<Real> grads = tape.backward(loss);

  GradCheckReport report;
  std::vector<Tensor<Real>> probe = point;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const Tensor<Real> analytic = grads.of(watched[k]);
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      const Real original = point[k][i];
      auto at = [&](double offset) {
        probe[k].mutable_values()[i] = original + static_cast<Real>(offset);
        const double value = evaluate(fn, probe);
        probe[k].mutable_values()[i] = original;
        return value;
      };
      double numeric = 0;
      if (stencil == Stencil::kThreePoint) {
        numeric = (at(step) - at(-step)) / (2 * step);
      } else {
        numeric = (-at(2 * step) + 8 * at(step) - 8 * at(-step) + at(-2 * step)) / (12 * step);
      }
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = rel;
        report.worst_input = k;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

template GradCheckReport grad_check<float>(const ScalarFunction<float>&,
                                           const std::vector<Tensor<float>>&, double,
                                           Stencil);
template GradCheckReport grad_check<double>(const ScalarFunction<double>&,
                                            const std::vector<Tensor<double>>&, double,
                                            Stencil);

}  // namespace saml
