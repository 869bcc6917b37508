#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "saml/tensor.hpp"

namespace saml {

class NondeterministicFunction : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t coordinates = 0;
};

enum class Stencil {
  /// (f(x+h) - f(x-h)) / 2h
  kThreePoint,
  /// (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h; allows a larger step
  /// for the same truncation error, so round-off shrinks.
  kFivePoint,
};

/// Builds a scalar on `tape` from watched copies of the check point.
template <typename Real>
using ScalarFunction =
    std::function<Tensor<Real>(Tape<Real>& tape, std::span<const Tensor<Real>> inputs)>;

/// Compares the tape gradient of `fn` at `point` against central differences.
/// The relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
/// Throws NondeterministicFunction when two evaluations at `point` differ.
template <typename Real>
GradCheckReport grad_check(const ScalarFunction<Real>& fn, const std::vector<Tensor<Real>>& point,
                           double step = 1e-5, Stencil stencil = Stencil::kThreePoint);

}  // namespace saml
