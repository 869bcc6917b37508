#pragma once

// Gumbel-noise sampling: hard Gumbel-Max draws, the Gumbel-Softmax relaxation
// and the Straight-Through estimator that pairs them.
//
// Only beta = 1 makes Gumbel-Max an exact sampler of the categorical given by
// the log-probabilities; other noise scales sharpen (beta < 1) or flatten
// (beta > 1) the sampling distribution. beta = 0 is plain argmax.

#include <cstdint>
#include <vector>

#include "saml/random.hpp"
#include "saml/tensor.hpp"

namespace saml {

struct GumbelConfig {
  double tau = 1.0;
  double beta = 0.5;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless tau > 0 and beta >= 0.
  void validate() const;
};

/// Uniform draws clamped to [1e-10, 1 - 1e-10] before g = -log(-log(u)).
inline constexpr double kGumbelClamp = 1e-10;

double gumbel_from_uniform(double u);

/// I.i.d. standard Gumbel noise, drawn in row-major order.
template <typename Real>
Tensor<Real> sample_gumbel(const Shape& shape, Rng& rng);

/// log_probs + beta * noise, as a constant.
template <typename Real>
Tensor<Real> perturb(const Tensor<Real>& log_probs, const Tensor<Real>& noise, double beta);

/// Row-wise argmax over the last axis; ties go to the lowest index.
template <typename Real>
std::vector<std::int32_t> argmax_rows(const Tensor<Real>& scores);

/// One index per row of log_probs[V] or log_probs[B×V].
template <typename Real>
std::vector<std::int32_t> gumbel_max(const Tensor<Real>& log_probs, const GumbelConfig& cfg,
                                     Rng& rng);

/// softmax((log_probs + beta * noise) / tau) with caller-supplied noise;
/// differentiable with respect to log_probs.
template <typename Real>
Tensor<Real> relax_with_noise(const Tensor<Real>& log_probs, const Tensor<Real>& noise,
                              const GumbelConfig& cfg);

template <typename Real>
Tensor<Real> gumbel_softmax(const Tensor<Real>& log_probs, const GumbelConfig& cfg, Rng& rng);

template <typename Real>
struct StraightThroughSample {
  /// Exactly one-hot forward; backward is that of `relaxed`.
  Tensor<Real> hard;
  Tensor<Real> relaxed;
  std::vector<std::int32_t> tokens;
  Tensor<Real> noise;
};

/// One noise draw shared by the hard decision and its relaxation.
template <typename Real>
StraightThroughSample<Real> st_gumbel_softmax_with_noise(const Tensor<Real>& log_probs,
                                                         const Tensor<Real>& noise,
                                                         const GumbelConfig& cfg);

template <typename Real>
StraightThroughSample<Real> st_gumbel_softmax(const Tensor<Real>& log_probs,
                                              const GumbelConfig& cfg, Rng& rng);

/// Constant one-hot rows of width `width`.
template <typename Real>
Tensor<Real> one_hot(const std::vector<std::int32_t>& tokens, std::size_t width);

}  // namespace saml
