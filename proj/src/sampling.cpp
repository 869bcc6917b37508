#include "saml/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace saml {

void GumbelConfig::validate() const {
  if (!(tau > 0)) throw std::invalid_argument("gumbel temperature must be positive, got " + std::to_string(tau));
  if (!(beta >= 0)) throw std::invalid_argument("gumbel noise scale must be nonnegative, got " + std::to_string(beta));
}

double gumbel_from_uniform(double u) {
  u = std::clamp(u, kGumbelClamp, 1.0 - kGumbelClamp);
  return -std::log(-std::log(u));
}

template <typename Real>
Tensor<Real> sample_gumbel(const Shape& shape, Rng& rng) {
  std::vector<Real> values(numel(shape));
  for (Real& v : values) v = static_cast<Real>(gumbel_from_uniform(uniform01(rng)));
  return Tensor<Real>(shape, std::move(values));
}

template <typename Real>
Tensor<Real> perturb(const Tensor<Real>& log_probs, const Tensor<Real>& noise, double beta) {
  return add(log_probs.detach(), scale(noise, static_cast<Real>(beta)));
}

template <typename Real>
std::vector<std::int32_t> argmax_rows(const Tensor<Real>& scores) {
  if (scores.rank() == 0) throw ShapeError("argmax_rows: rank-0 input");
  const std::size_t width = scores.shape().back();
  if (width == 0) throw ShapeError("argmax_rows: empty rows");
  const std::size_t rows = scores.size() / width;
  auto v = scores.values();
  std::vector<std::int32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < width; ++c) {
      if (v[r * width + c] > v[r * width + best]) best = c;
    }
    out[r] = static_cast<std::int32_t>(best);
  }
  return out;
}

template <typename Real>
std::vector<std::int32_t> gumbel_max(const Tensor<Real>& log_probs, const GumbelConfig& cfg,
                                     Rng& rng) {
  cfg.validate();
  const Tensor<Real> noise = sample_gumbel<Real>(log_probs.shape(), rng);
  return argmax_rows(perturb(log_probs, noise, cfg.beta));
}

template <typename Real>
Tensor<Real> relax_with_noise(const Tensor<Real>& log_probs, const Tensor<Real>& noise,
                              const GumbelConfig& cfg) {
  cfg.validate();
  if (noise.shape() != log_probs.shape()) {
    throw ShapeError("gumbel noise shape " + to_string(noise.shape()) + " does not match " +
                     to_string(log_probs.shape()));
  }
  const Tensor<Real> shifted = add(log_probs, scale(noise, static_cast<Real>(cfg.beta)));
  return softmax(scale(shifted, static_cast<Real>(1.0 / cfg.tau)), log_probs.rank() - 1);
}

template <typename Real>
Tensor<Real> gumbel_softmax(const Tensor<Real>& log_probs, const GumbelConfig& cfg, Rng& rng) {
  const Tensor<Real> noise = sample_gumbel<Real>(log_probs.shape(), rng);
  return relax_with_noise(log_probs, noise, cfg);
}

template <typename Real>
Tensor<Real> one_hot(const std::vector<std::int32_t>& tokens, std::size_t width) {
  std::vector<Real> values(tokens.size() * width, Real(0));
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    if (tokens[r] < 0 || static_cast<std::size_t>(tokens[r]) >= width) {
      throw std::out_of_range("one_hot: token " + std::to_string(tokens[r]) + " at row " +
                              std::to_string(r) + " outside width " + std::to_string(width));
    }
    values[r * width + static_cast<std::size_t>(tokens[r])] = Real(1);
  }
  return Tensor<Real>({tokens.size(), width}, std::move(values));
}

template <typename Real>
StraightThroughSample<Real> st_gumbel_softmax_with_noise(const Tensor<Real>& log_probs,
                                                         const Tensor<Real>& noise,
                                                         const GumbelConfig& cfg) {
  StraightThroughSample<Real> s;
  s.noise = noise;
  s.relaxed = relax_with_noise(log_probs, noise, cfg);
  s.tokens = argmax_rows(perturb(log_probs, noise, cfg.beta));
  const std::size_t width = log_probs.shape().back();
  Tensor<Real> hard = one_hot<Real>(s.tokens, width);
  s.hard = straight_through(reshape(hard, log_probs.shape()), s.relaxed);
  return s;
}

template <typename Real>
StraightThroughSample<Real> st_gumbel_softmax(const Tensor<Real>& log_probs,
                                              const GumbelConfig& cfg, Rng& rng) {
  cfg.validate();
  return st_gumbel_softmax_with_noise(log_probs, sample_gumbel<Real>(log_probs.shape(), rng), cfg);
}

#define SAML_INSTANTIATE_SAMPLING(Real)                                                        \
  template Tensor<Real> sample_gumbel<Real>(const Shape&, Rng&);                               \
  template Tensor<Real> perturb(const Tensor<Real>&, const Tensor<Real>&, double);             \
  template std::vector<std::int32_t> argmax_rows(const Tensor<Real>&);                         \
  template std::vector<std::int32_t> gumbel_max(const Tensor<Real>&, const GumbelConfig&, Rng&); \
  template Tensor<Real> relax_with_noise(const Tensor<Real>&, const Tensor<Real>&,             \
                                         const GumbelConfig&);                                 \
  template Tensor<Real> gumbel_softmax(const Tensor<Real>&, const GumbelConfig&, Rng&);        \
  template Tensor<Real> one_hot<Real>(const std::vector<std::int32_t>&, std::size_t);          \
  template StraightThroughSample<Real> st_gumbel_softmax_with_noise(                           \
      const Tensor<Real>&, const Tensor<Real>&, const GumbelConfig&);                          \
  template StraightThroughSample<Real> st_gumbel_softmax(const Tensor<Real>&,                  \
                                                         const GumbelConfig&, Rng&);

SAML_INSTANTIATE_SAMPLING(float)
SAML_INSTANTIATE_SAMPLING(double)

#undef SAML_INSTANTIATE_SAMPLING

}  // namespace saml
