#pragma once

#include <cstdint>
#include <vector>

#include "saml/batch.hpp"
#include "saml/grad_check.hpp"
#include "saml/model.hpp"
#include "saml/random.hpp"
#include "saml/tensor.hpp"

namespace saml::test {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> values(numel(shape));
  for (double& v : values) v = lo + (hi - lo) * uniform01(rng);
  return Tensor<double>(std::move(shape), std::move(values));
}

inline Sentence random_sentence(std::size_t length, std::size_t vocab, Rng& rng) {
  Sentence out(length);
  for (auto& id : out) {
    id = static_cast<TokenId>(kNumSpecials + rng() % (vocab - kNumSpecials));
  }
  return out;
}

/// V = 7, d = 8 toy architecture with dropout off.
inline ModelConfig tiny_config(std::size_t vocab = 7, std::size_t dim = 8) {
  ModelConfig c;
  c.src_vocab = vocab;
  c.tgt_vocab = vocab;
  c.embed_dim = dim;
  c.hidden_dim = dim;
  c.attention_dim = dim;
  c.embed_dropout = 0;
  c.hidden_dropout = 0;
  return c;
}

/// Random batch with source and target lengths in [lo, hi].
inline Batch random_batch(std::size_t rows, std::size_t lo, std::size_t hi, std::size_t vocab,
                          Rng& rng) {
  std::vector<Sentence> src;
  std::vector<Sentence> tgt;
  for (std::size_t r = 0; r < rows; ++r) {
    src.push_back(random_sentence(lo + rng() % (hi - lo + 1), vocab, rng));
    tgt.push_back(random_sentence(lo + rng() % (hi - lo + 1), vocab, rng));
  }
  return make_batch(src, tgt);
}

/// Finite-difference check of `loss(model)` over every parameter, with the
/// five-point stencil: whole-model losses have coordinates with gradients near
/// 1e-8 where three-point round-off alone exceeds 1e-4 relative error.
template <typename LossFn>
GradCheckReport model_grad_check(const ModelParams<double>& params, LossFn loss,
                                 double step = 1e-3) {
  std::vector<Tensor<double>> point;
  for (std::size_t i = 0; i < params.size(); ++i) point.push_back(params.tensor(i));
  return grad_check<double>(
      [&](Tape<double>&, std::span<const Tensor<double>> in) {
        const Model<double> model(params.config(), std::vector<Tensor<double>>(in.begin(), in.end()));
        return loss(model);
      },
      point, step, Stencil::kFivePoint);
}

}  // namespace saml::test
