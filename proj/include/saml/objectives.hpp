#pragma once

// Training objectives over a batch: maximum likelihood with teacher forcing,
// scheduled sampling (hard greedy predictions mixed into the prefix),
// differentiable scheduled sampling (Straight-Through Gumbel-Softmax samples
// mixed into the prefix) and soft-aligned maximum likelihood over a fully
// sampled hypothesis, plus the inverse-sigmoid annealing schedule.
//
// All losses are minimized: they return negated log-likelihoods.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "saml/batch.hpp"
#include "saml/model.hpp"
#include "saml/random.hpp"
#include "saml/sampling.hpp"

namespace saml {

enum class Normalization {
  /// Divide by the number of target words in the batch.
  kPerWord,
  /// Divide by the number of sentences in the batch.
  kPerSentence,
};

struct LossOptions {
  double label_smoothing = 0.1;
  Normalization normalization = Normalization::kPerWord;
};

/// How sampled tokens enter the next decoder step.
enum class Relaxation {
  /// One-hot forward, Gumbel-Softmax backward.
  kStraightThrough,
  /// Gumbel-Softmax forward and backward.
  kGumbelSoftmax,
  /// One-hot forward, no gradient through the sample.
  kDetached,
};

struct SamlOptions {
  GumbelConfig gumbel;
  Relaxation relaxation = Relaxation::kStraightThrough;
  bool detach_alignment = false;
  Normalization normalization = Normalization::kPerWord;
  /// Rollout length cap is ceil(length_ratio * T) + length_slack.
  double length_ratio = 1.5;
  std::size_t length_slack = 5;
};

/// Inverse-sigmoid decay of the reference-use probability.
struct AnnealState {
  double k = 10.0;
  std::size_t checkpoint = 0;

  /// k / (k + exp(checkpoint / k)).
  double epsilon() const;
};

double anneal(const AnnealState& state);

template <typename Real>
struct RolloutRecord {
  /// Sampled tokens per sentence; each ends with kEos unless capped.
  std::vector<Sentence> tokens;
  /// Per step, [B×h] decoder outputs.
  std::vector<Tensor<Real>> hidden;
  /// Per step, [B×V] log-distributions over the next token.
  std::vector<Tensor<Real>> log_probs;
  /// T' per sentence.
  std::vector<std::size_t> lengths;

  std::size_t steps() const { return hidden.size(); }
};

template <typename Real>
Tensor<Real> ml_loss(const Model<Real>& model, const Batch& batch, const LossOptions& options);
template <typename Real>
Tensor<Real> ml_loss(const Model<Real>& model, const Batch& batch, const EncoderOutput<Real>& enc,
                     const LossOptions& options);

/// Teacher-forced step log-distributions, one [B×V] tensor per target position.
template <typename Real>
std::vector<Tensor<Real>> teacher_forced_log_probs(const Model<Real>& model, const Batch& batch,
                                                   const EncoderOutput<Real>& enc);

/// Scheduled sampling: at each step after the first, every sentence
/// independently feeds its reference token with probability `epsilon` and the
/// model's greedy prediction from the previous step otherwise.
template <typename Real>
Tensor<Real> ss_loss(const Model<Real>& model, const Batch& batch, double epsilon, Rng& coins,
                     const LossOptions& options);

/// As ss_loss, with model predictions drawn by Straight-Through Gumbel-Softmax
/// and fed through soft_embed so gradients reach earlier steps.
template <typename Real>
Tensor<Real> dss_loss(const Model<Real>& model, const Batch& batch, double epsilon,
                      const GumbelConfig& gumbel, Rng& coins, Rng& noise,
                      const LossOptions& options);

/// Samples a hypothesis per sentence until kEos or max_lengths[b] tokens.
template <typename Real>
RolloutRecord<Real> rollout(const Model<Real>& model, const EncoderOutput<Real>& enc,
                            const std::vector<std::size_t>& max_lengths, const GumbelConfig& gumbel,
                            Relaxation relaxation, Rng& noise);

/// Rollout cap ceil(ratio * reference_length) + slack.
std::size_t rollout_cap(std::size_t reference_length, double ratio, std::size_t slack);

/// log a[b,t,j]: log-softmax over sampled positions j < T'_b of
/// h̃_j . e_{y_t}; masked positions hold a large negative value. [B×T×J]
template <typename Real>
Tensor<Real> log_soft_alignment(const Model<Real>& model, const RolloutRecord<Real>& rollout,
                                const TokenMatrix& reference);

/// exp(log_soft_alignment); masked entries are 0.
template <typename Real>
Tensor<Real> soft_alignment(const Model<Real>& model, const RolloutRecord<Real>& rollout,
                            const TokenMatrix& reference);

/// Summed -log sum_j a[b,t,j] p_j(y_t) over real target positions, evaluated
/// as logsumexp_j(log a + log p). `step_log_probs` is [B×J×V]; positions
/// j >= step_lengths[b] are excluded.
template <typename Real>
Tensor<Real> aligned_nll_sum(const Tensor<Real>& log_alignment, const Tensor<Real>& step_log_probs,
                             const TokenMatrix& reference,
                             const std::vector<std::size_t>& step_lengths);

template <typename Real>
Tensor<Real> saml_loss(const Model<Real>& model, const Batch& batch, const SamlOptions& options,
                       Rng& noise);
template <typename Real>
Tensor<Real> saml_loss(const Model<Real>& model, const Batch& batch, const EncoderOutput<Real>& enc,
                       const SamlOptions& options, Rng& noise);

/// ml_loss + saml_loss on one shared encoding of the batch.
template <typename Real>
Tensor<Real> combined_loss(const Model<Real>& model, const Batch& batch, const LossOptions& ml,
                           const SamlOptions& saml, Rng& noise);

/// Row-per-sentence 0/1 mask of real target positions, shaped [B×T].
template <typename Real>
Tensor<Real> target_mask(const TokenMatrix& target);

}  // namespace saml
