#include "saml/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace saml {
namespace {

constexpr double kMaskedScore = -1e9;

void require_nonempty(const Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  if (batch.target.rows != batch.size()) {
    throw std::invalid_argument("batch has " + std::to_string(batch.size()) + " sources but " +
                                std::to_string(batch.target.rows) + " targets");
  }
  for (std::size_t b = 0; b < batch.target.rows; ++b) {
    if (batch.target.lengths[b] == 0) {
      throw std::invalid_argument("reference sentence " + std::to_string(b) + " is empty");
    }
  }
}

template <typename Real>
Tensor<Real> normalize(const Tensor<Real>& total, const Batch& batch, Normalization mode) {
  const double denom = mode == Normalization::kPerWord ? static_cast<double>(batch.target_words())
                                                       : static_cast<double>(batch.size());
  return scale(total, static_cast<Real>(1.0 / denom));
}

std::vector<TokenId> bos_column(std::size_t rows) { return std::vector<TokenId>(rows, kBos); }

// Decoder input ids at step t >= 1 under teacher forcing.
std::vector<TokenId> reference_inputs(const TokenMatrix& target, std::size_t t) {
  return target.column(t - 1);
}

// Summed label-smoothed cross-entropy over real target positions.
template <typename Real>
Tensor<Real> smoothed_nll_sum(const std::vector<Tensor<Real>>& log_probs, const TokenMatrix& target,
                              double smoothing) {
  if (smoothing < 0 || smoothing >= 1) {
    throw std::invalid_argument("label smoothing must lie in [0, 1)");
  }
  std::vector<Tensor<Real>> per_step;
  per_step.reserve(log_probs.size());
  for (std::size_t t = 0; t < log_probs.size(); ++t) {
    const auto ids = target.column(t);
    Tensor<Real> word = neg(gather_last(log_probs[t], std::span<const TokenId>(ids)));
    if (smoothing > 0) {
      const auto width = static_cast<double>(log_probs[t].dim(1));
      Tensor<Real> uniform = scale(sum(log_probs[t], 1), static_cast<Real>(-smoothing / width));
      word = add(scale(word, static_cast<Real>(1 - smoothing)), uniform);
    }
    per_step.push_back(std::move(word));
  }
  return sum(mul(stack(per_step, 1), target_mask<Real>(target)));
}

// [rows×width] constant with row r filled by keep[r].
template <typename Real>
Tensor<Real> row_gate(const std::vector<bool>& keep, std::size_t width, bool value) {
  std::vector<Real> values(keep.size() * width);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(r * width), width,
                keep[r] == value ? Real(1) : Real(0));
  }
  return Tensor<Real>({keep.size(), width}, std::move(values));
}

std::vector<bool> flip_coins(std::size_t rows, double epsilon, Rng& coins) {
  std::vector<bool> use_reference(rows);
  for (std::size_t b = 0; b < rows; ++b) use_reference[b] = uniform01(coins) < epsilon;
  return use_reference;
}

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0 && epsilon <= 1)) {
    throw std::invalid_argument("reference probability must lie in [0, 1], got " +
                                std::to_string(epsilon));
  }
}

}  // namespace

double AnnealState::epsilon() const {
  if (!(k > 0)) throw std::invalid_argument("annealing constant k must be positive");
  return k / (k + std::exp(static_cast<double>(checkpoint) / k));
}

double anneal(const AnnealState& state) { return state.epsilon(); }

std::size_t rollout_cap(std::size_t reference_length, double ratio, std::size_t slack) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(reference_length))) + slack;
}

template <typename Real>
Tensor<Real> target_mask(const TokenMatrix& target) {
  std::vector<Real> values(target.rows * target.cols, Real(0));
  for (std::size_t r = 0; r < target.rows; ++r) {
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(r * target.cols), target.lengths[r],
                Real(1));
  }
  return Tensor<Real>({target.rows, target.cols}, std::move(values));
}

template <typename Real>
std::vector<Tensor<Real>> teacher_forced_log_probs(const Model<Real>& model, const Batch& batch,
                                                   const EncoderOutput<Real>& enc) {
  DecoderState<Real> state = model.initial_state(enc);
  std::vector<Tensor<Real>> out;
  out.reserve(batch.target.cols);
  for (std::size_t t = 0; t < batch.target.cols; ++t) {
    const auto ids = t == 0 ? bos_column(batch.size()) : reference_inputs(batch.target, t);
    auto step = model.decode_step(model.embed_target(ids), state, enc);
    state = step.state;
    out.push_back(model.step_log_probs(step.output));
  }
  return out;
}

template <typename Real>
Tensor<Real> ml_loss(const Model<Real>& model, const Batch& batch, const EncoderOutput<Real>& enc,
                     const LossOptions& options) {
  require_nonempty(batch);
  const auto log_probs = teacher_forced_log_probs(model, batch, enc);
  return normalize(smoothed_nll_sum(log_probs, batch.target, options.label_smoothing), batch,
                   options.normalization);
}

template <typename Real>
Tensor<Real> ml_loss(const Model<Real>& model, const Batch& batch, const LossOptions& options) {
  require_nonempty(batch);
  return ml_loss(model, batch, model.encode(batch.source), options);
}

template <typename Real>
Tensor<Real> ss_loss(const Model<Real>& model, const Batch& batch, double epsilon, Rng& coins,
                     const LossOptions& options) {
  require_nonempty(batch);
  check_epsilon(epsilon);
  const auto enc = model.encode(batch.source);
  DecoderState<Real> state = model.initial_state(enc);
  std::vector<Tensor<Real>> log_probs;
  for (std::size_t t = 0; t < batch.target.cols; ++t) {
    std::vector<TokenId> ids;
    if (t == 0) {
      ids = bos_column(batch.size());
    } else {
      ids = reference_inputs(batch.target, t);
      const auto greedy = argmax_rows(log_probs.back());
      const auto use_reference = flip_coins(batch.size(), epsilon, coins);
      for (std::size_t b = 0; b < ids.size(); ++b) {
        if (!use_reference[b]) ids[b] = greedy[b];
      }
    }
    auto step = model.decode_step(model.embed_target(ids), state, enc);
    state = step.state;
    log_probs.push_back(model.step_log_probs(step.output));
  }
  return normalize(smoothed_nll_sum(log_probs, batch.target, options.label_smoothing), batch,
                   options.normalization);
}

template <typename Real>
Tensor<Real> dss_loss(const Model<Real>& model, const Batch& batch, double epsilon,
                      const GumbelConfig& gumbel, Rng& coins, Rng& noise,
                      const LossOptions& options) {
  require_nonempty(batch);
  check_epsilon(epsilon);
  gumbel.validate();
  const auto enc = model.encode(batch.source);
  const double rate = model.config().embed_dropout;
  DecoderState<Real> state = model.initial_state(enc);
  std::vector<Tensor<Real>> log_probs;
  for (std::size_t t = 0; t < batch.target.cols; ++t) {
    Tensor<Real> input;
    if (t == 0) {
      input = model.target_rows(bos_column(batch.size()));
    } else {
      const auto ids = reference_inputs(batch.target, t);
      const auto use_reference = flip_coins(batch.size(), epsilon, coins);
      input = model.target_rows(ids);
      if (!std::all_of(use_reference.begin(), use_reference.end(), [](bool v) { return v; })) {
        const auto sample = st_gumbel_softmax(log_probs.back(), gumbel, noise);
        const std::size_t width = input.dim(1);
        input = add(mul(input, row_gate<Real>(use_reference, width, true)),
                    mul(model.soft_rows(sample.hard), row_gate<Real>(use_reference, width, false)));
      }
    }
    auto step = model.decode_step(model.dropout(input, rate), state, enc);
    state = step.state;
    log_probs.push_back(model.step_log_probs(step.output));
  }
  return normalize(smoothed_nll_sum(log_probs, batch.target, options.label_smoothing), batch,
                   options.normalization);
}

template <typename Real>
RolloutRecord<Real> rollout(const Model<Real>& model, const EncoderOutput<Real>& enc,
                            const std::vector<std::size_t>& max_lengths, const GumbelConfig& gumbel,
                            Relaxation relaxation, Rng& noise) {
  gumbel.validate();
  const std::size_t rows = enc.batch();
  if (max_lengths.size() != rows) {
    throw std::invalid_argument("rollout: " + std::to_string(max_lengths.size()) +
                                " length caps for batch of " + std::to_string(rows));
  }
  RolloutRecord<Real> record;
  record.tokens.assign(rows, {});
  record.lengths.assign(rows, 0);
  std::vector<bool> active(rows, true);
  for (std::size_t b = 0; b < rows; ++b) {
    if (max_lengths[b] == 0) active[b] = false;
  }
  const std::size_t horizon = *std::max_element(max_lengths.begin(), max_lengths.end());

  DecoderState<Real> state = model.initial_state(enc);
  Tensor<Real> input = model.embed_target(bos_column(rows));
  for (std::size_t j = 0; j < horizon; ++j) {
    if (std::none_of(active.begin(), active.end(), [](bool v) { return v; })) break;
    auto step = model.decode_step(input, state, enc);
    state = step.state;
    Tensor<Real> lp = model.step_log_probs(step.output);
    record.hidden.push_back(step.output);
    record.log_probs.push_back(lp);

    const Tensor<Real> draw = sample_gumbel<Real>(lp.shape(), noise);
    Tensor<Real> next;
    std::vector<std::int32_t> tokens;
    switch (relaxation) {
      case Relaxation::kStraightThrough: {
        auto sample = st_gumbel_softmax_with_noise(lp, draw, gumbel);
        next = sample.hard;
        tokens = std::move(sample.tokens);
        break;
      }
      case Relaxation::kGumbelSoftmax:
        next = relax_with_noise(lp, draw, gumbel);
        tokens = argmax_rows(perturb(lp, draw, gumbel.beta));
        break;
      case Relaxation::kDetached:
        tokens = argmax_rows(perturb(lp, draw, gumbel.beta));
        next = one_hot<Real>(tokens, lp.dim(1));
        break;
    }
    for (std::size_t b = 0; b < rows; ++b) {
      if (!active[b]) continue;
      record.tokens[b].push_back(tokens[b]);
      if (tokens[b] == kEos || record.tokens[b].size() == max_lengths[b]) {
        active[b] = false;
        record.lengths[b] = record.tokens[b].size();
      }
    }
    input = model.soft_embed(next);
  }
  return record;
}

template <typename Real>
Tensor<Real> log_soft_alignment(const Model<Real>& model, const RolloutRecord<Real>& rollout,
                                const TokenMatrix& reference) {
  const std::size_t rows = reference.rows;
  const std::size_t steps = rollout.steps();
  if (rollout.lengths.size() != rows) {
    throw std::invalid_argument("rollout and reference differ in batch size");
  }
  if (steps == 0) throw std::invalid_argument("rollout holds no steps");
  const std::size_t dim = model.config().embed_dim;
  const Tensor<Real> ref_emb =
      reshape(model.target_rows(reference.ids), Shape{rows, reference.cols, dim});
  const Tensor<Real> hidden = stack(rollout.hidden, 1);
  const Tensor<Real> scores = batch_matmul(ref_emb, transpose(hidden));
  std::vector<std::uint8_t> mask(rows * reference.cols * steps, 0);
  for (std::size_t b = 0; b < rows; ++b) {
    for (std::size_t t = 0; t < reference.cols; ++t) {
      for (std::size_t j = rollout.lengths[b]; j < steps; ++j) {
        mask[(b * reference.cols + t) * steps + j] = 1;
      }
    }
  }
  return log_softmax(masked_fill(scores, std::span<const std::uint8_t>(mask),
                                 static_cast<Real>(kMaskedScore)),
                     2);
}

template <typename Real>
Tensor<Real> soft_alignment(const Model<Real>& model, const RolloutRecord<Real>& rollout,
                            const TokenMatrix& reference) {
  return exp(log_soft_alignment(model, rollout, reference));
}

template <typename Real>
Tensor<Real> aligned_nll_sum(const Tensor<Real>& log_alignment, const Tensor<Real>& step_log_probs,
                             const TokenMatrix& reference,
                             const std::vector<std::size_t>& step_lengths) {
  const std::size_t rows = reference.rows;
  const std::size_t cols = reference.cols;
  if (log_alignment.rank() != 3 || step_log_probs.rank() != 3 || log_alignment.dim(0) != rows ||
      log_alignment.dim(1) != cols || step_log_probs.dim(0) != rows ||
      log_alignment.dim(2) != step_log_probs.dim(1) || step_lengths.size() != rows) {
    throw ShapeError("aligned_nll_sum: alignment " + to_string(log_alignment.shape()) +
                     " and log-probabilities " + to_string(step_log_probs.shape()) +
                     " do not match a reference of " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  const std::size_t steps = step_log_probs.dim(1);
  std::vector<std::uint8_t> mask(rows * cols * steps, 0);
  for (std::size_t b = 0; b < rows; ++b) {
    if (step_lengths[b] == 0) {
      throw std::invalid_argument("sampled sentence " + std::to_string(b) + " is empty");
    }
    for (std::size_t t = 0; t < cols; ++t) {
      for (std::size_t j = step_lengths[b]; j < steps; ++j) {
        mask[(b * cols + t) * steps + j] = 1;
      }
    }
  }
  Tensor<Real> joint =
      add(log_alignment, gather_targets(step_log_probs, std::span<const TokenId>(reference.ids), cols));
  joint = masked_fill(joint, std::span<const std::uint8_t>(mask), static_cast<Real>(kMaskedScore));
  return neg(sum(mul(logsumexp(joint, 2), target_mask<Real>(reference))));
}

template <typename Real>
Tensor<Real> saml_loss(const Model<Real>& model, const Batch& batch, const EncoderOutput<Real>& enc,
                       const SamlOptions& options, Rng& noise) {
  require_nonempty(batch);
  std::vector<std::size_t> caps(batch.size());
  for (std::size_t b = 0; b < caps.size(); ++b) {
    caps[b] = rollout_cap(batch.target.lengths[b], options.length_ratio, options.length_slack);
  }
  const auto record = rollout(model, enc, caps, options.gumbel, options.relaxation, noise);
  Tensor<Real> log_alignment = log_soft_alignment(model, record, batch.target);
  if (options.detach_alignment) log_alignment = log_alignment.detach();
  const Tensor<Real> total =
      aligned_nll_sum(log_alignment, stack(record.log_probs, 1), batch.target, record.lengths);
  return normalize(total, batch, options.normalization);
}

template <typename Real>
Tensor<Real> saml_loss(const Model<Real>& model, const Batch& batch, const SamlOptions& options,
                       Rng& noise) {
  require_nonempty(batch);
  return saml_loss(model, batch, model.encode(batch.source), options, noise);
}

template <typename Real>
Tensor<Real> combined_loss(const Model<Real>& model, const Batch& batch, const LossOptions& ml,
                           const SamlOptions& saml, Rng& noise) {
  require_nonempty(batch);
  const auto enc = model.encode(batch.source);
  return add(ml_loss(model, batch, enc, ml), saml_loss(model, batch, enc, saml, noise));
}

#define SAML_INSTANTIATE_OBJECTIVES(Real)                                                        \
  template Tensor<Real> target_mask<Real>(const TokenMatrix&);                                    \
  template std::vector<Tensor<Real>> teacher_forced_log_probs(const Model<Real>&, const Batch&,   \
                                                              const EncoderOutput<Real>&);        \
  template Tensor<Real> ml_loss(const Model<Real>&, const Batch&, const LossOptions&);            \
  template Tensor<Real> ml_loss(const Model<Real>&, const Batch&, const EncoderOutput<Real>&,     \
                                const LossOptions&);                                              \
  template Tensor<Real> ss_loss(const Model<Real>&, const Batch&, double, Rng&,                   \
                                const LossOptions&);                                              \
  template Tensor<Real> dss_loss(const Model<Real>&, const Batch&, double, const GumbelConfig&,   \
                                 Rng&, Rng&, const LossOptions&);                                 \
  template RolloutRecord<Real> rollout(const Model<Real>&, const EncoderOutput<Real>&,            \
                                       const std::vector<std::size_t>&, const GumbelConfig&,      \
                                       Relaxation, Rng&);                                         \
  template Tensor<Real> log_soft_alignment(const Model<Real>&, const RolloutRecord<Real>&,        \
                                           const TokenMatrix&);                                   \
  template Tensor<Real> soft_alignment(const Model<Real>&, const RolloutRecord<Real>&,            \
                                       const TokenMatrix&);                                       \
  template Tensor<Real> aligned_nll_sum(const Tensor<Real>&, const Tensor<Real>&,                 \
                                        const TokenMatrix&, const std::vector<std::size_t>&);     \
  template Tensor<Real> saml_loss(const Model<Real>&, const Batch&, const SamlOptions&, Rng&);    \
  template Tensor<Real> saml_loss(const Model<Real>&, const Batch&, const EncoderOutput<Real>&,   \
                                  const SamlOptions&, Rng&);                                      \
  template Tensor<Real> combined_loss(const Model<Real>&, const Batch&, const LossOptions&,       \
                                      const SamlOptions&, Rng&);

SAML_INSTANTIATE_OBJECTIVES(float)
SAML_INSTANTIATE_OBJECTIVES(double)

}  // namespace saml
