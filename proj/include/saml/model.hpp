#pragma once

// Attentional recurrent encoder-decoder.
//
// Encoder: bidirectional LSTM over source embeddings; per-position forward and
// backward states are concatenated and layer-normalized into annotations.
// Attention: score(q, a) = v . tanh(Wq q + Wk a) over unpadded positions.
// Decoder: single LSTM layer whose input at each step is the token embedding
// concatenated with the attention context computed from the previous hidden
// state. The layer-normalized hidden state feeds the output projection.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saml/batch.hpp"
#include "saml/random.hpp"
#include "saml/tensor.hpp"

namespace saml {

struct ModelConfig {
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t embed_dim = 256;
  std::size_t hidden_dim = 256;
  std::size_t attention_dim = 256;
  double embed_dropout = 0.1;
  double hidden_dropout = 0.2;
  double init_range = 0.1;

  /// Dot-product alignment scores need embed_dim == hidden_dim.
  void validate() const;
  bool same_architecture(const ModelConfig& other) const;
};

template <typename Real>
class ModelParams {
 public:
  ModelParams() = default;

  /// Uniform(-init_range, init_range) weights; LSTM forget-gate biases start
  /// at 1, other LSTM biases at 0; layer-norm gains 1 and biases 0.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  /// Rebuilds from named tensors, inferring the architecture from shapes.
  static ModelParams from_tensors(std::vector<std::string> names, std::vector<Tensor<Real>> tensors,
                                  double embed_dropout, double hidden_dropout);

  static std::vector<std::string> parameter_names();

  const ModelConfig& config() const { return config_; }
  ModelConfig& config() { return config_; }
  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor<Real>& tensor(std::size_t i) const { return tensors_.at(i); }
  Tensor<Real>& tensor(std::size_t i) { return tensors_.at(i); }
  const Tensor<Real>& operator[](std::string_view name) const;
  Tensor<Real>& operator[](std::string_view name);
  std::size_t index(std::string_view name) const;
  std::size_t count() const;

  template <typename Other>
  ModelParams<Other> cast() const;

 private:
  template <typename>
  friend class ModelParams;

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor<Real>> tensors_;
};

template <typename Real>
struct EncoderOutput {
  /// [B×S×2h]
  Tensor<Real> annotations;
  /// annotations projected by the attention key matrix, [B×S×a]
  Tensor<Real> keys;
  /// [B×S], 1 at padding.
  std::vector<std::uint8_t> pad_mask;
  std::vector<std::size_t> lengths;

  std::size_t batch() const { return annotations.dim(0); }
  std::size_t positions() const { return annotations.dim(1); }

  /// Constant copy holding rows `rows` (repeats allowed).
  EncoderOutput select(std::span<const std::size_t> rows) const;
};

template <typename Real>
struct DecoderState {
  Tensor<Real> hidden;
  Tensor<Real> cell;
};

template <typename Real>
struct AttentionResult {
  /// [B×2h]
  Tensor<Real> context;
  /// [B×S]
  Tensor<Real> weights;
};

template <typename Real>
struct StepResult {
  /// Layer-normalized hidden output, [B×h].
  Tensor<Real> output;
  DecoderState<Real> state;
  Tensor<Real> attention;
};

/// Parameters bound for one forward pass: watched on `tape` when one is given
/// (training), plain constants otherwise. Passing a dropout stream enables
/// dropout.
template <typename Real>
class Model {
 public:
  Model(const ModelParams<Real>& params, Tape<Real>* tape, Rng* dropout_rng = nullptr);
  /// Uses `bound` (ModelParams order) as-is, e.g. tensors already watched on a tape.
  Model(const ModelConfig& config, std::vector<Tensor<Real>> bound, Rng* dropout_rng = nullptr);

  const ModelConfig& config() const { return config_; }
  bool training() const { return dropout_rng_ != nullptr; }
  Tape<Real>* tape() const { return tape_; }

  EncoderOutput<Real> encode(const TokenMatrix& source) const;
  DecoderState<Real> initial_state(const EncoderOutput<Real>& enc) const;
  AttentionResult<Real> attend(const Tensor<Real>& query, const EncoderOutput<Real>& enc) const;
  StepResult<Real> decode_step(const Tensor<Real>& input_embedding, const DecoderState<Real>& state,
                               const EncoderOutput<Real>& enc) const;
  /// W h + b.
  Tensor<Real> project(const Tensor<Real>& hidden) const;
  /// log softmax(W dropout(h) + b).
  Tensor<Real> step_log_probs(const Tensor<Real>& hidden) const;

  /// Target embedding rows, with embedding dropout in training.
  Tensor<Real> embed_target(std::span<const TokenId> ids) const;
  /// relaxed[B×V] · E_tgt, with embedding dropout in training.
  Tensor<Real> soft_embed(const Tensor<Real>& relaxed) const;
  /// Target embedding rows without dropout.
  Tensor<Real> target_rows(std::span<const TokenId> ids) const;
  /// relaxed[B×V] · E_tgt without dropout.
  Tensor<Real> soft_rows(const Tensor<Real>& relaxed) const;

  Tensor<Real> dropout(const Tensor<Real>& x, double rate) const;

  /// Bound parameter tensors in ModelParams order.
  const std::vector<Tensor<Real>>& bound() const { return bound_; }
  /// Gradients for every parameter, in ModelParams order.
  std::vector<Tensor<Real>> gradients(const Gradients<Real>& grads) const;

 private:
  struct Lstm {
    Tensor<Real> weight;
    Tensor<Real> bias;
  };

  DecoderState<Real> lstm_step(const Lstm& cell, const Tensor<Real>& input,
                               const DecoderState<Real>& state) const;
  const Tensor<Real>& p(std::string_view name) const;
  void bind_views();

  ModelConfig config_;
  Tape<Real>* tape_;
  Rng* dropout_rng_;
  std::vector<Tensor<Real>> bound_;
  Lstm enc_fwd_;
  Lstm enc_bwd_;
  Lstm dec_;
  Tensor<Real> out_weight_t_;
  Tensor<Real> score_column_;
};

}  // namespace saml
