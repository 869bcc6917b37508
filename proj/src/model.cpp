#include "saml/model.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace saml {
namespace {

constexpr double kMaskedScore = -1e9;

const std::vector<std::string>& names_in_order() {
  static const std::vector<std::string> names = {
      "src_embed",     "tgt_embed",     "enc_fwd.weight", "enc_fwd.bias",  "enc_bwd.weight",
      "enc_bwd.bias",  "enc_norm.gain", "enc_norm.bias",  "att.query",     "att.key",
      "att.score",     "dec_init.weight", "dec_init.bias", "dec.weight",   "dec.bias",
      "dec_norm.gain", "dec_norm.bias", "out.weight",     "out.bias",
  };
  return names;
}

std::vector<Shape> expected_shapes(const ModelConfig& c) {
  const std::size_t e = c.embed_dim;
  const std::size_t h = c.hidden_dim;
  const std::size_t a = c.attention_dim;
  return {
      {c.src_vocab, e}, {c.tgt_vocab, e}, {e + h, 4 * h}, {4 * h},     {e + h, 4 * h},
      {4 * h},          {2 * h},          {2 * h},        {h, a},      {2 * h, a},
      {a},              {2 * h, h},       {h},            {e + 3 * h, 4 * h}, {4 * h},
      {h},              {h},              {c.tgt_vocab, h}, {c.tgt_vocab},
  };
}

bool is_lstm_bias(const std::string& name) {
  return name == "enc_fwd.bias" || name == "enc_bwd.bias" || name == "dec.bias";
}

}  // namespace

void ModelConfig::validate() const {
  if (src_vocab <= kNumSpecials || tgt_vocab <= kNumSpecials) {
    throw std::invalid_argument("vocabularies must hold more than the four reserved tokens");
  }
  if (embed_dim == 0 || hidden_dim == 0 || attention_dim == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (embed_dim != hidden_dim) {
    throw std::invalid_argument("dot-product alignment needs embed_dim == hidden_dim, got " +
                                std::to_string(embed_dim) + " and " + std::to_string(hidden_dim));
  }
  if (embed_dropout < 0 || embed_dropout >= 1 || hidden_dropout < 0 || hidden_dropout >= 1) {
    throw std::invalid_argument("dropout rates must lie in [0, 1)");
  }
}

bool ModelConfig::same_architecture(const ModelConfig& other) const {
  return src_vocab == other.src_vocab && tgt_vocab == other.tgt_vocab &&
         embed_dim == other.embed_dim && hidden_dim == other.hidden_dim &&
         attention_dim == other.attention_dim;
}

// ---------------------------------------------------------------------------
// ModelParams

template <typename Real>
std::vector<std::string> ModelParams<Real>::parameter_names() {
  return names_in_order();
}

template <typename Real>
ModelParams<Real> ModelParams<Real>::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams out;
  out.config_ = config;
  out.names_ = names_in_order();
  Rng rng = make_stream(seed, kInitStream);
  const auto shapes = expected_shapes(config);
  const std::size_t h = config.hidden_dim;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const std::string& name = out.names_[i];
    std::vector<Real> values(numel(shapes[i]));
    if (is_lstm_bias(name)) {
      std::fill(values.begin() + static_cast<std::ptrdiff_t>(h),
                values.begin() + static_cast<std::ptrdiff_t>(2 * h), Real(1));
    } else if (name.ends_with("norm.gain")) {
      std::fill(values.begin(), values.end(), Real(1));
    } else if (!name.ends_with("norm.bias")) {
      for (Real& v : values) {
        v = static_cast<Real>((2 * uniform01(rng) - 1) * config.init_range);
      }
    }
    out.tensors_.emplace_back(shapes[i], std::move(values));
  }
  return out;
}

template <typename Real>
ModelParams<Real> ModelParams<Real>::from_tensors(std::vector<std::string> names,
                                                  std::vector<Tensor<Real>> tensors,
                                                  double embed_dropout, double hidden_dropout) {
  const auto& expected = names_in_order();
  if (names.size() != tensors.size()) {
    throw std::invalid_argument("parameter names and tensors differ in count");
  }
  ModelParams out;
  out.names_ = expected;
  out.tensors_.resize(expected.size());
  std::vector<bool> seen(expected.size(), false);
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = std::find(expected.begin(), expected.end(), names[i]);
    if (it == expected.end()) throw std::invalid_argument("unknown parameter '" + names[i] + "'");
    const auto k = static_cast<std::size_t>(it - expected.begin());
    if (seen[k]) throw std::invalid_argument("duplicate parameter '" + names[i] + "'");
    seen[k] = true;
    out.tensors_[k] = std::move(tensors[i]);
  }
  for (std::size_t k = 0; k < expected.size(); ++k) {
    if (!seen[k]) throw std::invalid_argument("missing parameter '" + expected[k] + "'");
  }
  auto dims_of = [&](std::string_view name) -> const Shape& { return out[name].shape(); };
  if (dims_of("src_embed").size() != 2 || dims_of("tgt_embed").size() != 2 ||
      dims_of("dec_norm.gain").size() != 1 || dims_of("att.score").size() != 1) {
    throw ShapeError("parameter shapes do not describe an encoder-decoder");
  }
  ModelConfig& c = out.config_;
  c.src_vocab = dims_of("src_embed")[0];
  c.embed_dim = dims_of("src_embed")[1];
  c.tgt_vocab = dims_of("tgt_embed")[0];
  c.hidden_dim = dims_of("dec_norm.gain")[0];
  c.attention_dim = dims_of("att.score")[0];
  c.embed_dropout = embed_dropout;
  c.hidden_dropout = hidden_dropout;
  c.validate();
  const auto shapes = expected_shapes(c);
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (out.tensors_[k].shape() != shapes[k]) {
      throw ShapeError("parameter '" + expected[k] + "' has shape " +
                       to_string(out.tensors_[k].shape()) + ", expected " + to_string(shapes[k]));
    }
  }
  return out;
}

template <typename Real>
std::size_t ModelParams<Real>::index(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

template <typename Real>
const Tensor<Real>& ModelParams<Real>::operator[](std::string_view name) const {
  return tensors_[index(name)];
}

template <typename Real>
Tensor<Real>& ModelParams<Real>::operator[](std::string_view name) {
  return tensors_[index(name)];
}

template <typename Real>
std::size_t ModelParams<Real>::count() const {
  return std::accumulate(tensors_.begin(), tensors_.end(), std::size_t{0},
                         [](std::size_t acc, const Tensor<Real>& t) { return acc + t.size(); });
}

template <typename Real>
template <typename Other>
ModelParams<Other> ModelParams<Real>::cast() const {
  ModelParams<Other> out;
  out.config_ = config_;
  out.names_ = names_;
  for (const auto& t : tensors_) {
    out.tensors_.emplace_back(t.shape(), std::vector<Other>(t.values().begin(), t.values().end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// EncoderOutput

template <typename Real>
EncoderOutput<Real> EncoderOutput<Real>::select(std::span<const std::size_t> rows) const {
  if (annotations.on_tape() || keys.on_tape()) {
    throw std::logic_error("EncoderOutput::select works on constants only");
  }
  const std::size_t s = positions();
  auto gather = [&](const Tensor<Real>& t) {
    const std::size_t stride = t.size() / batch();
    std::vector<Real> values(rows.size() * stride);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(t.values().begin() + rows[i] * stride, stride, values.begin() + i * stride);
    }
    Shape shape = t.shape();
    shape[0] = rows.size();
    return Tensor<Real>(std::move(shape), std::move(values));
  };
  EncoderOutput out;
  out.annotations = gather(annotations);
  out.keys = gather(keys);
  for (std::size_t r : rows) {
    out.pad_mask.insert(out.pad_mask.end(), pad_mask.begin() + r * s, pad_mask.begin() + (r + 1) * s);
    out.lengths.push_back(lengths[r]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

template <typename Real>
Model<Real>::Model(const ModelParams<Real>& params, Tape<Real>* tape, Rng* dropout_rng)
    : config_(params.config()), tape_(tape), dropout_rng_(dropout_rng) {
  bound_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    bound_.push_back(tape ? tape->watch(params.tensor(i)) : params.tensor(i).detach());
  }
  bind_views();
}

template <typename Real>
Model<Real>::Model(const ModelConfig& config, std::vector<Tensor<Real>> bound, Rng* dropout_rng)
    : config_(config), tape_(nullptr), dropout_rng_(dropout_rng), bound_(std::move(bound)) {
  config_.validate();
  const auto shapes = expected_shapes(config_);
  if (bound_.size() != shapes.size()) {
    throw std::invalid_argument("model needs " + std::to_string(shapes.size()) + " tensors, got " +
                                std::to_string(bound_.size()));
  }
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (bound_[k].shape() != shapes[k]) {
      throw ShapeError("parameter '" + names_in_order()[k] + "' has shape " +
                       to_string(bound_[k].shape()) + ", expected " + to_string(shapes[k]));
    }
    if (bound_[k].tape() != nullptr) tape_ = bound_[k].tape();
  }
  bind_views();
}

template <typename Real>
void Model<Real>::bind_views() {
  enc_fwd_ = {p("enc_fwd.weight"), p("enc_fwd.bias")};
  enc_bwd_ = {p("enc_bwd.weight"), p("enc_bwd.bias")};
  dec_ = {p("dec.weight"), p("dec.bias")};
  out_weight_t_ = transpose(p("out.weight"));
  score_column_ = reshape(p("att.score"), Shape{config_.attention_dim, 1});
}

template <typename Real>
const Tensor<Real>& Model<Real>::p(std::string_view name) const {
  const auto& names = names_in_order();
  auto it = std::find(names.begin(), names.end(), name);
  return bound_[static_cast<std::size_t>(it - names.begin())];
}

template <typename Real>
Tensor<Real> Model<Real>::dropout(const Tensor<Real>& x, double rate) const {
  if (dropout_rng_ == nullptr || rate <= 0) return x;
  const Real keep = static_cast<Real>(1.0 / (1.0 - rate));
  std::vector<Real> mask(x.size());
  for (Real& m : mask) m = uniform01(*dropout_rng_) < rate ? Real(0) : keep;
  return mul(x, Tensor<Real>(x.shape(), std::move(mask)));
}

template <typename Real>
DecoderState<Real> Model<Real>::lstm_step(const Lstm& cell, const Tensor<Real>& input,
                                          const DecoderState<Real>& state) const {
  const std::size_t h = config_.hidden_dim;
  const Tensor<Real> gates =
      add_bias(matmul(concat<Real>({input, state.hidden}), cell.weight), cell.bias);
  const Tensor<Real> in_gate = sigmoid(slice_last(gates, 0, h));
  const Tensor<Real> forget_gate = sigmoid(slice_last(gates, h, h));
  const Tensor<Real> candidate = tanh(slice_last(gates, 2 * h, h));
  const Tensor<Real> out_gate = sigmoid(slice_last(gates, 3 * h, h));
  DecoderState<Real> next;
  next.cell = add(mul(forget_gate, state.cell), mul(in_gate, candidate));
  next.hidden = mul(out_gate, tanh(next.cell));
  return next;
}

template <typename Real>
EncoderOutput<Real> Model<Real>::encode(const TokenMatrix& source) const {
  const std::size_t batch = source.rows;
  const std::size_t len = source.cols;
  if (batch == 0 || len == 0 ||
      std::any_of(source.lengths.begin(), source.lengths.end(), [](std::size_t n) { return n == 0; })) {
    throw std::invalid_argument("encode: empty source sentence");
  }
  const std::size_t h = config_.hidden_dim;
  const DecoderState<Real> zero{Tensor<Real>::zeros({batch, h}), Tensor<Real>::zeros({batch, h})};

  std::vector<Tensor<Real>> inputs;
  inputs.reserve(len);
  for (std::size_t s = 0; s < len; ++s) {
    const auto ids = source.column(s);
    inputs.push_back(dropout(lookup(p("src_embed"), std::span<const TokenId>(ids)), config_.embed_dropout));
  }

  std::vector<Tensor<Real>> forward(len);
  DecoderState<Real> state = zero;
  for (std::size_t s = 0; s < len; ++s) {
    state = lstm_step(enc_fwd_, inputs[s], state);
    forward[s] = state.hidden;
  }

  std::vector<Tensor<Real>> backward(len);
  state = zero;
  for (std::size_t s = len; s-- > 0;) {
    DecoderState<Real> next = lstm_step(enc_bwd_, inputs[s], state);
    bool padded = false;
    std::vector<Real> keep(batch * h, Real(1));
    for (std::size_t b = 0; b < batch; ++b) {
      if (s >= source.lengths[b]) {
        padded = true;
        std::fill_n(keep.begin() + b * h, h, Real(0));
      }
    }
    if (padded) {
      const Tensor<Real> mask({batch, h}, std::move(keep));
      next.hidden = mul(next.hidden, mask);
      next.cell = mul(next.cell, mask);
    }
    state = next;
    backward[s] = state.hidden;
  }

  std::vector<Tensor<Real>> positions;
  positions.reserve(len);
  for (std::size_t s = 0; s < len; ++s) positions.push_back(concat<Real>({forward[s], backward[s]}));

  EncoderOutput<Real> out;
  out.annotations = layer_norm(stack(positions, 1), p("enc_norm.gain"), p("enc_norm.bias"));
  out.keys = reshape(matmul(reshape(out.annotations, {batch * len, 2 * h}), p("att.key")),
                     {batch, len, config_.attention_dim});
  out.pad_mask.assign(batch * len, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = source.lengths[b]; s < len; ++s) out.pad_mask[b * len + s] = 1;
  }
  out.lengths = source.lengths;
  return out;
}

template <typename Real>
DecoderState<Real> Model<Real>::initial_state(const EncoderOutput<Real>& enc) const {
  const std::size_t batch = enc.batch();
  const std::size_t len = enc.positions();
  std::vector<Real> weights(batch * len, Real(0));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < enc.lengths[b]; ++s) {
      weights[b * len + s] = Real(1) / static_cast<Real>(enc.lengths[b]);
    }
  }
  const Tensor<Real> mean = reshape(
      batch_matmul(Tensor<Real>({batch, 1, len}, std::move(weights)), enc.annotations),
      {batch, 2 * config_.hidden_dim});
  DecoderState<Real> state;
  state.hidden = tanh(add_bias(matmul(mean, p("dec_init.weight")), p("dec_init.bias")));
  state.cell = Tensor<Real>::zeros({batch, config_.hidden_dim});
  return state;
}

template <typename Real>
AttentionResult<Real> Model<Real>::attend(const Tensor<Real>& query,
                                          const EncoderOutput<Real>& enc) const {
  const std::size_t batch = enc.batch();
  const std::size_t len = enc.positions();
  const std::size_t a = config_.attention_dim;
  const Tensor<Real> q = matmul(query, p("att.query"));
  const Tensor<Real> hidden = tanh(add_broadcast_rows(enc.keys, q));
  const Tensor<Real> scores =
      reshape(matmul(reshape(hidden, {batch * len, a}), score_column_), {batch, len});
  AttentionResult<Real> out;
  out.weights = softmax(masked_fill(scores, std::span<const std::uint8_t>(enc.pad_mask),
                                    static_cast<Real>(kMaskedScore)),
                        1);
  out.context = reshape(batch_matmul(reshape(out.weights, {batch, 1, len}), enc.annotations),
                        {batch, 2 * config_.hidden_dim});
  return out;
}

template <typename Real>
StepResult<Real> Model<Real>::decode_step(const Tensor<Real>& input_embedding,
                                          const DecoderState<Real>& state,
                                          const EncoderOutput<Real>& enc) const {
  AttentionResult<Real> att = attend(state.hidden, enc);
  StepResult<Real> out;
  out.state = lstm_step(dec_, concat<Real>({input_embedding, att.context}), state);
  out.output = layer_norm(out.state.hidden, p("dec_norm.gain"), p("dec_norm.bias"));
  out.attention = std::move(att.weights);
  return out;
}

template <typename Real>
Tensor<Real> Model<Real>::project(const Tensor<Real>& hidden) const {
  return add_bias(matmul(hidden, out_weight_t_), p("out.bias"));
}

template <typename Real>
Tensor<Real> Model<Real>::step_log_probs(const Tensor<Real>& hidden) const {
  return log_softmax(project(dropout(hidden, config_.hidden_dropout)), hidden.rank() - 1);
}

template <typename Real>
Tensor<Real> Model<Real>::embed_target(std::span<const TokenId> ids) const {
  return dropout(lookup(p("tgt_embed"), ids), config_.embed_dropout);
}

template <typename Real>
Tensor<Real> Model<Real>::soft_embed(const Tensor<Real>& relaxed) const {
  return dropout(soft_rows(relaxed), config_.embed_dropout);
}

template <typename Real>
Tensor<Real> Model<Real>::soft_rows(const Tensor<Real>& relaxed) const {
  return matmul(relaxed, p("tgt_embed"));
}

template <typename Real>
Tensor<Real> Model<Real>::target_rows(std::span<const TokenId> ids) const {
  return lookup(p("tgt_embed"), ids);
}

template <typename Real>
std::vector<Tensor<Real>> Model<Real>::gradients(const Gradients<Real>& grads) const {
  std::vector<Tensor<Real>> out;
  out.reserve(bound_.size());
  for (const auto& t : bound_) out.push_back(grads.of(t));
  return out;
}

template class ModelParams<float>;
template class ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;
template struct EncoderOutput<float>;
template struct EncoderOutput<double>;
template class Model<float>;
template class Model<double>;

}  // namespace saml
