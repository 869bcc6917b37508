#include "saml/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace saml {
namespace {

constexpr std::size_t kMaxConsecutiveSkips = 1000;

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1));
}

template <typename Real>
Tensor<Real> objective_loss(const Model<Real>& model, const Batch& batch, const TrainConfig& c,
                            double epsilon, Rng& coins, Rng& noise) {
  switch (c.objective) {
    case Objective::kMl:
      return ml_loss(model, batch, c.loss);
    case Objective::kSs:
    case Objective::kSsNoAnneal:
      return ss_loss(model, batch, epsilon, coins, c.loss);
    case Objective::kDss:
      return dss_loss(model, batch, epsilon, c.saml.gumbel, coins, noise, c.loss);
    case Objective::kSaml:
      return combined_loss(model, batch, c.loss, c.saml, noise);
  }
  throw std::logic_error("unknown objective");
}

}  // namespace

Objective parse_objective(std::string_view name) {
  if (name == "ml") return Objective::kMl;
  if (name == "ss") return Objective::kSs;
  if (name == "dss") return Objective::kDss;
  if (name == "ss_noanneal") return Objective::kSsNoAnneal;
  if (name == "saml") return Objective::kSaml;
  throw std::invalid_argument("unknown objective '" + std::string(name) +
                              "' (expected ml, ss, dss, ss_noanneal or saml)");
}

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kMl:
      return "ml";
    case Objective::kSs:
      return "ss";
    case Objective::kDss:
      return "dss";
    case Objective::kSsNoAnneal:
      return "ss_noanneal";
    case Objective::kSaml:
      return "saml";
  }
  return "?";
}

TrainConfig TrainConfig::pretrain_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.learning_rate = 2e-5;
  c.min_checkpoints = 24;
  return c;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + what);
  };
  require(batch_words > 0, "batch_words must be positive");
  require(checkpoint_interval > 0, "checkpoint_interval must be positive");
  require(std::isfinite(learning_rate) && learning_rate >= 0, "learning_rate must be non-negative");
  require(lr_decay > 0 && lr_decay <= 1, "lr_decay must be in (0, 1]");
  require(decay_window > 0, "decay_window must be positive");
  require(patience >= decay_window, "patience must be at least decay_window");
  require(clip_norm > 0, "clip_norm must be positive");
  require(anneal_k > 0, "anneal_k must be positive");
  require(fixed_epsilon >= 0 && fixed_epsilon <= 1, "fixed_epsilon must be in [0, 1]");
  require(loss.label_smoothing >= 0 && loss.label_smoothing < 1, "label_smoothing must be in [0, 1)");
  saml.gumbel.validate();
}

double TrainConfig::epsilon(std::size_t checkpoint) const {
  switch (objective) {
    case Objective::kSs:
    case Objective::kDss:
      return anneal(AnnealState{anneal_k, checkpoint});
    case Objective::kSsNoAnneal:
      return fixed_epsilon;
    default:
      return 1.0;
  }
}

template <typename Real>
AdamState<Real> AdamState<Real>::zeros_like(const ModelParams<Real>& params) {
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.push_back(Tensor<Real>::zeros(params.tensor(i).shape()));
    s.v.push_back(Tensor<Real>::zeros(params.tensor(i).shape()));
  }
  return s;
}

template <typename Real>
TrainState<Real> TrainState<Real>::fresh(const ModelParams<Real>& params, double learning_rate) {
  TrainState s;
  s.adam = AdamState<Real>::zeros_like(params);
  s.learning_rate = learning_rate;
  return s;
}

template <typename Real>
void adam_step(ModelParams<Real>& params, const std::vector<Tensor<Real>>& grads,
               AdamState<Real>& state, double lr, const AdamConfig& c) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: expected " + std::to_string(params.size()) + " gradients and moments");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params.tensor(i).shape();
    if (grads[i].shape() != shape || state.m[i].shape() != shape || state.v[i].shape() != shape) {
      throw ShapeError("adam_step: gradient of '" + params.names()[i] + "' has shape " +
                       to_string(grads[i].shape()) + ", parameter has " + to_string(shape));
    }
  }
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.tensor(i).mutable_values();
    auto m = state.m[i].mutable_values();
    auto v = state.v[i].mutable_values();
    const auto g = grads[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = c.beta1 * m[k] + (1 - c.beta1) * gk;
      const double vk = c.beta2 * v[k] + (1 - c.beta2) * gk * gk;
      m[k] = static_cast<Real>(mk);
      v[k] = static_cast<Real>(vk);
      const double step = lr * (mk / correct1) / (std::sqrt(vk / correct2) + c.epsilon);
      p[k] = static_cast<Real>(p[k] - step);
    }
  }
}

template <typename Real>
double clip_global_norm(std::vector<Tensor<Real>>& grads, double max_norm) {
  double total = 0;
  for (const auto& g : grads) {
    for (Real v : g.values()) total += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) {
      g = g.detach();
      for (Real& v : g.mutable_values()) v = static_cast<Real>(v * factor);
    }
  }
  return norm;
}

template <typename Real>
bool all_finite(const std::vector<Tensor<Real>>& tensors) {
  for (const auto& t : tensors) {
    for (Real v : t.values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename Real>
double perplexity(const ModelParams<Real>& params, const std::vector<Batch>& batches) {
  const Model<Real> model(params, nullptr);
  const LossOptions exact{0.0, Normalization::kPerWord};
  double nll = 0;
  double words = 0;
  for (const auto& b : batches) {
    const double w = static_cast<double>(b.target_words());
    nll += static_cast<double>(ml_loss(model, b, exact).item()) * w;
    words += w;
  }
  if (words == 0) throw std::invalid_argument("perplexity: no target words");
  return std::exp(nll / words);
}

std::string MetricsRecord::to_line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.6f\t%.6f\t%.9g\t%.9f\t%zu", checkpoint, updates,
                train_loss, perplexity, learning_rate, epsilon, skipped);
  return buf;
}

MetricsRecord MetricsRecord::parse(const std::string& line) {
  std::istringstream in(line);
  MetricsRecord r;
  std::string extra;
  if (!(in >> r.checkpoint >> r.updates >> r.train_loss >> r.perplexity >> r.learning_rate >>
        r.epsilon >> r.skipped) ||
      (in >> extra)) {
    throw InputError("metrics: malformed line '" + line + "'");
  }
  return r;
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path.string() + ": cannot open");
  std::vector<MetricsRecord> out;
  for (std::string line; std::getline(in, line);) out.push_back(MetricsRecord::parse(line));
  return out;
}

template <typename Real>
TrainSummary train(ModelParams<Real>& params, const ParallelCorpus& train_set,
                   const ParallelCorpus& dev_set, const TrainConfig& config,
                   const TrainPaths& paths, const CheckpointCallback& on_checkpoint) {
  config.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training corpus");
  if (dev_set.size() == 0) throw std::invalid_argument("train: empty validation corpus");
  std::filesystem::create_directories(paths.checkpoints);
  if (!paths.metrics.parent_path().empty()) std::filesystem::create_directories(paths.metrics.parent_path());
  std::ofstream metrics(paths.metrics, std::ios::trunc);
  if (!metrics) throw InputError(paths.metrics.string() + ": cannot write");

  const auto dev_batches = make_batches(dev_set, config.batch_words, 0);
  TrainState<Real> state = TrainState<Real>::fresh(params, config.learning_rate);
  Rng dropout = make_stream(config.seed, kDropoutStream);
  Rng coins = make_stream(config.seed, kCoinStream);
  Rng noise = make_stream(config.seed, kNoiseStream);

  TrainSummary summary;
  double window_loss = 0;
  std::size_t window_updates = 0;
  std::size_t consecutive_skips = 0;
  for (std::size_t epoch = 0;; ++epoch) {
    for (const Batch& batch : make_batches(train_set, config.batch_words, epoch_seed(config.seed, epoch))) {
      const double epsilon = config.epsilon(state.checkpoint);
      Tape<Real> tape;
      const Model<Real> model(params, &tape, &dropout);
      const Tensor<Real> loss = objective_loss(model, batch, config, epsilon, coins, noise);
      auto grads = model.gradients(tape.backward(loss));
      if (!std::isfinite(loss.item()) || !all_finite(grads)) {
        ++state.skipped;
        if (++consecutive_skips >= kMaxConsecutiveSkips) {
          throw std::runtime_error("train: " + std::to_string(consecutive_skips) +
                                   " consecutive batches with non-finite values");
        }
        continue;
      }
      consecutive_skips = 0;
      clip_global_norm(grads, config.clip_norm);
      adam_step(params, grads, state.adam, state.learning_rate);
      ++state.updates;
      window_loss += static_cast<double>(loss.item());
      ++window_updates;
      if (state.updates % config.checkpoint_interval != 0) continue;

      MetricsRecord record;
      record.checkpoint = state.checkpoint + 1;
      record.updates = state.updates;
      record.train_loss = window_loss / static_cast<double>(window_updates);
      record.perplexity = perplexity(params, dev_batches);
      record.learning_rate = state.learning_rate;
      record.epsilon = epsilon;
      record.skipped = state.skipped;
      window_loss = 0;
      window_updates = 0;
      // Decide on the logged values so metrics.tsv alone replays the schedule.
      record = MetricsRecord::parse(record.to_line());

      ++state.checkpoint;
      const bool improved = record.perplexity < state.best_perplexity;
      if (improved) {
        state.best_perplexity = record.perplexity;
        state.best_checkpoint = record.checkpoint;
        state.streak = 0;
        state.decay_streak = 0;
      } else {
        ++state.streak;
        if (++state.decay_streak == config.decay_window) {
          state.learning_rate *= config.lr_decay;
          state.decay_streak = 0;
        }
      }
      save_checkpoint(params, state, paths.last());
      if (improved) save_checkpoint(params, state, paths.best());
      metrics << record.to_line() << '\n' << std::flush;
      if (on_checkpoint) on_checkpoint(record);

      const bool patience_out = state.streak >= config.patience && state.checkpoint >= config.min_checkpoints;
      const bool capped = config.max_checkpoints != 0 && state.checkpoint >= config.max_checkpoints;
      if (patience_out || capped) {
        summary.checkpoints = state.checkpoint;
        summary.updates = state.updates;
        summary.best_perplexity = state.best_perplexity;
        summary.best_checkpoint = state.best_checkpoint;
        summary.stopped_early = patience_out;
        return summary;
      }
    }
  }
}

template <typename Real>
TrainSummary finetune(const std::filesystem::path& checkpoint, const ModelConfig& expected,
                      const ParallelCorpus& train_set, const ParallelCorpus& dev_set,
                      const TrainConfig& config, const TrainPaths& paths,
                      const CheckpointCallback& on_checkpoint) {
  ModelParams<Real> params = load_checkpoint<Real>(checkpoint).params;
  if (!params.config().same_architecture(expected)) {
    throw std::invalid_argument(checkpoint.string() + ": architecture does not match the configuration");
  }
  params.config().embed_dropout = expected.embed_dropout;
  params.config().hidden_dropout = expected.hidden_dropout;
  return train(params, train_set, dev_set, config, paths, on_checkpoint);
}

#define SAML_INSTANTIATE_TRAINING(Real)                                                           \
  template struct AdamState<Real>;                                                                \
  template struct TrainState<Real>;                                                               \
  template void adam_step(ModelParams<Real>&, const std::vector<Tensor<Real>>&, AdamState<Real>&, \
                          double, const AdamConfig&);                                             \
  template double clip_global_norm(std::vector<Tensor<Real>>&, double);                           \
  template bool all_finite(const std::vector<Tensor<Real>>&);                                     \
  template double perplexity(const ModelParams<Real>&, const std::vector<Batch>&);                \
  template TrainSummary train(ModelParams<Real>&, const ParallelCorpus&, const ParallelCorpus&,   \
                              const TrainConfig&, const TrainPaths&, const CheckpointCallback&);  \
  template TrainSummary finetune<Real>(const std::filesystem::path&, const ModelConfig&,          \
                                       const ParallelCorpus&, const ParallelCorpus&,              \
                                       const TrainConfig&, const TrainPaths&,                     \
                                       const CheckpointCallback&);

SAML_INSTANTIATE_TRAINING(float)
SAML_INSTANTIATE_TRAINING(double)

}  // namespace saml
