#pragma once

// Adam updates, the checkpointed training loop with learning-rate decay and
// early stopping, and the binary checkpoint format.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "saml/data.hpp"
#include "saml/model.hpp"
#include "saml/objectives.hpp"

namespace saml {

enum class Objective { kMl, kSs, kDss, kSsNoAnneal, kSaml };

Objective parse_objective(std::string_view name);
const char* objective_name(Objective objective);

struct TrainConfig {
  std::size_t batch_words = 1024;
  std::size_t checkpoint_interval = 1000;
  double learning_rate = 2e-4;
  double lr_decay = 0.7;
  /// Consecutive non-improving checkpoints before each decay.
  std::size_t decay_window = 4;
  /// Consecutive non-improving checkpoints before stopping.
  std::size_t patience = 12;
  /// No early stop before this many checkpoints.
  std::size_t min_checkpoints = 0;
  /// Hard stop after this many checkpoints; 0 for none.
  std::size_t max_checkpoints = 0;
  Objective objective = Objective::kMl;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  double anneal_k = 10.0;
  /// Reference probability of the non-annealed scheduled sampling variant.
  double fixed_epsilon = 0.5;
  LossOptions loss;
  SamlOptions saml;

  static TrainConfig pretrain_defaults();
  /// Learning rate 2e-5 and at least 24 checkpoints.
  static TrainConfig finetune_defaults();
  /// Throws std::invalid_argument on bad settings.
  void validate() const;
  /// Reference-token probability used in the window after `checkpoint`
  /// completed checkpoints; 1 for objectives that always feed references.
  double epsilon(std::size_t checkpoint) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Real>
struct AdamState {
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;
  std::size_t steps = 0;

  static AdamState zeros_like(const ModelParams<Real>& params);
};

template <typename Real>
struct TrainState {
  AdamState<Real> adam;
  std::size_t updates = 0;
  /// Completed checkpoints; drives the annealing schedule.
  std::size_t checkpoint = 0;
  double best_perplexity = std::numeric_limits<double>::infinity();
  std::size_t best_checkpoint = 0;
  /// Consecutive non-improving checkpoints.
  std::size_t streak = 0;
  /// Non-improving checkpoints since the last decay or improvement.
  std::size_t decay_streak = 0;
  double learning_rate = 0;
  std::size_t skipped = 0;

  static TrainState fresh(const ModelParams<Real>& params, double learning_rate);
};

/// Bias-corrected Adam step. Throws ShapeError when a gradient does not match
/// its parameter.
template <typename Real>
void adam_step(ModelParams<Real>& params, const std::vector<Tensor<Real>>& grads,
               AdamState<Real>& state, double learning_rate, const AdamConfig& config = {});

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
template <typename Real>
double clip_global_norm(std::vector<Tensor<Real>>& grads, double max_norm);

template <typename Real>
bool all_finite(const std::vector<Tensor<Real>>& tensors);

/// exp(summed unsmoothed teacher-forced NLL / target words), dropout off.
template <typename Real>
double perplexity(const ModelParams<Real>& params, const std::vector<Batch>& batches);

struct MetricsRecord {
  /// 1-based.
  std::size_t checkpoint = 0;
  std::size_t updates = 0;
  /// Mean objective value over the window's applied updates.
  double train_loss = 0;
  double perplexity = 0;
  /// Rate used during the window.
  double learning_rate = 0;
  /// Reference-token probability used during the window.
  double epsilon = 0;
  /// Batches skipped for non-finite values so far.
  std::size_t skipped = 0;

  /// Tab-separated, no trailing newline.
  std::string to_line() const;
  static MetricsRecord parse(const std::string& line);
};

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

struct TrainPaths {
  std::filesystem::path checkpoints;
  std::filesystem::path metrics;

  std::filesystem::path last() const { return checkpoints / "last.ckpt"; }
  std::filesystem::path best() const { return checkpoints / "best.ckpt"; }
};

struct TrainSummary {
  std::size_t checkpoints = 0;
  std::size_t updates = 0;
  double best_perplexity = 0;
  std::size_t best_checkpoint = 0;
  bool stopped_early = false;
};

using CheckpointCallback = std::function<void(const MetricsRecord&)>;

/// Optimizes `params` under config.objective from a fresh TrainState. Every
/// checkpoint_interval updates: measures dev perplexity, appends a metrics
/// record, writes last.ckpt (and best.ckpt on improvement), advances the
/// anneal counter, decays the rate after decay_window non-improving
/// checkpoints and stops after patience of them once min_checkpoints is met.
template <typename Real>
TrainSummary train(ModelParams<Real>& params, const ParallelCorpus& train_set,
                   const ParallelCorpus& dev_set, const TrainConfig& config,
                   const TrainPaths& paths, const CheckpointCallback& on_checkpoint = {});

/// Loads `checkpoint`, rejects it unless its architecture matches `expected`,
/// and trains from its parameters with a fresh state. Dropout rates come from
/// `expected`.
template <typename Real>
TrainSummary finetune(const std::filesystem::path& checkpoint, const ModelConfig& expected,
                      const ParallelCorpus& train_set, const ParallelCorpus& dev_set,
                      const TrainConfig& config, const TrainPaths& paths,
                      const CheckpointCallback& on_checkpoint = {});

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Real>
struct Checkpoint {
  ModelParams<Real> params;
  TrainState<Real> state;
};

/// "SAML", u32 version, u8 bytes per value, u64 tensor count, then per tensor
/// u32 name length, name, u32 rank, u64 dims, little-endian values; a trailing
/// CRC-32 covers everything after the header.
template <typename Real>
void save_checkpoint(const ModelParams<Real>& params, const TrainState<Real>& state,
                     const std::filesystem::path& path);
/// Throws CheckpointError on a bad magic, version, precision, checksum, shape
/// table or truncation.
template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path);

}  // namespace saml
