#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "saml/decode.hpp"
#include "saml/training.hpp"
#include "scratch.hpp"
#include "support.hpp"

namespace saml {
namespace {

namespace fs = std::filesystem;
using test::Scratch;

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

ParallelCorpus copy_corpus(std::size_t pairs, std::uint64_t seed) {
  SynthConfig c;
  c.kind = SynthKind::kCopy;
  c.vocab_size = 10;
  c.min_length = 2;
  c.max_length = 6;
  c.pairs = pairs;
  c.seed = seed;
  const ParallelText text = synth_task(c);
  const Vocabulary vocab = Vocabulary::build(text.source);
  return ParallelCorpus::encode(text, vocab, vocab);
}

ModelConfig small_model() {
  ModelConfig c = test::tiny_config(10, 8);
  c.embed_dropout = 0.1;
  c.hidden_dropout = 0.1;
  return c;
}

TrainConfig quick(Objective objective, double lr) {
  TrainConfig c;
  c.objective = objective;
  c.batch_words = 64;
  c.checkpoint_interval = 5;
  c.learning_rate = lr;
  return c;
}

TrainPaths paths_in(const fs::path& dir) {
  return TrainPaths{dir / "checkpoints", dir / "metrics.tsv"};
}

// --- Adam, clipping ---------------------------------------------------------

ModelParams<double> single_scalar(double value) {
  auto params = ModelParams<double>::initialize(test::tiny_config(), 1);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double& v : params.tensor(i).mutable_values()) v = value;
  }
  return params;
}

std::vector<Tensor<double>> gradients_like(const ModelParams<double>& params, double fill) {
  std::vector<Tensor<double>> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back(Tensor<double>(params.tensor(i).shape(),
                                 std::vector<double>(params.tensor(i).size(), fill)));
  }
  return out;
}

TEST(Adam, FirstStepMovesByTheRateAgainstTheGradientSign) {
  auto params = single_scalar(0.5);
  auto state = AdamState<double>::zeros_like(params);
  auto grads = gradients_like(params, -3.0);
  grads[0].mutable_values()[0] = 0.25;
  adam_step(params, grads, state, 0.01);
  EXPECT_NEAR(params.tensor(0).values()[0], 0.5 - 0.01, 1e-9);
  EXPECT_NEAR(params.tensor(1).values()[0], 0.5 + 0.01, 1e-9);
  EXPECT_EQ(state.steps, 1u);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto params = single_scalar(0.5);
  auto state = AdamState<double>::zeros_like(params);
  for (int i = 0; i < 3; ++i) adam_step(params, gradients_like(params, 0.0), state, 0.1);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double v : params.tensor(i).values()) EXPECT_EQ(v, 0.5);
  }
}

TEST(Adam, DescendsAQuadratic) {
  auto params = single_scalar(1.0);
  auto state = AdamState<double>::zeros_like(params);
  double previous = 0.5;
  for (int step = 0; step < 5; ++step) {
    const double x = params.tensor(0).values()[0];
    adam_step(params, gradients_like(params, x), state, 0.1);
    const double next = params.tensor(0).values()[0];
    EXPECT_LT(0.5 * next * next, previous);
    previous = 0.5 * next * next;
  }
}

TEST(Adam, RejectsMismatchedGradients) {
  auto params = single_scalar(1.0);
  auto state = AdamState<double>::zeros_like(params);
  auto grads = gradients_like(params, 1.0);
  grads[2] = Tensor<double>({1}, {1.0});
  EXPECT_THROW(adam_step(params, grads, state, 0.1), ShapeError);
  grads.pop_back();
  EXPECT_THROW(adam_step(params, grads, state, 0.1), ShapeError);
}

TEST(Clip, ScalesJointNormDownToTheLimit) {
  std::vector<Tensor<double>> g = {Tensor<double>({2}, {3, 0}), Tensor<double>({1}, {4})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0].values()[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1].values()[0], 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 5.0), 1.0);
  EXPECT_NEAR(g[1].values()[0], 0.8, 1e-15);
}

TEST(Clip, DetectsNonFiniteValues) {
  std::vector<Tensor<double>> g = {Tensor<double>({2}, {1, 2})};
  EXPECT_TRUE(all_finite(g));
  g[0].mutable_values()[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(all_finite(g));
  g[0].mutable_values()[1] = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(all_finite(g));
}

TEST(Objectives, NamesRoundTrip) {
  for (Objective o : {Objective::kMl, Objective::kSs, Objective::kDss, Objective::kSsNoAnneal,
                      Objective::kSaml}) {
    EXPECT_EQ(parse_objective(objective_name(o)), o);
  }
  EXPECT_THROW(parse_objective("reinforce"), std::invalid_argument);
}

TEST(Config, EpsilonPerObjective) {
  TrainConfig c;
  c.objective = Objective::kSsNoAnneal;
  EXPECT_EQ(c.epsilon(0), 0.5);
  EXPECT_EQ(c.epsilon(50), 0.5);
  c.objective = Objective::kSs;
  EXPECT_NEAR(c.epsilon(0), 10.0 / 11.0, 1e-15);
  EXPECT_NEAR(c.epsilon(30), 10.0 / (10.0 + std::exp(3.0)), 1e-15);
  c.objective = Objective::kSaml;
  EXPECT_EQ(c.epsilon(7), 1.0);
}

TEST(Config, ValidateRejectsBadSettings) {
  TrainConfig c;
  c.checkpoint_interval = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr_decay = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(TrainConfig::finetune_defaults().validate());
}

// --- checkpoints ------------------------------------------------------------

Checkpoint<float> trained_checkpoint(const fs::path& dir) {
  auto params = ModelParams<float>::initialize(small_model(), 3);
  TrainConfig c = quick(Objective::kMl, 3e-3);
  c.max_checkpoints = 2;
  train(params, copy_corpus(60, 1), copy_corpus(20, 2), c, paths_in(dir));
  return load_checkpoint<float>(paths_in(dir).last());
}

TEST(CheckpointFile, SaveLoadSaveIsByteIdentical) {
  Scratch dir("ckpt-roundtrip");
  const auto ckpt = trained_checkpoint(dir.path());
  save_checkpoint(ckpt.params, ckpt.state, dir / "again.ckpt");
  EXPECT_EQ(slurp(dir / "again.ckpt"), slurp(paths_in(dir.path()).last()));
  EXPECT_EQ(ckpt.state.updates, 10u);
  EXPECT_EQ(ckpt.state.checkpoint, 2u);
  EXPECT_EQ(ckpt.state.adam.steps, 10u);
}

TEST(CheckpointFile, LoadedModelDecodesIdentically) {
  Scratch dir("ckpt-decode");
  auto params = ModelParams<float>::initialize(small_model(), 5);
  save_checkpoint(params, TrainState<float>::fresh(params, 1e-3), dir / "a.ckpt");
  const auto loaded = load_checkpoint<float>(dir / "a.ckpt");
  const ParallelCorpus corpus = copy_corpus(20, 4);
  for (const Sentence& src : corpus.source) {
    const Hypothesis a = greedy_decode(params, src);
    const Hypothesis b = greedy_decode(loaded.params, src);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.log_prob, b.log_prob);
  }
}

TEST(CheckpointFile, RejectsCorruption) {
  Scratch dir("ckpt-corrupt");
  auto params = ModelParams<float>::initialize(small_model(), 5);
  save_checkpoint(params, TrainState<float>::fresh(params, 1e-3), dir / "a.ckpt");
  const std::string good = slurp(dir / "a.ckpt");

  std::string flipped = good;
  flipped[good.size() / 2] ^= 0x10;
  spit(dir / "flipped.ckpt", flipped);
  EXPECT_THROW(load_checkpoint<float>(dir / "flipped.ckpt"), CheckpointError);

  spit(dir / "short.ckpt", good.substr(0, good.size() - 7));
  EXPECT_THROW(load_checkpoint<float>(dir / "short.ckpt"), CheckpointError);

  spit(dir / "long.ckpt", good + "x");
  EXPECT_THROW(load_checkpoint<float>(dir / "long.ckpt"), CheckpointError);

  std::string magic = good;
  magic[0] = 'X';
  spit(dir / "magic.ckpt", magic);
  EXPECT_THROW(load_checkpoint<float>(dir / "magic.ckpt"), CheckpointError);

  EXPECT_THROW(load_checkpoint<double>(dir / "a.ckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint<float>(dir / "missing.ckpt"), CheckpointError);
}

// --- training protocol ------------------------------------------------------

TEST(Protocol, FlatPerplexityDecaysAndStopsOnPatience) {
  Scratch dir("protocol-flat");
  auto params = ModelParams<float>::initialize(small_model(), 7);
  std::vector<MetricsRecord> seen;
  const auto summary = train(params, copy_corpus(60, 1), copy_corpus(20, 2),
                             quick(Objective::kMl, 1e-12), paths_in(dir.path()),
                             [&](const MetricsRecord& r) { seen.push_back(r); });
  const auto rows = read_metrics(paths_in(dir.path()).metrics);
  ASSERT_EQ(rows.size(), 13u);
  EXPECT_TRUE(summary.stopped_early);
  EXPECT_EQ(summary.best_checkpoint, 1u);
  EXPECT_EQ(seen.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].checkpoint, i + 1);
    EXPECT_EQ(rows[i].updates, 5 * (i + 1));
    EXPECT_EQ(rows[i].perplexity, rows[0].perplexity);
    const double expected_lr = 1e-12 * std::pow(0.7, i < 5 ? 0 : i < 9 ? 1 : 2);
    EXPECT_NEAR(rows[i].learning_rate, expected_lr, 1e-20) << "row " << i + 1;
    EXPECT_EQ(rows[i].epsilon, 1.0);
    EXPECT_EQ(seen[i].to_line(), rows[i].to_line());
  }
  EXPECT_TRUE(fs::exists(paths_in(dir.path()).best()));
  EXPECT_TRUE(fs::exists(paths_in(dir.path()).last()));
}

TEST(Protocol, FinetuneRespectsMinimumCheckpoints) {
  Scratch dir("protocol-min");
  auto params = ModelParams<float>::initialize(small_model(), 7);
  save_checkpoint(params, TrainState<float>::fresh(params, 1e-3), dir / "init.ckpt");
  TrainConfig c = quick(Objective::kSs, 1e-12);
  c.min_checkpoints = 24;
  const auto summary = finetune<float>(dir / "init.ckpt", small_model(), copy_corpus(60, 1),
                                       copy_corpus(20, 2), c, paths_in(dir / "run"));
  const auto rows = read_metrics(paths_in(dir / "run").metrics);
  ASSERT_EQ(rows.size(), 24u);
  EXPECT_EQ(summary.checkpoints, 24u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_NEAR(rows[i].epsilon, c.epsilon(i), 1e-9);
  }
  EXPECT_GT(rows[0].epsilon, rows[23].epsilon);
}

TEST(Protocol, ZeroRateFinetuneKeepsPerplexity) {
  Scratch dir("protocol-zero");
  auto params = ModelParams<double>::initialize(small_model(), 8);
  save_checkpoint(params, TrainState<double>::fresh(params, 1e-3), dir / "init.ckpt");
  const ParallelCorpus dev = copy_corpus(20, 2);
  const double before = perplexity(params, make_batches(dev, 64, 0));
  TrainConfig c = quick(Objective::kSaml, 0.0);
  c.max_checkpoints = 2;
  finetune<double>(dir / "init.ckpt", small_model(), copy_corpus(60, 1), dev, c,
                   paths_in(dir / "run"));
  for (const auto& row : read_metrics(paths_in(dir / "run").metrics)) {
    EXPECT_NEAR(row.perplexity, before, 5e-7);  // six decimals in the file
  }
}

TEST(Protocol, FinetuneRejectsArchitectureMismatch) {
  Scratch dir("protocol-arch");
  auto params = ModelParams<float>::initialize(small_model(), 7);
  save_checkpoint(params, TrainState<float>::fresh(params, 1e-3), dir / "init.ckpt");
  ModelConfig wider = small_model();
  wider.hidden_dim = wider.embed_dim = 12;
  EXPECT_THROW(finetune<float>(dir / "init.ckpt", wider, copy_corpus(20, 1), copy_corpus(5, 2),
                               quick(Objective::kMl, 1e-3), paths_in(dir / "run")),
               std::invalid_argument);
}

TEST(Protocol, RepeatedRunsWriteIdenticalMetricsAndCheckpoints) {
  Scratch dir("protocol-repeat");
  std::string metrics[2];
  std::string ckpt[2];
  for (int run = 0; run < 2; ++run) {
    auto params = ModelParams<float>::initialize(small_model(), 11);
    TrainConfig c = quick(Objective::kSaml, 3e-3);
    c.max_checkpoints = 2;
    const auto p = paths_in(dir / std::to_string(run));
    train(params, copy_corpus(60, 1), copy_corpus(20, 2), c, p);
    metrics[run] = slurp(p.metrics);
    ckpt[run] = slurp(p.last());
  }
  EXPECT_FALSE(metrics[0].empty());
  EXPECT_EQ(metrics[0], metrics[1]);
  EXPECT_EQ(ckpt[0], ckpt[1]);
}

TEST(Protocol, LearnsTheCopyTask) {
  Scratch dir("protocol-learn");
  auto params = ModelParams<float>::initialize(small_model(), 2);
  TrainConfig c = quick(Objective::kMl, 1e-2);
  c.max_checkpoints = 8;
  train(params, copy_corpus(100, 1), copy_corpus(20, 2), c, paths_in(dir.path()));
  const auto rows = read_metrics(paths_in(dir.path()).metrics);
  EXPECT_LT(rows.back().perplexity, 0.8 * rows.front().perplexity);
  EXPECT_LT(rows.back().train_loss, rows.front().train_loss);
}

TEST(Metrics, LineRoundTrips) {
  MetricsRecord r{3, 300, 1.25, 4.5, 2e-4, 0.75, 1};
  EXPECT_EQ(MetricsRecord::parse(r.to_line()).to_line(), r.to_line());
  EXPECT_THROW(MetricsRecord::parse("1\t2\tthree"), std::exception);
}

}  // namespace
}  // namespace saml
