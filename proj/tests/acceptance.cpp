// Acceptance report: one PASS/FAIL line per criterion, exit status 1 if any
// hard criterion fails.
//
//   acceptance [--grid DIR] [--run-grid SCRIPT] [--skip-grid] [--expect-fail N]...
//
// Criteria 6 and 7 read a finished grid from DIR (default runs/grid). With
// --run-grid the script is launched first when DIR holds no finished grid.
// A criterion named by --expect-fail still prints FAIL but does not set the
// exit status.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "saml/data.hpp"
#include "saml/decode.hpp"
#include "saml/eval.hpp"
#include "saml/objectives.hpp"
#include "saml/selftest.hpp"
#include "saml/training.hpp"

namespace fs = std::filesystem;
using namespace saml;

namespace {

struct Line {
  int criterion;
  bool passed;
  std::string detail;
};

std::vector<Line> report;

void record(int criterion, bool passed, std::string detail) {
  std::printf("%s\tcriterion %d\t%s\n", passed ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  report.push_back({criterion, passed, std::move(detail)});
}

std::string fmt(const char* format, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// All checks pass; detail lists the failures, else the worst measured value.
std::pair<bool, std::string> summarize(const std::vector<CheckResult>& checks) {
  bool ok = true;
  std::string failed;
  for (const auto& c : checks) {
    if (!c.passed) {
      ok = false;
      failed += " " + c.name + "=" + fmt("%.3g", c.measured) + " (" + c.detail + ")";
    }
  }
  return {ok, failed};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- 1-5: numeric checks --------------------------------------------------

void gradients() {
  const auto start = std::chrono::steady_clock::now();
  auto checks = check_primitive_gradients(20, 1e-4);
  double worst_primitive = 0;
  for (const auto& c : checks) worst_primitive = std::max(worst_primitive, c.measured);
  const CheckResult combined = check_combined_gradient(7, 8, 4, 1e-4);
  checks.push_back(combined);
  checks.push_back(check_mutation_detected());
  const double elapsed = seconds_since(start);
  auto [ok, failed] = summarize(checks);
  ok = ok && elapsed < 120;
  record(1, ok,
         fmt("primitives max rel err %.2e, combined loss %.2e, %.1f s", worst_primitive,
             combined.measured, elapsed) +
             failed);
}

void sampling() {
  const CheckResult freq = check_gumbel_frequencies(200000, 0.005);
  const CheckResult st = check_straight_through(100);
  auto [ok, failed] = summarize({freq, st});
  record(2, ok, fmt("max frequency deviation %.4f; straight-through max diff %.1e", freq.measured,
                    st.measured) + failed);
}

void oracle() {
  const CheckResult r = check_diagonal_oracle(20, 1e-8);
  record(3, r.passed, fmt("max |saml - ml| %.2e over 20 batches", r.measured));
}

void alignment() {
  const auto checks = check_soft_alignment(20);
  auto [ok, failed] = summarize(checks);
  std::string detail;
  for (const auto& c : checks) detail += (detail.empty() ? "" : ", ") + c.name + " " + fmt("%.1e", c.measured);
  record(4, ok, detail + failed);
}

std::vector<Tokens> read_pairs_column(const fs::path& tsv, int column) {
  std::vector<Tokens> out;
  std::ifstream in(tsv);
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    std::istringstream words(column == 0 ? line.substr(0, tab) : line.substr(tab + 1));
    out.emplace_back(std::istream_iterator<std::string>(words), std::istream_iterator<std::string>());
  }
  return out;
}

// Frozen sacrebleu 2.6.0 scores (tokenize none, no smoothing) of the fixtures.
const std::map<std::string, double> kReferenceBleu = {
    {"bleu_long.tsv", 48.65615054970911},
    {"bleu_short.tsv", 41.64987435988294},
};

void harness(const fs::path& grid) {
  std::vector<CheckResult> checks = {check_beam_matches_greedy(200), check_exhaustive_beam(20, 4),
                                     check_bleu_identity()};
  std::string detail = fmt("exhaustive gap %.1e", checks[1].measured);

  // Beam 1 against greedy on every test sentence of a trained grid model.
  const fs::path ckpt = grid / "runs/saml-s1/checkpoints/best.ckpt";
  if (fs::exists(ckpt)) {
    const auto params = load_checkpoint<float>(ckpt).params;
    const auto sources = load_ids(grid / "prep/test.src.ids");
    std::size_t mismatches = 0;
    for (const Sentence& src : sources) {
      mismatches += greedy_decode(params, src).tokens != beam_search(params, src, DecodeOptions{1, 1.0, 0}).tokens;
    }
    checks.push_back({"grid beam1", static_cast<double>(mismatches), 0, mismatches == 0, "mismatches"});
    detail += fmt(", beam1 vs greedy on %.0f test sentences: %.0f mismatches", sources.size(), mismatches);
  }

  for (const auto& [name, expected] : kReferenceBleu) {
    const fs::path path = fs::path(SAML_FIXTURES) / name;
    const double got = corpus_bleu(read_pairs_column(path, 0), read_pairs_column(path, 1));
    const double diff = std::abs(got - expected);
    checks.push_back({name, diff, 0.01, diff < 0.01, fmt("%.4f vs %.4f", got, expected)});
    detail += ", " + name + " " + fmt("%.4f (ref %.4f)", got, expected);
  }
  auto [ok, failed] = summarize(checks);
  record(5, ok, detail + failed);
}

// --- 6-7: synthetic grid ---------------------------------------------------

const std::vector<std::string> kObjectives = {"ml", "ss", "dss", "ss_noanneal", "saml"};

bool grid_finished(const fs::path& grid) {
  return fs::exists(grid / "elapsed_seconds") && fs::exists(grid / "sweep/sweep.tsv");
}

std::vector<std::string> seeds_in(const fs::path& grid) {
  std::vector<std::string> seeds;
  for (int s = 1; fs::exists(grid / ("runs/ml-s" + std::to_string(s))); ++s) seeds.push_back(std::to_string(s));
  return seeds;
}

void synthetic_grid(const fs::path& grid) {
  if (!grid_finished(grid)) {
    record(6, false, "no finished grid in " + grid.string());
    record(7, false, "no sweep in " + grid.string());
    return;
  }
  const auto seeds = seeds_in(grid);
  const std::vector<Tokens> refs = read_corpus(grid / "data/test.tgt");
  const auto sources = load_ids(grid / "prep/test.src.ids");
  const Vocabulary tv = Vocabulary::load(grid / "prep/vocab.tgt");

  std::map<std::string, std::vector<double>> bleu;
  for (const auto& o : kObjectives) {
    for (const auto& s : seeds) {
      const auto params = load_checkpoint<float>(grid / ("runs/" + o + "-s" + s) / "checkpoints/best.ckpt").params;
      std::vector<Tokens> hyps;
      for (const auto& h : decode_all(params, sources, DecodeOptions{1, 1.0, 0})) hyps.push_back(tv.decode(h.tokens));
      bleu[o].push_back(corpus_bleu(hyps, refs));
    }
  }
  std::string table;
  for (const auto& o : kObjectives) table += " " + o + "=" + format_mean_std(mean_std(bleu[o]));
  const double ml = mean_std(bleu["ml"]).mean;
  const double saml_mean = mean_std(bleu["saml"]).mean;
  const double ss = mean_std(bleu["ss"]).mean;
  const double fixed = mean_std(bleu["ss_noanneal"]).mean;
  double elapsed = 0;
  std::ifstream(grid / "elapsed_seconds") >> elapsed;
  const bool a = saml_mean >= ml;
  const bool b = fixed < ss;
  const bool fast = elapsed < 7200;
  record(6, a && b && fast && seeds.size() == 5,
         std::to_string(seeds.size()) + " seeds, greedy test BLEU" + table +
             fmt("; (a) saml - ml = %+.2f, (b) ss_noanneal - ss = %+.2f; grid %.0f s", saml_mean - ml,
                 fixed - ss, elapsed));

  // Sweep deltas for SAML at each beam from the raw per-seed table.
  std::map<std::size_t, std::map<std::string, std::vector<double>>> raw;
  std::ifstream in(grid / "sweep/sweep_raw.tsv");
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::size_t beam = 0;
    std::string objective, seed;
    double value = 0;
    if (fields >> beam >> objective >> seed >> value) raw[beam][objective].push_back(value);
  }
  std::string deltas;
  std::map<std::size_t, double> delta;
  bool complete = true;
  for (std::size_t beam : {1, 2, 5, 10}) {
    const auto& row = raw[beam];
    if (!row.count("saml") || !row.count("ml") || row.at("saml").size() != row.at("ml").size()) {
      complete = false;
      continue;
    }
    std::vector<double> d;
    for (std::size_t k = 0; k < row.at("saml").size(); ++k) d.push_back(row.at("saml")[k] - row.at("ml")[k]);
    delta[beam] = mean_std(d).mean;
    deltas += " beam" + std::to_string(beam) + " " + format_mean_std(mean_std(d));
  }
  const bool trend = complete && delta[1] >= delta[10];
  record(7, complete,
         "saml delta BLEU vs ml:" + deltas + std::string("; beam1 >= beam10 trend ") +
             (trend ? "holds" : "does not hold (reported, soft)"));
}

// --- 8: protocol ------------------------------------------------------------

/// Replays the schedule rules over `rows`; empty on success.
std::string verify_protocol(const std::vector<MetricsRecord>& rows, const TrainConfig& c) {
  if (rows.empty()) return "no rows";
  double lr = c.learning_rate;
  double best = INFINITY;
  std::size_t streak = 0, decay_streak = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string at = "row " + std::to_string(i + 1) + ": ";
    if (r.checkpoint != i + 1) return at + "checkpoint number";
    if (r.updates != c.checkpoint_interval * (i + 1)) return at + "updates " + std::to_string(r.updates);
    if (std::abs(r.learning_rate - lr) > 1e-6 * lr) return at + fmt("lr %.9g, expected %.9g", r.learning_rate, lr);
    if (std::abs(r.epsilon - c.epsilon(i)) > 1e-9) return at + fmt("epsilon %.9f, expected %.9f", r.epsilon, c.epsilon(i));
    if (r.perplexity < best) {
      best = r.perplexity;
      streak = decay_streak = 0;
    } else {
      ++streak;
      if (++decay_streak == c.decay_window) {
        lr *= c.lr_decay;
        decay_streak = 0;
      }
    }
    const bool patience_stop = streak >= c.patience && i + 1 >= c.min_checkpoints;
    const bool cap_stop = c.max_checkpoints != 0 && i + 1 == c.max_checkpoints;
    const bool last = i + 1 == rows.size();
    if ((patience_stop || cap_stop) != last) return at + (last ? "stopped without cause" : "ran past the stop");
  }
  return "";
}

ParallelCorpus copy_corpus(std::size_t pairs, std::uint64_t seed) {
  SynthConfig c;
  c.kind = SynthKind::kCopy;
  c.vocab_size = 10;
  c.min_length = 2;
  c.max_length = 4;
  c.pairs = pairs;
  c.seed = seed;
  const ParallelText text = synth_task(c);
  const Vocabulary vocab = Vocabulary::build(text.source);
  return ParallelCorpus::encode(text, vocab, vocab);
}

ModelConfig toy_model() {
  ModelConfig m;
  m.src_vocab = m.tgt_vocab = 10;
  m.embed_dim = m.hidden_dim = m.attention_dim = 4;
  return m;
}

void protocol(const fs::path& work, const fs::path& grid) {
  const auto start = std::chrono::steady_clock::now();
  const ParallelCorpus train_set = copy_corpus(40, 1);
  const ParallelCorpus dev_set = copy_corpus(8, 2);

  // A rate too small to move float weights keeps dev perplexity flat, so every
  // checkpoint after the first is non-improving.
  TrainConfig pre = TrainConfig::pretrain_defaults();
  pre.learning_rate = 1e-30;
  pre.batch_words = 8;
  auto params = ModelParams<float>::initialize(toy_model(), 1);
  const TrainPaths pre_paths{work / "pretrain/checkpoints", work / "pretrain/metrics.tsv"};
  train(params, train_set, dev_set, pre, pre_paths);
  const auto pre_rows = read_metrics(pre_paths.metrics);

  TrainConfig fine = TrainConfig::finetune_defaults();
  fine.objective = Objective::kSs;
  fine.learning_rate = 1e-30;
  fine.batch_words = 8;
  const TrainPaths fine_paths{work / "finetune/checkpoints", work / "finetune/metrics.tsv"};
  finetune<float>(pre_paths.best(), toy_model(), train_set, dev_set, fine, fine_paths);
  const auto fine_rows = read_metrics(fine_paths.metrics);

  std::vector<std::string> problems;
  if (auto e = verify_protocol(pre_rows, pre); !e.empty()) problems.push_back("pretrain " + e);
  if (auto e = verify_protocol(fine_rows, fine); !e.empty()) problems.push_back("finetune " + e);
  if (pre_rows.size() != 13) problems.push_back("pretrain rows " + std::to_string(pre_rows.size()));
  if (fine_rows.size() != 24) problems.push_back("finetune rows " + std::to_string(fine_rows.size()));
  const bool decayed = pre_rows.size() == 13 && pre_rows[5].learning_rate < pre_rows[4].learning_rate &&
                       pre_rows[9].learning_rate < pre_rows[8].learning_rate;
  if (!decayed) problems.push_back("no decay at checkpoints 6 and 10");

  // The grid logs follow the same rules at their own interval.
  std::size_t grid_logs = 0;
  if (fs::exists(grid / "runs")) {
    for (const auto& entry : fs::directory_iterator(grid / "runs")) {
      const fs::path manifest = entry.path() / "manifest";
      if (!fs::exists(manifest)) continue;
      std::ifstream in(manifest);
      std::map<std::string, std::string> kv;
      std::string line;
      while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
          s.erase(0, s.find_first_not_of(' '));
          s.erase(s.find_last_not_of(' ') + 1);
          return s;
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
      }
      TrainConfig c;
      c.checkpoint_interval = std::stoul(kv["checkpoint_interval"]);
      c.learning_rate = std::stod(kv["learning_rate"]);
      c.min_checkpoints = std::stoul(kv["min_checkpoints"]);
      c.max_checkpoints = std::stoul(kv["max_checkpoints"]);
      c.objective = parse_objective(kv["objective"]);
      if (auto e = verify_protocol(read_metrics(entry.path() / "metrics.tsv"), c); !e.empty()) {
        problems.push_back(entry.path().filename().string() + " " + e);
      }
      ++grid_logs;
    }
  }

  std::string detail = "interval 1000: pretrain " + std::to_string(pre_rows.size()) + " rows, finetune " +
                       std::to_string(fine_rows.size()) + " rows, lr decayed at 6 and 10, epsilon schedule replayed; " +
                       std::to_string(grid_logs) + " grid logs replayed" + fmt(" (%.0f s)", seconds_since(start));
  for (const auto& p : problems) detail += "; " + p;
  record(8, problems.empty(), detail);
}

// --- 9: determinism ---------------------------------------------------------

void determinism(const fs::path& work) {
  const ParallelCorpus train_set = copy_corpus(60, 3);
  const ParallelCorpus dev_set = copy_corpus(20, 4);
  std::string metrics[2], decodes[2], ckpt[2];
  for (int run = 0; run < 2; ++run) {
    ModelConfig m = toy_model();
    m.embed_dim = m.hidden_dim = m.attention_dim = 8;
    auto params = ModelParams<float>::initialize(m, 5);
    TrainConfig c;
    c.objective = Objective::kSaml;
    c.learning_rate = 3e-3;
    c.batch_words = 32;
    c.checkpoint_interval = 20;
    c.max_checkpoints = 3;
    const TrainPaths p{work / ("det" + std::to_string(run)) / "checkpoints",
                       work / ("det" + std::to_string(run)) / "metrics.tsv"};
    train(params, train_set, dev_set, c, p);
    metrics[run] = slurp(p.metrics);
    ckpt[run] = slurp(p.last());
    const auto loaded = load_checkpoint<float>(p.last());
    for (const auto& h : decode_all(loaded.params, dev_set.source, DecodeOptions{5, 1.0, 0}, 2)) {
      for (TokenId t : h.tokens) decodes[run] += std::to_string(t) + " ";
      decodes[run] += fmt("%.9g\n", h.log_prob);
    }
  }
  const fs::path first = work / "det0/checkpoints/last.ckpt";
  const auto loaded = load_checkpoint<float>(first);
  save_checkpoint(loaded.params, loaded.state, work / "resaved.ckpt");
  const bool roundtrip = slurp(first) == slurp(work / "resaved.ckpt");
  const bool ok = metrics[0] == metrics[1] && decodes[0] == decodes[1] && ckpt[0] == ckpt[1] && roundtrip;
  record(9, ok,
         std::string("metrics ") + (metrics[0] == metrics[1] ? "identical" : "differ") + ", decodes " +
             (decodes[0] == decodes[1] ? "identical" : "differ") + ", checkpoints " +
             (ckpt[0] == ckpt[1] ? "identical" : "differ") + ", save/load/save " +
             (roundtrip ? "bit-exact" : "differs"));
}

}  // namespace

int main(int argc, char** argv) {
  fs::path grid = "runs/grid";
  std::string script;
  bool skip_grid = false;
  std::vector<int> expected_failures;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--grid" && i + 1 < argc) {
      grid = argv[++i];
    } else if (arg == "--run-grid" && i + 1 < argc) {
      script = argv[++i];
    } else if (arg == "--skip-grid") {
      skip_grid = true;
    } else if (arg == "--expect-fail" && i + 1 < argc) {
      expected_failures.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--grid DIR] [--run-grid SCRIPT] [--skip-grid] [--expect-fail N]...\n";
      return 2;
    }
  }
  const fs::path work = fs::temp_directory_path() / ("saml-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(work);

  if (!skip_grid && !script.empty() && !grid_finished(grid)) {
    std::cerr << "running " << script << " into " << grid << '\n';
    const std::string command = "'" + script + "' '" + grid.string() + "' >&2";
    if (std::system(command.c_str()) != 0) std::cerr << "grid script failed\n";
  }

  gradients();
  sampling();
  oracle();
  alignment();
  harness(grid);
  if (skip_grid) {
    std::printf("SKIP\tcriterion 6\n");
    std::printf("SKIP\tcriterion 7\n");
  } else {
    synthetic_grid(grid);
  }
  protocol(work / "protocol", grid);
  determinism(work / "determinism");
  fs::remove_all(work);

  std::size_t failed = 0, unexpected = 0;
  for (const auto& l : report) {
    if (l.passed) continue;
    ++failed;
    const bool expected = std::find(expected_failures.begin(), expected_failures.end(), l.criterion) !=
                          expected_failures.end();
    if (expected) {
      std::printf("criterion %d failure is expected\n", l.criterion);
    } else {
      ++unexpected;
    }
  }
  std::printf("%zu of %zu criteria passed\n", report.size() - failed, report.size());
  return unexpected == 0 ? 0 : 1;
}
