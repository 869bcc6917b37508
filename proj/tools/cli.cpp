#include "cli.hpp"

#include <zlib.h>

#include <CLI11.hpp>
#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "saml/data.hpp"
#include "saml/decode.hpp"
#include "saml/eval.hpp"
#include "saml/selftest.hpp"
#include "saml/training.hpp"

namespace saml::cli {
namespace {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

using Real = float;

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

const char* relaxation_name(Relaxation r) {
  switch (r) {
    case Relaxation::kStraightThrough:
      return "st";
    case Relaxation::kGumbelSoftmax:
      return "gs";
    case Relaxation::kDetached:
      return "detached";
  }
  return "?";
}

Relaxation parse_relaxation(const std::string& s) {
  if (s == "st") return Relaxation::kStraightThrough;
  if (s == "gs") return Relaxation::kGumbelSoftmax;
  if (s == "detached") return Relaxation::kDetached;
  throw InputError("saml.relaxation must be st, gs or detached, got '" + s + "'");
}

struct Settings {
  ModelConfig model;
  TrainConfig train;
};

pt::ptree to_tree(const Settings& s) {
  pt::ptree t;
  const ModelConfig& m = s.model;
  t.put("model.embed_dim", m.embed_dim);
  t.put("model.hidden_dim", m.hidden_dim);
  t.put("model.attention_dim", m.attention_dim);
  t.put("model.embed_dropout", shortest(m.embed_dropout));
  t.put("model.hidden_dropout", shortest(m.hidden_dropout));
  t.put("model.init_range", shortest(m.init_range));
  const TrainConfig& c = s.train;
  t.put("train.objective", objective_name(c.objective));
  t.put("train.seed", c.seed);
  t.put("train.batch_words", c.batch_words);
  t.put("train.checkpoint_interval", c.checkpoint_interval);
  t.put("train.learning_rate", shortest(c.learning_rate));
  t.put("train.lr_decay", shortest(c.lr_decay));
  t.put("train.decay_window", c.decay_window);
  t.put("train.patience", c.patience);
  t.put("train.min_checkpoints", c.min_checkpoints);
  t.put("train.max_checkpoints", c.max_checkpoints);
  t.put("train.clip_norm", shortest(c.clip_norm));
  t.put("train.anneal_k", shortest(c.anneal_k));
  t.put("train.fixed_epsilon", shortest(c.fixed_epsilon));
  t.put("train.label_smoothing", shortest(c.loss.label_smoothing));
  t.put("saml.tau", shortest(c.saml.gumbel.tau));
  t.put("saml.beta", shortest(c.saml.gumbel.beta));
  t.put("saml.relaxation", relaxation_name(c.saml.relaxation));
  t.put("saml.detach_alignment", c.saml.detach_alignment ? "true" : "false");
  t.put("saml.length_ratio", shortest(c.saml.length_ratio));
  t.put("saml.length_slack", c.saml.length_slack);
  return t;
}

template <typename V>
V read(const pt::ptree& t, const std::string& key) {
  const std::string raw = t.get<std::string>(key);
  V value{};
  if constexpr (std::is_same_v<V, double>) {
    std::size_t used = 0;
    try {
      value = std::stod(raw, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != raw.size()) throw InputError("setting " + key + ": '" + raw + "' is not a number");
  } else {
    const auto r = std::from_chars(raw.data(), raw.data() + raw.size(), value);
    if (r.ec != std::errc() || r.ptr != raw.data() + raw.size()) {
      throw InputError("setting " + key + ": '" + raw + "' is not a non-negative integer");
    }
  }
  return value;
}

bool read_bool(const pt::ptree& t, const std::string& key) {
  const std::string raw = t.get<std::string>(key);
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  throw InputError("setting " + key + ": expected true or false, got '" + raw + "'");
}

Settings from_tree(const pt::ptree& t) {
  Settings s;
  ModelConfig& m = s.model;
  m.embed_dim = read<std::size_t>(t, "model.embed_dim");
  m.hidden_dim = read<std::size_t>(t, "model.hidden_dim");
  m.attention_dim = read<std::size_t>(t, "model.attention_dim");
  m.embed_dropout = read<double>(t, "model.embed_dropout");
  m.hidden_dropout = read<double>(t, "model.hidden_dropout");
  m.init_range = read<double>(t, "model.init_range");
  TrainConfig& c = s.train;
  c.objective = parse_objective(t.get<std::string>("train.objective"));
  c.seed = read<std::uint64_t>(t, "train.seed");
  c.batch_words = read<std::size_t>(t, "train.batch_words");
  c.checkpoint_interval = read<std::size_t>(t, "train.checkpoint_interval");
  c.learning_rate = read<double>(t, "train.learning_rate");
  c.lr_decay = read<double>(t, "train.lr_decay");
  c.decay_window = read<std::size_t>(t, "train.decay_window");
  c.patience = read<std::size_t>(t, "train.patience");
  c.min_checkpoints = read<std::size_t>(t, "train.min_checkpoints");
  c.max_checkpoints = read<std::size_t>(t, "train.max_checkpoints");
  c.clip_norm = read<double>(t, "train.clip_norm");
  c.anneal_k = read<double>(t, "train.anneal_k");
  c.fixed_epsilon = read<double>(t, "train.fixed_epsilon");
  c.loss.label_smoothing = read<double>(t, "train.label_smoothing");
  c.saml.gumbel.tau = read<double>(t, "saml.tau");
  c.saml.gumbel.beta = read<double>(t, "saml.beta");
  c.saml.relaxation = parse_relaxation(t.get<std::string>("saml.relaxation"));
  c.saml.detach_alignment = read_bool(t, "saml.detach_alignment");
  c.saml.length_ratio = read<double>(t, "saml.length_ratio");
  c.saml.length_slack = read<std::size_t>(t, "saml.length_slack");
  c.saml.gumbel.seed = c.seed;
  return s;
}

void overlay(pt::ptree& base, const std::string& key, const std::string& value, const std::string& origin) {
  if (!base.get_optional<std::string>(key)) throw InputError(origin + ": unknown setting '" + key + "'");
  base.put(key, value);
}

/// Defaults, then the config file, then --set overrides, then dedicated flags.
pt::ptree resolve(const Settings& defaults, const std::string& config_file,
                  const std::vector<std::string>& sets) {
  pt::ptree tree = to_tree(defaults);
  if (!config_file.empty()) {
    pt::ptree file;
    try {
      pt::read_ini(config_file, file);
    } catch (const pt::ini_parser_error& e) {
      throw InputError(e.what());
    }
    for (const auto& [section, entries] : file) {
      // A manifest's [run] section describes the run rather than configuring it.
      if (section == "run") continue;
      if (entries.empty()) throw InputError(config_file + ": key '" + section + "' outside a section");
      for (const auto& [key, value] : entries) overlay(tree, section + "." + key, value.data(), config_file);
    }
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw InputError("--set expects section.key=value, got '" + s + "'");
    overlay(tree, s.substr(0, eq), s.substr(eq + 1), "--set");
  }
  return tree;
}

std::string to_ini(const pt::ptree& tree) {
  std::ostringstream out;
  pt::write_ini(out, tree);
  return out.str();
}

std::string crc_hex(const std::string& text) {
  const auto crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()),
                         static_cast<uInt>(text.size()));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

/// Resolved settings plus a [run] section; config_hash covers the settings.
void write_manifest(const fs::path& path, const pt::ptree& settings,
                    const std::vector<std::pair<std::string, std::string>>& run) {
  pt::ptree manifest = settings;
  manifest.put("run.config_hash", crc_hex(to_ini(settings)));
  for (const auto& [k, v] : run) manifest.put("run." + k, v);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path.string() + ": cannot write");
  out << to_ini(manifest);
}

std::size_t thread_count() {
  const char* env = std::getenv("SAML_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  std::size_t n = 0;
  const auto r = std::from_chars(env, env + std::strlen(env), n);
  if (r.ec != std::errc() || *r.ptr != '\0' || n == 0) {
    throw InputError(std::string("SAML_THREADS must be a positive integer, got '") + env + "'");
  }
  return n;
}

struct PreparedData {
  Vocabulary source_vocab;
  Vocabulary target_vocab;
};

PreparedData load_vocabs(const fs::path& dir) {
  return {Vocabulary::load(dir / "vocab.src"), Vocabulary::load(dir / "vocab.tgt")};
}

ParallelCorpus load_split(const fs::path& dir, const std::string& split, const PreparedData& data) {
  ParallelCorpus c{load_ids(dir / (split + ".src.ids")), load_ids(dir / (split + ".tgt.ids"))};
  if (c.source.size() != c.target.size()) throw InputError(dir.string() + ": " + split + " sides differ in length");
  auto check = [&](const std::vector<Sentence>& side, const Vocabulary& v, const char* name) {
    for (const auto& s : side) {
      for (TokenId id : s) {
        if (id < 0 || static_cast<std::size_t>(id) >= v.size()) {
          throw InputError(dir.string() + ": " + split + "." + name + ".ids holds id " + std::to_string(id) +
                           " outside the vocabulary");
        }
      }
    }
  };
  check(c.source, data.source_vocab, "src");
  check(c.target, data.target_vocab, "tgt");
  return c;
}

void require_vocab_match(const ModelConfig& model, const PreparedData& data, const fs::path& checkpoint) {
  if (model.src_vocab != data.source_vocab.size() || model.tgt_vocab != data.target_vocab.size()) {
    throw InputError(checkpoint.string() + ": vocabulary sizes " + std::to_string(model.src_vocab) + "/" +
                     std::to_string(model.tgt_vocab) + " do not match the data (" +
                     std::to_string(data.source_vocab.size()) + "/" +
                     std::to_string(data.target_vocab.size()) + ")");
  }
}

std::vector<Tokens> read_lines_allow_empty(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path.string() + ": cannot open");
  std::vector<Tokens> out;
  for (std::string line; std::getline(in, line);) {
    std::istringstream words(line);
    Tokens t;
    for (std::string w; words >> w;) t.push_back(std::move(w));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Tokens> strip_specials(const std::vector<Hypothesis>& hyps, const Vocabulary& vocab) {
  std::vector<Tokens> out;
  for (const auto& h : hyps) out.push_back(vocab.decode(h.tokens));
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& kind, std::size_t vocab, std::size_t min_len, std::size_t max_len,
              std::size_t train, std::size_t dev, std::size_t test, std::uint64_t seed,
              const fs::path& out) {
  SynthConfig c;
  c.kind = parse_synth_kind(kind);
  c.vocab_size = vocab;
  c.min_length = min_len;
  c.max_length = max_len;
  c.pairs = train + dev + test;
  c.seed = seed;
  const ParallelText all = synth_task(c);
  fs::create_directories(out);
  std::size_t begin = 0;
  for (const auto& [name, count] : {std::pair<std::string, std::size_t>{"train", train}, {"dev", dev}, {"test", test}}) {
    const auto from = all.source.begin() + static_cast<std::ptrdiff_t>(begin);
    const auto to = all.target.begin() + static_cast<std::ptrdiff_t>(begin);
    write_corpus(out / (name + ".src"), std::vector<Tokens>(from, from + static_cast<std::ptrdiff_t>(count)));
    write_corpus(out / (name + ".tgt"), std::vector<Tokens>(to, to + static_cast<std::ptrdiff_t>(count)));
    begin += count;
  }
  return kOk;
}

int cmd_prepare(const fs::path& src, const fs::path& tgt, const fs::path& dev_src, const fs::path& dev_tgt,
                const fs::path& test_src, const fs::path& test_tgt, std::size_t min_count, const fs::path& out) {
  const ParallelText train = read_parallel(src, tgt);
  if (train.size() == 0) throw InputError(src.string() + ": empty corpus");
  const Vocabulary sv = Vocabulary::build(train.source, min_count);
  const Vocabulary tv = Vocabulary::build(train.target, min_count);
  fs::create_directories(out);
  sv.save(out / "vocab.src");
  tv.save(out / "vocab.tgt");
  auto write_split = [&](const std::string& name, const ParallelText& text) {
    const auto c = ParallelCorpus::encode(text, sv, tv);
    save_ids(out / (name + ".src.ids"), c.source);
    save_ids(out / (name + ".tgt.ids"), c.target);
  };
  write_split("train", train);
  if (dev_src.empty() != dev_tgt.empty() || test_src.empty() != test_tgt.empty()) {
    throw InputError("prepare: give both sides of the dev and test splits");
  }
  if (!dev_src.empty()) write_split("dev", read_parallel(dev_src, dev_tgt));
  if (!test_src.empty()) write_split("test", read_parallel(test_src, test_tgt));
  std::cout << "source vocabulary " << sv.size() << ", target vocabulary " << tv.size() << ", "
            << train.size() << " training pairs\n";
  return kOk;
}

int cmd_train(bool finetune, const fs::path& data_dir, const fs::path& run_dir, const std::string& config,
              const std::vector<std::string>& sets, const std::string& objective, std::optional<std::uint64_t> seed,
              const fs::path& init) {
  Settings defaults;
  defaults.train = finetune ? TrainConfig::finetune_defaults() : TrainConfig::pretrain_defaults();
  pt::ptree tree = resolve(defaults, config, sets);
  if (!objective.empty()) tree.put("train.objective", objective);
  if (seed) tree.put("train.seed", *seed);
  Settings s = from_tree(tree);
  if (finetune && init.empty()) throw InputError("finetune requires --init-checkpoint");
  if (!init.empty() && !fs::exists(init)) throw InputError(init.string() + ": checkpoint not found");
  s.train.validate();

  const PreparedData data = load_vocabs(data_dir);
  const ParallelCorpus train_set = load_split(data_dir, "train", data);
  const ParallelCorpus dev_set = load_split(data_dir, "dev", data);
  if (train_set.size() == 0) throw InputError(data_dir.string() + ": empty training corpus");
  if (dev_set.size() == 0) throw InputError(data_dir.string() + ": empty dev corpus");
  s.model.src_vocab = data.source_vocab.size();
  s.model.tgt_vocab = data.target_vocab.size();
  s.model.validate();

  fs::create_directories(run_dir / "checkpoints");
  fs::create_directories(run_dir / "outputs");
  std::vector<std::pair<std::string, std::string>> run = {
      {"command", finetune ? "finetune" : "train"},
      {"data", data_dir.string()},
      {"src_vocab", std::to_string(s.model.src_vocab)},
      {"tgt_vocab", std::to_string(s.model.tgt_vocab)},
  };
  if (!init.empty()) run.emplace_back("init_checkpoint", init.string());
  write_manifest(run_dir / "manifest", tree, run);

  const TrainPaths paths{run_dir / "checkpoints", run_dir / "metrics.tsv"};
  auto report = [](const MetricsRecord& r) { std::cerr << r.to_line() << '\n'; };
  TrainSummary summary;
  if (init.empty()) {
    ModelParams<Real> params = ModelParams<Real>::initialize(s.model, s.train.seed);
    summary = train(params, train_set, dev_set, s.train, paths, report);
  } else {
    summary = saml::finetune<Real>(init, s.model, train_set, dev_set, s.train, paths, report);
  }
  std::cout << "checkpoints " << summary.checkpoints << ", updates " << summary.updates
            << ", best perplexity " << summary.best_perplexity << " at checkpoint "
            << summary.best_checkpoint << (summary.stopped_early ? " (early stop)" : "") << '\n';
  return kOk;
}

int cmd_translate(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& input,
                  const fs::path& output, std::size_t beam, double alpha, std::size_t max_len) {
  const PreparedData data = load_vocabs(data_dir);
  const ModelParams<Real> params = load_checkpoint<Real>(checkpoint).params;
  require_vocab_match(params.config(), data, checkpoint);
  const auto lines = read_corpus(input);
  std::vector<Sentence> sources;
  for (const auto& l : lines) sources.push_back(data.source_vocab.encode(l));
  const auto hyps = decode_all(params, sources, DecodeOptions{beam, alpha, max_len}, thread_count());
  if (!output.parent_path().empty()) fs::create_directories(output.parent_path());
  write_corpus(output, strip_specials(hyps, data.target_vocab));
  return kOk;
}

int cmd_eval(const fs::path& hyp, const fs::path& ref) {
  const auto h = read_lines_allow_empty(hyp);
  const auto r = read_lines_allow_empty(ref);
  if (h.size() != r.size()) {
    throw InputError(hyp.string() + " has " + std::to_string(h.size()) + " lines but " + ref.string() +
                     " has " + std::to_string(r.size()));
  }
  std::printf("%.2f\n", corpus_bleu(h, r));
  return kOk;
}

int cmd_sweep(const fs::path& data_dir, const std::vector<std::string>& checkpoints,
              const std::vector<std::size_t>& beams, const std::string& baseline, const std::string& split,
              const fs::path& out_dir) {
  const PreparedData data = load_vocabs(data_dir);
  const ParallelCorpus test = load_split(data_dir, split, data);
  std::vector<Tokens> references;
  for (const auto& t : test.target) references.push_back(data.target_vocab.decode(t));

  SweepTable table;
  table.beams = beams;
  std::vector<std::vector<fs::path>> paths;
  for (const auto& entry : checkpoints) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0) throw InputError("--checkpoint expects objective=path, got '" + entry + "'");
    const std::string name = entry.substr(0, eq);
    auto it = std::find(table.objectives.begin(), table.objectives.end(), name);
    if (it == table.objectives.end()) {
      table.objectives.push_back(name);
      paths.emplace_back();
      it = table.objectives.end() - 1;
    }
    paths[static_cast<std::size_t>(it - table.objectives.begin())].push_back(entry.substr(eq + 1));
  }
  const auto base = std::find(table.objectives.begin(), table.objectives.end(), baseline);
  if (base == table.objectives.end()) throw InputError("sweep: no checkpoints for the baseline '" + baseline + "'");
  const auto bi = static_cast<std::size_t>(base - table.objectives.begin());
  std::rotate(table.objectives.begin(), table.objectives.begin() + static_cast<std::ptrdiff_t>(bi),
              table.objectives.begin() + static_cast<std::ptrdiff_t>(bi) + 1);
  std::rotate(paths.begin(), paths.begin() + static_cast<std::ptrdiff_t>(bi),
              paths.begin() + static_cast<std::ptrdiff_t>(bi) + 1);
  for (const auto& p : paths) {
    if (p.size() != paths[0].size()) throw InputError("sweep: every objective needs the same number of seeds");
  }

  fs::create_directories(out_dir / "outputs");
  const std::size_t threads = thread_count();
  table.bleu.assign(beams.size(), std::vector<std::vector<double>>(table.objectives.size()));
  for (std::size_t o = 0; o < table.objectives.size(); ++o) {
    for (std::size_t k = 0; k < paths[o].size(); ++k) {
      const ModelParams<Real> params = load_checkpoint<Real>(paths[o][k]).params;
      require_vocab_match(params.config(), data, paths[o][k]);
      for (std::size_t b = 0; b < beams.size(); ++b) {
        const auto hyps = strip_specials(decode_all(params, test.source, DecodeOptions{beams[b], 1.0, 0}, threads),
                                         data.target_vocab);
        write_corpus(out_dir / "outputs" /
                         (table.objectives[o] + "-" + std::to_string(k) + "-beam" + std::to_string(beams[b]) + ".txt"),
                     hyps);
        table.bleu[b][o].push_back(corpus_bleu(hyps, references));
      }
    }
  }
  const std::string tsv = table.to_tsv();
  std::ofstream(out_dir / "sweep.tsv", std::ios::binary) << tsv;
  std::ofstream(out_dir / "sweep_raw.tsv", std::ios::binary) << table.raw_tsv();
  pt::ptree settings;
  std::string beam_list;
  for (std::size_t b : beams) beam_list += (beam_list.empty() ? "" : ",") + std::to_string(b);
  settings.put("sweep.beams", beam_list);
  settings.put("sweep.baseline", baseline);
  settings.put("sweep.split", split);
  settings.put("sweep.length_penalty", "1");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) settings.put("sweep.checkpoint" + std::to_string(i), checkpoints[i]);
  write_manifest(out_dir / "manifest", settings, {{"command", "sweep"}, {"data", data_dir.string()}});
  std::cout << tsv;
  return kOk;
}

int cmd_selftest() {
  const auto results = run_selftest();
  std::cout << format_report(results);
  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.passed; });
  std::cout << (failed == 0 ? "all " + std::to_string(results.size()) + " checks passed\n"
                            : std::to_string(failed) + " of " + std::to_string(results.size()) + " checks failed\n");
  return failed == 0 ? kOk : kInternalError;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Sequence-to-sequence training with ML, SS, DSS and SAML objectives"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic parallel corpus");
  std::string kind = "lexicon";
  std::size_t vocab = 30, min_len = 5, max_len = 15, n_train = 10000, n_dev = 500, n_test = 500;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  synth->add_option("--kind", kind, "copy, reverse or lexicon")->capture_default_str();
  synth->add_option("--vocab", vocab, "Vocabulary size including the four specials")->capture_default_str();
  synth->add_option("--min-len", min_len)->capture_default_str();
  synth->add_option("--max-len", max_len)->capture_default_str();
  synth->add_option("--train", n_train)->capture_default_str();
  synth->add_option("--dev", n_dev)->capture_default_str();
  synth->add_option("--test", n_test)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  auto* prepare = app.add_subcommand("prepare", "Build vocabularies and id-encoded corpora");
  std::string src, tgt, dev_src, dev_tgt, test_src, test_tgt, prep_out;
  std::size_t min_count = 1;
  prepare->add_option("--src", src, "Training source text")->required();
  prepare->add_option("--tgt", tgt, "Training target text")->required();
  prepare->add_option("--dev-src", dev_src);
  prepare->add_option("--dev-tgt", dev_tgt);
  prepare->add_option("--test-src", test_src);
  prepare->add_option("--test-tgt", test_tgt);
  prepare->add_option("--min-count", min_count)->capture_default_str();
  prepare->add_option("--out", prep_out)->required();

  std::string data_dir, run_dir, config, objective, init;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  auto add_train_options = [&](CLI::App* cmd) {
    cmd->add_option("--data", data_dir, "Directory written by prepare")->required();
    cmd->add_option("--run", run_dir, "Run directory, conventionally runs/<name>")->required();
    cmd->add_option("--config", config, "INI file with [model], [train] and [saml] sections");
    cmd->add_option("--set", sets, "Override one setting, section.key=value");
    cmd->add_option("--objective", objective, "ml, ss, dss, ss_noanneal or saml");
    cmd->add_option("--seed", seed, "Overrides train.seed (default 1)");
    cmd->add_option("--init-checkpoint", init);
  };
  auto* train_cmd = app.add_subcommand("train", "Train from scratch");
  add_train_options(train_cmd);
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune a trained checkpoint");
  add_train_options(finetune_cmd);

  auto* translate = app.add_subcommand("translate", "Decode a source file");
  std::string checkpoint, input, output;
  std::size_t beam = 5, decode_max = 0;
  double alpha = 1.0;
  translate->add_option("--checkpoint", checkpoint)->required();
  translate->add_option("--data", data_dir, "Directory holding vocab.src and vocab.tgt")->required();
  translate->add_option("--input", input)->required();
  translate->add_option("--output", output)->required();
  translate->add_option("--beam", beam)->capture_default_str()->check(CLI::PositiveNumber);
  translate->add_option("--length-penalty", alpha)->capture_default_str();
  translate->add_option("--max-len", decode_max, "0 uses ceil(1.5 * source length) + 5")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Corpus BLEU of a hypothesis file");
  std::string hyp, ref;
  eval->add_option("--hyp", hyp)->required();
  eval->add_option("--ref", ref)->required();

  auto* sweep = app.add_subcommand("sweep", "BLEU difference to a baseline across beam sizes");
  std::vector<std::string> sweep_checkpoints;
  std::vector<std::size_t> beams = {1, 2, 5, 10};
  std::string baseline = "ml", split = "test", sweep_out;
  sweep->add_option("--data", data_dir)->required();
  sweep->add_option("--checkpoint", sweep_checkpoints, "objective=path; repeat per seed")->required();
  sweep->add_option("--beams", beams)->delimiter(',')->capture_default_str();
  sweep->add_option("--baseline", baseline)->capture_default_str();
  sweep->add_option("--split", split)->capture_default_str();
  sweep->add_option("--out", sweep_out)->required();

  auto* selftest = app.add_subcommand("selftest", "Run the numeric self-checks");

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  if (storage.empty()) storage.push_back("saml");
  for (auto& a : storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }

  try {
    if (*synth) return cmd_synth(kind, vocab, min_len, max_len, n_train, n_dev, n_test, synth_seed, synth_out);
    if (*prepare) return cmd_prepare(src, tgt, dev_src, dev_tgt, test_src, test_tgt, min_count, prep_out);
    if (*train_cmd) return cmd_train(false, data_dir, run_dir, config, sets, objective, seed, init);
    if (*finetune_cmd) {
      if (objective.empty()) throw InputError("finetune requires --objective");
      return cmd_train(true, data_dir, run_dir, config, sets, objective, seed, init);
    }
    if (*translate) return cmd_translate(checkpoint, data_dir, input, output, beam, alpha, decode_max);
    if (*eval) return cmd_eval(hyp, ref);
    if (*sweep) {
      for (std::size_t b : beams) {
        if (b == 0) throw InputError("--beams must be positive");
      }
      return cmd_sweep(data_dir, sweep_checkpoints, beams, baseline, split, sweep_out);
    }
    if (*selftest) return cmd_selftest();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUserError;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUserError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUserError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUserError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternalError;
  }
  return kInternalError;
}

}  // namespace saml::cli
