#include "saml/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include "saml/batch.hpp"
#include "saml/data.hpp"
#include "saml/decode.hpp"
#include "saml/eval.hpp"
#include "saml/grad_check.hpp"
#include "saml/model.hpp"
#include "saml/objectives.hpp"
#include "saml/random.hpp"
#include "saml/sampling.hpp"

namespace saml {
namespace {

using T = Tensor<double>;

T random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> values(numel(shape));
  for (double& v : values) v = lo + (hi - lo) * uniform01(rng);
  return T(std::move(shape), std::move(values));
}

Sentence random_sentence(std::size_t length, std::size_t vocab, Rng& rng) {
  Sentence s(length);
  for (auto& id : s) id = static_cast<TokenId>(kNumSpecials + rng() % (vocab - kNumSpecials));
  return s;
}

Batch random_batch(std::size_t rows, std::size_t lo, std::size_t hi, std::size_t vocab, Rng& rng) {
  std::vector<Sentence> src;
  std::vector<Sentence> tgt;
  for (std::size_t r = 0; r < rows; ++r) {
    src.push_back(random_sentence(lo + rng() % (hi - lo + 1), vocab, rng));
    tgt.push_back(random_sentence(lo + rng() % (hi - lo + 1), vocab, rng));
  }
  return make_batch(src, tgt);
}

ModelParams<double> toy_params(std::size_t vocab, std::size_t dim, double init_range,
                               std::uint64_t seed) {
  ModelConfig c;
  c.src_vocab = vocab;
  c.tgt_vocab = vocab;
  c.embed_dim = dim;
  c.hidden_dim = dim;
  c.attention_dim = dim;
  c.embed_dropout = 0;
  c.hidden_dropout = 0;
  c.init_range = init_range;
  return ModelParams<double>::initialize(c, seed);
}

CheckResult at_most(std::string name, double measured, double tolerance, std::string detail = "") {
  return {std::move(name), measured, tolerance, measured <= tolerance, std::move(detail)};
}

T contract(const T& out) {
  Rng rng(1234);
  return sum(mul(out, random_tensor(out.shape(), rng)));
}

std::uint64_t name_seed(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : name) h = (h ^ ch) * 1099511628211ULL;
  return h;
}

}  // namespace

const std::vector<PrimitiveCase>& primitive_cases() {
  static const std::vector<std::int32_t> ids = {3, 0, 3, 1};
  static const std::vector<std::int32_t> targets = {1, 4, 0, 2, 2, 3};
  static const std::vector<std::uint8_t> mask = {0, 1, 0, 0, 1, 0};
  static const std::vector<PrimitiveCase> cases = {
      {"add", {{2, 3}, {2, 3}}, [](auto in) { return add(in[0], in[1]); }},
      {"add_scalar", {{2, 3}, {}}, [](auto in) { return add(in[0], in[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](auto in) { return sub(in[0], in[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](auto in) { return mul(in[0], in[1]); }},
      {"mul_scalar", {{}, {2, 3}}, [](auto in) { return mul(in[0], in[1]); }},
      {"neg", {{5}}, [](auto in) { return neg(in[0]); }},
      {"scale", {{5}}, [](auto in) { return scale(in[0], -1.7); }},
      {"exp", {{5}}, [](auto in) { return exp(in[0]); }},
      {"log", {{5}}, [](auto in) { return log(in[0]); }, 0.5, 2.0},
      {"tanh", {{5}}, [](auto in) { return tanh(in[0]); }},
      {"sigmoid", {{5}}, [](auto in) { return sigmoid(in[0]); }},
      {"matmul", {{3, 4}, {4, 2}}, [](auto in) { return matmul(in[0], in[1]); }},
      {"batch_matmul", {{2, 3, 4}, {2, 4, 2}}, [](auto in) { return batch_matmul(in[0], in[1]); }},
      {"transpose2", {{3, 4}}, [](auto in) { return transpose(in[0]); }},
      {"transpose3", {{2, 3, 4}}, [](auto in) { return transpose(in[0]); }},
      {"add_bias", {{2, 3, 4}, {4}}, [](auto in) { return add_bias(in[0], in[1]); }},
      {"add_broadcast_rows", {{2, 3, 4}, {2, 4}},
       [](auto in) { return add_broadcast_rows(in[0], in[1]); }},
      {"concat", {{2, 3}, {2, 2}}, [](auto in) { return concat<double>({in[0], in[1]}); }},
      {"slice_last", {{2, 6}}, [](auto in) { return slice_last(in[0], 1, 3); }},
      {"reshape", {{2, 6}}, [](auto in) { return reshape(in[0], {3, 4}); }},
      {"stack0", {{2, 3}, {2, 3}}, [](auto in) { return stack<double>({in[0], in[1]}, 0); }},
      {"stack1", {{2, 3}, {2, 3}}, [](auto in) { return stack<double>({in[0], in[1]}, 1); }},
      {"softmax_last", {{3, 4}}, [](auto in) { return softmax(in[0], 1); }, -3, 3},
      {"softmax_first", {{3, 4}}, [](auto in) { return softmax(in[0], 0); }},
      {"log_softmax", {{2, 3, 4}}, [](auto in) { return log_softmax(in[0], 2); }, -3, 3},
      {"logsumexp", {{2, 3, 4}}, [](auto in) { return logsumexp(in[0], 1); }, -3, 3},
      {"sum_all", {{2, 3}}, [](auto in) { return sum(in[0]); }},
      {"sum_axis", {{2, 3, 4}}, [](auto in) { return sum(in[0], 1); }},
      {"lookup", {{4, 3}}, [](auto in) { return lookup(in[0], std::span(ids)); }},
      {"gather_last", {{4, 5}}, [](auto in) { return gather_last(in[0], std::span(ids)); }},
      {"gather_targets", {{2, 2, 5}},
       [](auto in) { return gather_targets(in[0], std::span(targets), 3); }},
      {"masked_fill", {{2, 3}}, [](auto in) { return masked_fill(in[0], std::span(mask), -7.0); }},
      {"layer_norm", {{3, 5}, {5}, {5}},
       [](auto in) { return layer_norm(in[0], in[1], in[2]); }, -2, 2},
  };
  return cases;
}

double primitive_gradient_error(const PrimitiveCase& c, std::size_t instances) {
  Rng rng(name_seed(c.name));
  double worst = 0;
  for (std::size_t trial = 0; trial < instances; ++trial) {
    std::vector<T> point;
    for (const Shape& s : c.shapes) point.push_back(random_tensor(s, rng, c.lo, c.hi));
    const auto report = grad_check<double>(
        [&](Tape<double>&, std::span<const T> in) { return contract(c.apply(in)); }, point);
    worst = std::max(worst, report.max_rel_error);
  }
  return worst;
}

std::vector<CheckResult> check_primitive_gradients(std::size_t instances, double tolerance) {
  std::vector<CheckResult> out;
  for (const auto& c : primitive_cases()) {
    out.push_back(at_most("grad " + c.name, primitive_gradient_error(c, instances), tolerance,
                          std::to_string(instances) + " instances"));
  }
  return out;
}

CheckResult check_mutation_detected() {
  auto broken_tanh = [](const T& x) {
    auto buffer = std::make_shared<std::vector<double>>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) (*buffer)[i] = std::tanh(x[i]);
    return x.tape()->record(OpKind::kTanh, x.shape(), buffer, {&x},
                            [buffer](std::span<const double> g, std::span<const std::span<double>> gi) {
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                gi[0][i] -= g[i] * (1 - (*buffer)[i] * (*buffer)[i]);
                              }
                            });
  };
  Rng rng(10);
  const auto report = grad_check<double>(
      [&](Tape<double>&, std::span<const T> in) { return sum(broken_tanh(in[0])); },
      {random_tensor({4}, rng)});
  CheckResult r{"mutation: sign-flipped tanh backward is caught", report.max_rel_error, 1.0,
                report.max_rel_error > 1.0, "measured must exceed tolerance"};
  return r;
}

CheckResult check_combined_gradient(std::size_t vocab, std::size_t dim, std::size_t target_length,
                                    double tolerance) {
  const auto params = toy_params(vocab, dim, 0.3, 3);
  Rng data(14);
  std::vector<Sentence> src;
  std::vector<Sentence> tgt;
  for (int r = 0; r < 2; ++r) {
    src.push_back(random_sentence(target_length, vocab, data));
    tgt.push_back(random_sentence(target_length - 1, vocab, data));
  }
  const Batch batch = make_batch(src, tgt);
  SamlOptions saml;
  saml.relaxation = Relaxation::kGumbelSoftmax;
  const LossOptions ml{0.1, Normalization::kPerWord};
  std::vector<T> point;
  for (std::size_t i = 0; i < params.size(); ++i) point.push_back(params.tensor(i));
  const auto report = grad_check<double>(
      [&](Tape<double>&, std::span<const T> in) {
        const Model<double> model(params.config(), std::vector<T>(in.begin(), in.end()));
        Rng noise = make_stream(21, kNoiseStream);
        return combined_loss(model, batch, ml, saml, noise);
      },
      point, 1e-3, Stencil::kFivePoint);
  return at_most("grad J_ML + J_SAML, V=" + std::to_string(vocab) + " d=" + std::to_string(dim) +
                     " T=" + std::to_string(target_length),
                 report.max_rel_error, tolerance, std::to_string(report.coordinates) + " coordinates");
}

CheckResult check_gumbel_frequencies(std::size_t draws, double tolerance) {
  const std::vector<double> p = {0.5, 0.3, 0.2};
  const T lp({3}, {std::log(p[0]), std::log(p[1]), std::log(p[2])});
  Rng rng = make_stream(14, kNoiseStream);
  std::vector<std::size_t> counts(3, 0);
  for (std::size_t i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(gumbel_max(lp, {1.0, 1.0, 0}, rng)[0])];
  double worst = 0;
  std::ostringstream freq;
  for (std::size_t k = 0; k < 3; ++k) {
    const double f = static_cast<double>(counts[k]) / static_cast<double>(draws);
    worst = std::max(worst, std::abs(f - p[k]));
    freq << (k ? " " : "frequencies ") << f;
  }
  return at_most("gumbel-max frequencies over " + std::to_string(draws) + " draws", worst, tolerance,
                 freq.str());
}

CheckResult check_straight_through(std::size_t cases) {
  Rng rng(20);
  const GumbelConfig cfg{0.9, 0.5, 0};
  double worst = 0;
  std::size_t bad_forward = 0;
  for (std::size_t trial = 0; trial < cases; ++trial) {
    const T logits = random_tensor({2, 7}, rng, -3, 3);
    const T noise = sample_gumbel<double>(logits.shape(), rng);
    const T weight = random_tensor({2, 7}, rng);

    Tape<double> st_tape;
    const T a = st_tape.watch(logits);
    const auto s = st_gumbel_softmax_with_noise(log_softmax(a, 1), noise, cfg);
    const T g_st = st_tape.backward(sum(mul(s.hard, weight))).of(a);

    Tape<double> relaxed_tape;
    const T b = relaxed_tape.watch(logits);
    const T g_rel =
        relaxed_tape.backward(sum(mul(relax_with_noise(log_softmax(b, 1), noise, cfg), weight))).of(b);

    for (std::size_t i = 0; i < g_st.size(); ++i) worst = std::max(worst, std::abs(g_st[i] - g_rel[i]));
    const auto expected = argmax_rows(perturb(log_softmax(logits, 1), noise, cfg.beta));
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t c = 0; c < 7; ++c) {
        const double want = static_cast<std::int32_t>(c) == expected[r] ? 1.0 : 0.0;
        if (s.hard[r * 7 + c] != want) ++bad_forward;
      }
    }
  }
  CheckResult r = at_most("straight-through backward equals relaxed backward", worst, 0.0,
                          std::to_string(cases) + " cases, " + std::to_string(bad_forward) +
                              " non-one-hot forward entries");
  r.passed = r.passed && bad_forward == 0;
  return r;
}

CheckResult check_diagonal_oracle(std::size_t batches, double tolerance) {
  ModelParams<double> params = toy_params(7, 8, 0.3, 3);
  const Model<double> model(params, nullptr);
  const LossOptions exact{0.0, Normalization::kPerWord};
  Rng data(11);
  double worst = 0;
  for (std::size_t trial = 0; trial < batches; ++trial) {
    const Batch batch = random_batch(3, 1, 6, 7, data);
    const auto enc = model.encode(batch.source);
    const T log_p = stack(teacher_forced_log_probs(model, batch, enc), 1);
    const std::size_t n = batch.target.cols;
    std::vector<double> diag(3 * n * n, -1e9);
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t t = 0; t < n; ++t) diag[(b * n + t) * n + t] = 0.0;
    }
    const double aligned =
        aligned_nll_sum(T({3, n, n}, diag), log_p, batch.target, batch.target.lengths).item() /
        static_cast<double>(batch.target_words());
    worst = std::max(worst, std::abs(aligned - ml_loss(model, batch, enc, exact).item()));
  }
  return at_most("diagonal-alignment SAML equals unsmoothed ML", worst, tolerance,
                 std::to_string(batches) + " batches");
}

std::vector<CheckResult> check_soft_alignment(std::size_t batches) {
  std::vector<CheckResult> out;
  ModelParams<double> params = toy_params(7, 8, 0.3, 3);
  {
    const Model<double> model(params, nullptr);
    Rng data(9);
    double worst = 0;
    for (std::size_t trial = 0; trial < batches; ++trial) {
      const Batch batch = random_batch(3, 1, 6, 7, data);
      const auto enc = model.encode(batch.source);
      Rng noise(400 + trial);
      const auto r = rollout(model, enc, {10, 10, 10}, GumbelConfig{}, Relaxation::kStraightThrough, noise);
      const T a = soft_alignment(model, r, batch.target);
      const std::size_t rows = batch.target.cols;
      const std::size_t cols = r.steps();
      for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t t = 0; t < rows; ++t) {
          double total = 0;
          for (std::size_t j = 0; j < cols; ++j) total += a[(b * rows + t) * cols + j];
          worst = std::max(worst, std::abs(total - 1.0));
        }
      }
    }
    out.push_back(at_most("soft-alignment rows sum to 1", worst, 1e-6,
                          std::to_string(batches) + " sampled batches"));
  }
  {
    const Model<double> model(params, nullptr);
    Rng rng(7);
    RolloutRecord<double> r;
    r.hidden.push_back(random_tensor({1, 8}, rng));
    r.lengths = {1};
    const T a = soft_alignment(model, r, TokenMatrix::from_sentences({{4, 5, 6, kEos}}));
    double worst = 0;
    for (double v : a.values()) worst = std::max(worst, std::abs(v - 1.0));
    out.push_back(at_most("soft alignment with T'=1 is exactly 1", worst, 0.0));
  }
  {
    ModelParams<double> flat = params;
    for (double& v : flat["tgt_embed"].mutable_values()) v = 0;
    const Model<double> model(flat, nullptr);
    Rng rng(8);
    RolloutRecord<double> r;
    for (int j = 0; j < 3; ++j) r.hidden.push_back(random_tensor({1, 8}, rng));
    r.lengths = {3};
    const T a = soft_alignment(model, r, TokenMatrix::from_sentences({{4, kEos}}));
    double worst = 0;
    for (double v : a.values()) worst = std::max(worst, std::abs(v - 1.0 / 3));
    out.push_back(at_most("equal scores give the uniform alignment 1/3", worst, 0.0));
  }
  return out;
}

CheckResult check_beam_matches_greedy(std::size_t sentences) {
  const auto params = toy_params(12, 8, 0.5, 5);
  Rng data(31);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < sentences; ++i) {
    const Sentence src = random_sentence(1 + data() % 8, 12, data);
    const Hypothesis g = greedy_decode(params, src);
    const Hypothesis b = beam_search(params, src, DecodeOptions{1, 1.0, 0});
    if (g.tokens != b.tokens || g.finished != b.finished || g.log_prob != b.log_prob) ++mismatches;
  }
  return at_most("beam 1 equals greedy", static_cast<double>(mismatches), 0.0,
                 std::to_string(sentences) + " sentences, measured = mismatches");
}

CheckResult check_exhaustive_beam(std::size_t models, std::size_t max_length) {
  const std::size_t vocab = 5;
  std::size_t mismatches = 0;
  double worst = 0;
  for (std::size_t m = 0; m < models; ++m) {
    const auto params = toy_params(vocab, 6, 1.5, 100 + m);
    const Model<double> model(params, nullptr);
    Rng data(200 + m);
    const Sentence src = random_sentence(3, vocab, data);

    // Every EOS-terminated sequence of at most max_length tokens over the
    // emittable ids, scored by teacher forcing.
    std::vector<TokenId> emittable;
    for (std::size_t v = 0; v < vocab; ++v) {
      if (v != static_cast<std::size_t>(kPad) && v != static_cast<std::size_t>(kBos) &&
          v != static_cast<std::size_t>(kEos)) {
        emittable.push_back(static_cast<TokenId>(v));
      }
    }
    std::vector<Sentence> prefixes = {{}};
    std::vector<Sentence> all;
    for (std::size_t len = 0; len < max_length; ++len) {
      std::vector<Sentence> longer;
      for (const auto& p : prefixes) {
        all.push_back(p);
        for (TokenId v : emittable) {
          longer.push_back(p);
          longer.back().push_back(v);
        }
      }
      prefixes = std::move(longer);
    }
    double best_score = -1e300;
    Sentence best;
    for (const auto& seq : all) {
      const Batch batch = make_batch({src}, {seq});
      const auto steps = teacher_forced_log_probs(model, batch, model.encode(batch.source));
      double lp = 0;
      for (std::size_t t = 0; t < steps.size(); ++t) lp += steps[t][static_cast<std::size_t>(batch.target.at(0, t))];
      const double score = lp / static_cast<double>(seq.size() + 1);
      if (score > best_score) {
        best_score = score;
        best = seq;
      }
    }
    std::size_t width = 1;
    for (std::size_t i = 0; i < max_length; ++i) width *= vocab;
    const Hypothesis h = beam_search(params, src, DecodeOptions{width, 1.0, max_length});
    if (h.tokens != best || !h.finished) ++mismatches;
    worst = std::max(worst, std::abs(h.score(1.0) - best_score));
  }
  CheckResult r = at_most("full-width beam finds the enumerated optimum (V=5, max_len=" +
                              std::to_string(max_length) + ")",
                          worst, 1e-9,
                          std::to_string(models) + " models, " + std::to_string(mismatches) +
                              " sequence mismatches; measured = score gap");
  r.passed = r.passed && mismatches == 0;
  return r;
}

CheckResult check_bleu_identity() {
  const auto text = synth_task(SynthConfig{SynthKind::kLexicon, 30, 5, 15, 50, 3, 2});
  const double bleu = corpus_bleu(text.target, text.target);
  return at_most("BLEU of a corpus against itself", std::abs(bleu - 100.0), 1e-9);
}

std::vector<CheckResult> run_selftest() {
  std::vector<CheckResult> out = check_primitive_gradients(5, 1e-6);
  out.push_back(check_mutation_detected());
  out.push_back(check_combined_gradient(7, 4, 4, 1e-4));
  out.push_back(check_gumbel_frequencies(200000, 0.005));
  out.push_back(check_straight_through(100));
  out.push_back(check_diagonal_oracle(20, 1e-8));
  for (auto& r : check_soft_alignment(20)) out.push_back(std::move(r));
  out.push_back(check_beam_matches_greedy(50));
  out.push_back(check_exhaustive_beam(3, 4));
  out.push_back(check_bleu_identity());
  return out;
}

std::string format_report(const std::vector<CheckResult>& results) {
  std::ostringstream out;
  char buf[64];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%.3e\t%.3e", r.measured, r.tolerance);
    out << (r.passed ? "PASS" : "FAIL") << '\t' << r.name << '\t' << buf;
    if (!r.detail.empty()) out << '\t' << r.detail;
    out << '\n';
  }
  return out.str();
}

}  // namespace saml
