#include "saml/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "saml/objectives.hpp"

namespace saml {
namespace {

bool emittable(std::size_t id) { return id != static_cast<std::size_t>(kPad) && id != static_cast<std::size_t>(kBos); }

TokenMatrix single_row(const Sentence& source) {
  if (source.empty()) throw std::invalid_argument("decode: empty source sentence");
  return TokenMatrix::from_sentences({source});
}

template <typename Real>
struct Session {
  Model<Real> model;
  EncoderOutput<Real> enc;

  Session(const ModelParams<Real>& params, const Sentence& source)
      : model(params, nullptr), enc(model.encode(single_row(source))) {}
};

std::size_t resolve_cap(std::size_t requested, std::size_t source_length) {
  return requested ? requested : default_max_length(source_length);
}

}  // namespace

double Hypothesis::score(double alpha) const {
  const std::size_t n = length();
  return n == 0 ? log_prob : log_prob / std::pow(static_cast<double>(n), alpha);
}

std::size_t default_max_length(std::size_t source_length) {
  return rollout_cap(source_length, 1.5, 5);
}

template <typename Real>
Hypothesis greedy_decode(const ModelParams<Real>& params, const Sentence& source,
                         std::size_t max_length) {
  const Session<Real> s(params, source);
  const std::size_t cap = resolve_cap(max_length, source.size());
  DecoderState<Real> state = s.model.initial_state(s.enc);
  Hypothesis hyp;
  TokenId input = kBos;
  for (std::size_t t = 0; t < cap; ++t) {
    const auto step = s.model.decode_step(s.model.embed_target(std::span<const TokenId>(&input, 1)),
                                          state, s.enc);
    state = step.state;
    const Tensor<Real> lp = s.model.step_log_probs(step.output);
    std::size_t best = kEos;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (emittable(v) && lp[v] > lp[best]) best = v;
    }
    hyp.log_prob += static_cast<double>(lp[best]);
    if (best == static_cast<std::size_t>(kEos)) {
      hyp.finished = true;
      break;
    }
    input = static_cast<TokenId>(best);
    hyp.tokens.push_back(input);
  }
  return hyp;
}

template <typename Real>
Hypothesis beam_search(const ModelParams<Real>& params, const Sentence& source,
                       const DecodeOptions& options) {
  if (options.beam == 0) throw std::invalid_argument("beam_search: beam must be at least 1");
  const Session<Real> s(params, source);
  const std::size_t cap = resolve_cap(options.max_length, source.size());
  const std::size_t vocab = params.config().tgt_vocab;

  std::vector<Hypothesis> alive(1);
  std::vector<Hypothesis> finished;
  DecoderState<Real> state = s.model.initial_state(s.enc);

  struct Candidate {
    double total;
    std::size_t parent;
    std::size_t rank;
    std::size_t token;
    double step;
  };

  for (std::size_t t = 0; t < cap && !alive.empty(); ++t) {
    const std::size_t width = options.beam - finished.size();
    std::vector<std::size_t> zeros(alive.size(), 0);
    const auto enc = s.enc.select(zeros);
    std::vector<TokenId> inputs;
    for (const auto& h : alive) inputs.push_back(h.tokens.empty() ? kBos : h.tokens.back());
    const auto step = s.model.decode_step(s.model.embed_target(inputs), state, enc);
    const Tensor<Real> lp = s.model.step_log_probs(step.output);

    std::vector<Candidate> pool;
    for (std::size_t p = 0; p < alive.size(); ++p) {
      std::vector<std::size_t> ids;
      for (std::size_t v = 0; v < vocab; ++v) {
        if (emittable(v)) ids.push_back(v);
      }
      const std::size_t keep = std::min(width, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(),
                        [&](std::size_t a, std::size_t b) {
                          const Real la = lp[p * vocab + a];
                          const Real lb = lp[p * vocab + b];
                          return la > lb || (la == lb && a < b);
                        });
      for (std::size_t r = 0; r < keep; ++r) {
        const double step_lp = static_cast<double>(lp[p * vocab + ids[r]]);
        pool.push_back({alive[p].log_prob + step_lp, p, r, ids[r], step_lp});
      }
    }
    const std::size_t keep = std::min(width, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.total != b.total) return a.total > b.total;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.rank < b.rank;
                      });

    std::vector<Hypothesis> next;
    std::vector<TokenId> parents;
    for (std::size_t c = 0; c < keep; ++c) {
      Hypothesis h = alive[pool[c].parent];
      h.log_prob = pool[c].total;
      if (pool[c].token == static_cast<std::size_t>(kEos)) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(static_cast<TokenId>(pool[c].token));
        next.push_back(std::move(h));
        parents.push_back(static_cast<TokenId>(pool[c].parent));
      }
    }
    alive = std::move(next);
    if (!alive.empty()) {
      state = {lookup(step.state.hidden, std::span<const TokenId>(parents)),
               lookup(step.state.cell, std::span<const TokenId>(parents))};
    }
  }

  const auto& pick = finished.empty() ? alive : finished;
  const auto best = std::max_element(pick.begin(), pick.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return a.score(options.length_penalty) < b.score(options.length_penalty);
  });
  return *best;
}

template <typename Real>
std::vector<Hypothesis> decode_all(const ModelParams<Real>& params,
                                   const std::vector<Sentence>& sources,
                                   const DecodeOptions& options, std::size_t threads) {
  std::vector<Hypothesis> out(sources.size());
  auto work = [&](std::size_t worker, std::size_t workers) {
    for (std::size_t i = worker; i < sources.size(); i += workers) {
      out[i] = options.beam == 1 ? greedy_decode(params, sources[i], options.max_length)
                                 : beam_search(params, sources[i], options);
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(sources.size(), 1));
  if (threads == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        work(w, threads);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

#define SAML_INSTANTIATE_DECODE(Real)                                                           \
  template Hypothesis greedy_decode(const ModelParams<Real>&, const Sentence&, std::size_t);     \
  template Hypothesis beam_search(const ModelParams<Real>&, const Sentence&, const DecodeOptions&); \
  template std::vector<Hypothesis> decode_all(const ModelParams<Real>&, const std::vector<Sentence>&, \
                                              const DecodeOptions&, std::size_t);

SAML_INSTANTIATE_DECODE(float)
SAML_INSTANTIATE_DECODE(double)

}  // namespace saml
