#pragma once

// Greedy and beam-search decoding. PAD and BOS are never emitted; decoding
// stops at EOS or after max_length tokens (EOS included).

#include <cstddef>
#include <vector>

#include "saml/batch.hpp"
#include "saml/model.hpp"

namespace saml {

struct Hypothesis {
  /// Emitted tokens, EOS excluded.
  Sentence tokens;
  /// Summed log-probabilities of the emitted tokens, EOS included.
  double log_prob = 0;
  bool finished = false;

  /// Token count used for length normalization: EOS counts when emitted.
  std::size_t length() const { return tokens.size() + (finished ? 1 : 0); }
  /// log_prob / length^alpha.
  double score(double alpha) const;
};

struct DecodeOptions {
  std::size_t beam = 5;
  double length_penalty = 1.0;
  /// 0 selects default_max_length(source length).
  std::size_t max_length = 0;
};

/// ceil(1.5 * source_length) + 5, the same cap as training rollouts.
std::size_t default_max_length(std::size_t source_length);

template <typename Real>
Hypothesis greedy_decode(const ModelParams<Real>& params, const Sentence& source,
                         std::size_t max_length = 0);

/// Beam search whose width shrinks as hypotheses finish. Candidates from one
/// parent are ranked by their step log-probability (ties to the lower id), and
/// across parents by accumulated log-probability (ties to the earlier parent),
/// so beam 1 follows the greedy path exactly.
template <typename Real>
Hypothesis beam_search(const ModelParams<Real>& params, const Sentence& source,
                       const DecodeOptions& options);

/// Decodes every source with greedy search for beam 1 and beam search
/// otherwise, spreading sentences over `threads` workers.
template <typename Real>
std::vector<Hypothesis> decode_all(const ModelParams<Real>& params,
                                   const std::vector<Sentence>& sources,
                                   const DecodeOptions& options, std::size_t threads = 1);

}  // namespace saml
