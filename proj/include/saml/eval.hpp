#pragma once

// Corpus BLEU-4 (uniform weights, brevity penalty, no smoothing) and the
// beam-size sweep table.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "saml/data.hpp"

namespace saml {

/// Sufficient statistics of corpus BLEU; shards merge by summation.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;

  void add(const Tokens& hypothesis, const Tokens& reference);
  BleuStats& operator+=(const BleuStats& other);
  /// In [0, 100]; 0 when any n-gram precision is 0.
  double score() const;
};

double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

struct MeanStd {
  double mean = 0;
  /// Sample standard deviation; 0 for a single value.
  double std = 0;
};

MeanStd mean_std(const std::vector<double>& values);
/// "mean±std" with two decimals.
std::string format_mean_std(const MeanStd& m);

/// BLEU for every (beam, objective, seed), with the baseline objective first.
struct SweepTable {
  std::vector<std::size_t> beams;
  std::vector<std::string> objectives;
  /// bleu[beam index][objective index][seed index]
  std::vector<std::vector<std::vector<double>>> bleu;

  std::size_t seeds() const;
  /// Per-seed BLEU minus the baseline's BLEU for the same seed.
  std::vector<double> deltas(std::size_t beam_index, std::size_t objective_index) const;
  /// Header "beam", then "<objective>" (ΔBLEU) and "<objective>:bleu" (raw)
  /// per objective; one row per beam with mean±std cells.
  std::string to_tsv() const;
  /// One "beam objective seed bleu" line per run.
  std::string raw_tsv() const;
};

}  // namespace saml
