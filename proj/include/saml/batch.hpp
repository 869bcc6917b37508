#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace saml {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kNumSpecials = 4;

using Sentence = std::vector<TokenId>;

/// Row-major [rows×cols] ids, right-padded with kPad.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;
  std::vector<std::size_t> lengths;

  static TokenMatrix from_sentences(const std::vector<Sentence>& sentences);

  TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  /// Ids of column c, one per row.
  std::vector<TokenId> column(std::size_t c) const;
  Sentence row(std::size_t r) const;
  std::size_t total_length() const;
};

/// Source and target sentences of one minibatch. Targets end with kEos; the
/// decoder input at step t is kBos for t = 0 and the target at t - 1 after.
struct Batch {
  TokenMatrix source;
  TokenMatrix target;
  /// Positions of the rows in the originating corpus.
  std::vector<std::size_t> indices;

  std::size_t size() const { return source.rows; }
  std::size_t target_words() const { return target.total_length(); }
};

/// Builds a batch, appending kEos to every target.
Batch make_batch(const std::vector<Sentence>& sources, const std::vector<Sentence>& targets);

}  // namespace saml
