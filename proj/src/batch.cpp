#include "saml/batch.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace saml {

TokenMatrix TokenMatrix::from_sentences(const std::vector<Sentence>& sentences) {
  TokenMatrix m;
  m.rows = sentences.size();
  for (const auto& s : sentences) m.cols = std::max(m.cols, s.size());
  m.ids.assign(m.rows * m.cols, kPad);
  m.lengths.reserve(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::copy(sentences[r].begin(), sentences[r].end(), m.ids.begin() + r * m.cols);
    m.lengths.push_back(sentences[r].size());
  }
  return m;
}

std::vector<TokenId> TokenMatrix::column(std::size_t c) const {
  std::vector<TokenId> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = ids[r * cols + c];
  return out;
}

Sentence TokenMatrix::row(std::size_t r) const {
  return Sentence(ids.begin() + r * cols, ids.begin() + r * cols + lengths[r]);
}

std::size_t TokenMatrix::total_length() const {
  return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

Batch make_batch(const std::vector<Sentence>& sources, const std::vector<Sentence>& targets) {
  if (sources.size() != targets.size()) {
    throw std::invalid_argument("make_batch: " + std::to_string(sources.size()) + " sources vs " +
                                std::to_string(targets.size()) + " targets");
  }
  std::vector<Sentence> with_eos;
  with_eos.reserve(targets.size());
  for (const auto& t : targets) {
    with_eos.push_back(t);
    with_eos.back().push_back(kEos);
  }
  Batch b;
  b.source = TokenMatrix::from_sentences(sources);
  b.target = TokenMatrix::from_sentences(with_eos);
  b.indices.resize(sources.size());
  std::iota(b.indices.begin(), b.indices.end(), std::size_t{0});
  return b;
}

}  // namespace saml
