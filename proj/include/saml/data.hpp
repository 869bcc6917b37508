#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "saml/batch.hpp"

namespace saml {

using Tokens = std::vector<std::string>;

/// Thrown for malformed or unreadable user input.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vocabulary {
 public:
  /// Names of kPad, kBos, kEos, kUnk.
  static const std::vector<std::string>& specials();

  Vocabulary();

  /// Keeps tokens seen at least `min_count` times, most frequent first, ties
  /// broken lexicographically.
  static Vocabulary build(const std::vector<Tokens>& corpus, std::size_t min_count = 1);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  /// kUnk for unknown tokens.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;

  Sentence encode(const Tokens& tokens) const;
  Tokens decode(const Sentence& ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void append(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// One whitespace-tokenized sentence per line. Empty lines are rejected.
std::vector<Tokens> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<Tokens>& sentences);

struct ParallelText {
  std::vector<Tokens> source;
  std::vector<Tokens> target;

  std::size_t size() const { return source.size(); }
};

ParallelText read_parallel(const std::filesystem::path& source, const std::filesystem::path& target);

struct ParallelCorpus {
  std::vector<Sentence> source;
  std::vector<Sentence> target;

  std::size_t size() const { return source.size(); }
  static ParallelCorpus encode(const ParallelText& text, const Vocabulary& source_vocab,
                               const Vocabulary& target_vocab);
};

/// Binary id-encoded sentences: "SAMC", u32 version, u64 count, then per
/// sentence a u32 length and that many little-endian i32 ids.
void save_ids(const std::filesystem::path& path, const std::vector<Sentence>& sentences);
std::vector<Sentence> load_ids(const std::filesystem::path& path);

/// Partitions the corpus into batches holding at most `batch_words` target
/// words each, counting the appended kEos. Sentences are shuffled by `seed`,
/// sorted by length so batches hold similar lengths, packed greedily, and the
/// batch order is shuffled again.
std::vector<Batch> make_batches(const ParallelCorpus& corpus, std::size_t batch_words,
                                std::uint64_t seed);

enum class SynthKind { kCopy, kReverse, kLexicon };

SynthKind parse_synth_kind(std::string_view name);

struct SynthConfig {
  SynthKind kind = SynthKind::kLexicon;
  /// Including the four specials.
  std::size_t vocab_size = 30;
  std::size_t min_length = 5;
  std::size_t max_length = 15;
  std::size_t pairs = 1000;
  std::uint64_t seed = 1;
  /// Chunk size of the local reordering in the lexicon task.
  std::size_t chunk = 2;
};

/// Content token names "w00", "w01", ... used by the synthetic tasks.
std::vector<std::string> synth_tokens(std::size_t vocab_size);

/// Lexicon target for `source`: each token mapped through `lexicon`, then
/// every consecutive `chunk`-token block reversed.
Tokens lexicon_transform(const Tokens& source,
                         const std::unordered_map<std::string, std::string>& lexicon,
                         std::size_t chunk);

ParallelText synth_task(const SynthConfig& config);

}  // namespace saml
