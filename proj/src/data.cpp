#include "saml/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "saml/random.hpp"

namespace saml {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

constexpr char kIdsMagic[4] = {'S', 'A', 'M', 'C'};
constexpr std::uint32_t kIdsVersion = 1;

Tokens split(const std::string& line) {
  std::istringstream in(line);
  Tokens out;
  for (std::string tok; in >> tok;) out.push_back(std::move(tok));
  return out;
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw InputError(path.string() + ": truncated file");
  }
  return value;
}

}  // namespace

const std::vector<std::string>& Vocabulary::specials() {
  static const std::vector<std::string> names = {"<pad>", "<s>", "</s>", "<unk>"};
  return names;
}

Vocabulary::Vocabulary() {
  for (const auto& s : specials()) append(s);
}

void Vocabulary::append(std::string token) {
  if (!index_.emplace(token, static_cast<TokenId>(tokens_.size())).second) {
    throw InputError("vocabulary: duplicate token '" + token + "'");
  }
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<Tokens>& corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus) {
    for (const auto& tok : sentence) ++counts[tok];
  }
  if (counts.empty()) throw InputError("vocabulary: empty corpus");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts) {
    const bool special = std::find(specials().begin(), specials().end(), tok) != specials().end();
    if (n >= min_count && !special) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [tok, n] : kept) v.append(std::move(tok));
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path.string() + ": cannot open vocabulary");
  std::string line;
  if (!std::getline(in, line) || split(line) != specials()) {
    throw InputError(path.string() + ": header must list " + specials()[0] + " " + specials()[1] +
                     " " + specials()[2] + " " + specials()[3]);
  }
  Vocabulary v;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const Tokens fields = split(line);
    if (fields.size() != 1) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected one token");
    }
    v.append(fields[0]);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path.string() + ": cannot write vocabulary");
  for (std::size_t i = 0; i < kNumSpecials; ++i) out << tokens_[i] << (i + 1 < kNumSpecials ? ' ' : '\n');
  for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Sentence Vocabulary::encode(const Tokens& tokens) const {
  Sentence out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Tokens Vocabulary::decode(const Sentence& ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (TokenId i : ids) out.push_back(token(i));
  return out;
}

std::vector<Tokens> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path.string() + ": cannot open");
  std::vector<Tokens> out;
  std::string line;
  while (std::getline(in, line)) {
    out.push_back(split(line));
    if (out.back().empty()) {
      throw InputError(path.string() + ":" + std::to_string(out.size()) + ": empty line");
    }
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Tokens>& sentences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path.string() + ": cannot write");
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << '\n';
  }
}

ParallelText read_parallel(const std::filesystem::path& source, const std::filesystem::path& target) {
  ParallelText text{read_corpus(source), read_corpus(target)};
  if (text.source.size() != text.target.size()) {
    throw InputError(source.string() + " has " + std::to_string(text.source.size()) + " lines but " +
                     target.string() + " has " + std::to_string(text.target.size()));
  }
  return text;
}

ParallelCorpus ParallelCorpus::encode(const ParallelText& text, const Vocabulary& source_vocab,
                                      const Vocabulary& target_vocab) {
  ParallelCorpus c;
  for (const auto& s : text.source) c.source.push_back(source_vocab.encode(s));
  for (const auto& t : text.target) c.target.push_back(target_vocab.encode(t));
  return c;
}

void save_ids(const std::filesystem::path& path, const std::vector<Sentence>& sentences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path.string() + ": cannot write");
  out.write(kIdsMagic, 4);
  put<std::uint32_t>(out, kIdsVersion);
  put<std::uint64_t>(out, sentences.size());
  for (const auto& s : sentences) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(reinterpret_cast<const char*>(s.data()),
              static_cast<std::streamsize>(s.size() * sizeof(TokenId)));
  }
}

std::vector<Sentence> load_ids(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kIdsMagic, 4) != 0) {
    throw InputError(path.string() + ": not an id corpus");
  }
  if (get<std::uint32_t>(in, path) != kIdsVersion) throw InputError(path.string() + ": unsupported version");
  const auto count = get<std::uint64_t>(in, path);
  std::vector<Sentence> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    Sentence s(get<std::uint32_t>(in, path));
    if (!in.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(s.size() * sizeof(TokenId)))) {
      throw InputError(path.string() + ": truncated file");
    }
    out.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InputError(path.string() + ": trailing bytes");
  return out;
}

std::vector<Batch> make_batches(const ParallelCorpus& corpus, std::size_t batch_words,
                                std::uint64_t seed) {
  if (corpus.source.size() != corpus.target.size()) {
    throw std::invalid_argument("make_batches: source and target counts differ");
  }
  if (corpus.size() == 0) throw std::invalid_argument("make_batches: empty corpus");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus.source[i].empty() || corpus.target[i].empty()) {
      throw std::invalid_argument("make_batches: sentence " + std::to_string(i) + " is empty");
    }
    if (corpus.target[i].size() + 1 > batch_words) {
      throw std::invalid_argument("make_batches: sentence " + std::to_string(i) + " has " +
                                  std::to_string(corpus.target[i].size() + 1) +
                                  " target words, over the cap of " + std::to_string(batch_words));
    }
  }
  Rng rng = make_stream(seed, kShuffleStream);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus.target[a].size() < corpus.target[b].size();
  });

  std::vector<Batch> batches;
  std::vector<std::size_t> members;
  std::size_t words = 0;
  auto flush = [&] {
    std::vector<Sentence> src;
    std::vector<Sentence> tgt;
    for (std::size_t i : members) {
      src.push_back(corpus.source[i]);
      tgt.push_back(corpus.target[i]);
    }
    batches.push_back(make_batch(src, tgt));
    batches.back().indices = members;
    members.clear();
    words = 0;
  };
  for (std::size_t i : order) {
    const std::size_t w = corpus.target[i].size() + 1;
    if (words + w > batch_words) flush();
    members.push_back(i);
    words += w;
  }
  flush();
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

SynthKind parse_synth_kind(std::string_view name) {
  if (name == "copy") return SynthKind::kCopy;
  if (name == "reverse") return SynthKind::kReverse;
  if (name == "lexicon") return SynthKind::kLexicon;
  throw InputError("unknown synthetic task '" + std::string(name) + "'");
}

std::vector<std::string> synth_tokens(std::size_t vocab_size) {
  if (vocab_size <= kNumSpecials) {
    throw std::invalid_argument("synth: vocab_size must exceed the " + std::to_string(kNumSpecials) +
                                " specials");
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i + kNumSpecials < vocab_size; ++i) {
    out.push_back((i < 10 ? "w0" : "w") + std::to_string(i));
  }
  return out;
}

Tokens lexicon_transform(const Tokens& source,
                         const std::unordered_map<std::string, std::string>& lexicon,
                         std::size_t chunk) {
  Tokens out;
  out.reserve(source.size());
  for (const auto& t : source) out.push_back(lexicon.at(t));
  for (std::size_t i = 0; i < out.size(); i += chunk) {
    std::reverse(out.begin() + static_cast<std::ptrdiff_t>(i),
                 out.begin() + static_cast<std::ptrdiff_t>(std::min(i + chunk, out.size())));
  }
  return out;
}

ParallelText synth_task(const SynthConfig& c) {
  if (c.min_length == 0 || c.min_length > c.max_length) {
    throw std::invalid_argument("synth: need 1 <= min_length <= max_length");
  }
  if (c.chunk == 0) throw std::invalid_argument("synth: chunk must be positive");
  const auto vocab = synth_tokens(c.vocab_size);
  Rng rng = make_stream(c.seed, kDataStream);

  std::unordered_map<std::string, std::string> lexicon;
  if (c.kind == SynthKind::kLexicon) {
    std::vector<std::string> image = vocab;
    std::shuffle(image.begin(), image.end(), rng);
    for (std::size_t i = 0; i < vocab.size(); ++i) lexicon[vocab[i]] = image[i];
  }

  ParallelText text;
  std::uniform_int_distribution<std::size_t> length(c.min_length, c.max_length);
  std::uniform_int_distribution<std::size_t> word(0, vocab.size() - 1);
  for (std::size_t n = 0; n < c.pairs; ++n) {
    Tokens src(length(rng));
    for (auto& t : src) t = vocab[word(rng)];
    Tokens tgt;
    switch (c.kind) {
      case SynthKind::kCopy:
        tgt = src;
        break;
      case SynthKind::kReverse:
        tgt.assign(src.rbegin(), src.rend());
        break;
      case SynthKind::kLexicon:
        tgt = lexicon_transform(src, lexicon, c.chunk);
        break;
    }
    text.source.push_back(std::move(src));
    text.target.push_back(std::move(tgt));
  }
  return text;
}

}  // namespace saml
