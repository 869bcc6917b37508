#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <fstream>
#include <sstream>

#include "saml/data.hpp"
#include "saml/eval.hpp"

namespace saml {
namespace {

Tokens words(const std::string& s) {
  std::istringstream in(s);
  Tokens out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

struct Pairs {
  std::vector<Tokens> hyps;
  std::vector<Tokens> refs;
};

Pairs load_fixture(const std::string& name) {
  std::ifstream in(std::string(SAML_FIXTURES) + "/" + name);
  EXPECT_TRUE(in.good()) << name;
  Pairs p;
  for (std::string line; std::getline(in, line);) {
    const auto tab = line.find('\t');
    p.hyps.push_back(words(line.substr(0, tab)));
    p.refs.push_back(words(line.substr(tab + 1)));
  }
  return p;
}

TEST(Bleu, IdenticalCorpusScores100) {
  const auto text = synth_task(SynthConfig{SynthKind::kLexicon, 30, 5, 15, 50, 2, 2});
  EXPECT_DOUBLE_EQ(corpus_bleu(text.target, text.target), 100.0);
}

TEST(Bleu, NoMatchingFourGramScoresZero) {
  EXPECT_EQ(corpus_bleu({words("a b c d")}, {words("a b c e")}), 0.0);
  EXPECT_EQ(corpus_bleu({words("x y z w v")}, {words("a b c d e")}), 0.0);
}

TEST(Bleu, HandComputedSingleSentence) {
  // hyp "a b c d e" vs ref "a b c d f g": precisions 4/5, 3/4, 2/3, 1/2,
  // brevity penalty exp(1 - 6/5).
  const double expected = 100.0 * std::exp(1.0 - 6.0 / 5.0) *
                          std::pow(4.0 / 5 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25);
  EXPECT_NEAR(corpus_bleu({words("a b c d e")}, {words("a b c d f g")}), expected, 1e-12);
}

TEST(Bleu, ClipsRepeatedNgrams) {
  BleuStats s;
  s.add(words("a a a a"), words("a b c d"));
  EXPECT_EQ(s.matches[0], 1u);
  EXPECT_EQ(s.totals[0], 4u);
}

// Reference values from sacrebleu 2.6.0 corpus_bleu with tokenize="none",
// smooth_method="none".
TEST(Bleu, MatchesReferenceScorerWithoutBrevityPenalty) {
  const Pairs p = load_fixture("bleu_long.tsv");
  ASSERT_EQ(p.hyps.size(), 50u);
  EXPECT_NEAR(corpus_bleu(p.hyps, p.refs), 48.65615054970911, 0.01);
}

TEST(Bleu, MatchesReferenceScorerWithBrevityPenalty) {
  const Pairs p = load_fixture("bleu_short.tsv");
  ASSERT_EQ(p.hyps.size(), 50u);
  EXPECT_NEAR(corpus_bleu(p.hyps, p.refs), 41.64987435988294, 0.01);
}

TEST(Bleu, InvariantToSentenceOrder) {
  Pairs p = load_fixture("bleu_long.tsv");
  const double before = corpus_bleu(p.hyps, p.refs);
  std::reverse(p.hyps.begin(), p.hyps.end());
  std::reverse(p.refs.begin(), p.refs.end());
  EXPECT_DOUBLE_EQ(corpus_bleu(p.hyps, p.refs), before);
}

TEST(Bleu, ShardStatisticsMergeBySummation) {
  const Pairs p = load_fixture("bleu_short.tsv");
  BleuStats a;
  BleuStats b;
  for (std::size_t i = 0; i < p.hyps.size(); ++i) (i % 3 ? a : b).add(p.hyps[i], p.refs[i]);
  a += b;
  EXPECT_DOUBLE_EQ(a.score(), corpus_bleu(p.hyps, p.refs));
}

TEST(Bleu, RejectsCountMismatch) {
  EXPECT_THROW(corpus_bleu({words("a")}, {}), std::invalid_argument);
}

TEST(MeanStd, SampleStandardDeviation) {
  const MeanStd m = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.std, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(mean_std({7.0}).std, 0.0);
  EXPECT_EQ(format_mean_std({27.41, 0.26}), "27.41±0.26");
}

SweepTable toy_table() {
  SweepTable t;
  t.beams = {1, 2, 5, 10};
  t.objectives = {"ml", "saml"};
  for (std::size_t b = 0; b < 4; ++b) {
    t.bleu.push_back({{20.0 + b, 21.0 + b}, {21.0 + 0.5 * b, 23.0}});
  }
  return t;
}

TEST(Sweep, BaselineColumnIsZeroAndOneRowPerBeam) {
  const SweepTable t = toy_table();
  std::istringstream in(t.to_tsv());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "beam\tml\tml:bleu\tsaml\tsaml:bleu");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream cells(line);
    std::string beam, delta;
    std::getline(cells, beam, '\t');
    std::getline(cells, delta, '\t');
    EXPECT_EQ(delta, "0.00±0.00");
  }
  EXPECT_EQ(rows, 4u);
  EXPECT_EQ(t.deltas(0, 1), (std::vector<double>{1.0, 2.0}));
}

TEST(Sweep, FormattingIsDeterministic) {
  EXPECT_EQ(toy_table().to_tsv(), toy_table().to_tsv());
  EXPECT_EQ(toy_table().raw_tsv(), toy_table().raw_tsv());
}

}  // namespace
}  // namespace saml
