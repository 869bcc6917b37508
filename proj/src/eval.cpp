#include "saml/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace saml {

void BleuStats::add(const Tokens& hyp, const Tokens& ref) {
  hypothesis_length += hyp.size();
  reference_length += ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i) {
      ++ref_counts[Tokens(ref.begin() + static_cast<std::ptrdiff_t>(i), ref.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    std::map<std::vector<std::string>, std::size_t> hyp_counts;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i) {
      ++hyp_counts[Tokens(hyp.begin() + static_cast<std::ptrdiff_t>(i), hyp.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    for (const auto& [gram, count] : hyp_counts) {
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
      totals[n - 1] += count;
    }
  }
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hypothesis_length += o.hypothesis_length;
  reference_length += o.reference_length;
  return *this;
}

double BleuStats::score() const {
  double log_precision = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matches[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n])) / 4.0;
  }
  const double c = static_cast<double>(hypothesis_length);
  const double r = static_cast<double>(reference_length);
  const double brevity = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * brevity * std::exp(log_precision);
}

double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) +
                                " hypotheses vs " + std::to_string(references.size()) + " references");
  }
  BleuStats stats;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) stats.add(hypotheses[i], references[i]);
  return stats.score();
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean_std: no values");
  MeanStd m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", m.mean == 0 ? 0.0 : m.mean, m.std);
  return buf;
}

std::size_t SweepTable::seeds() const {
  return bleu.empty() || bleu[0].empty() ? 0 : bleu[0][0].size();
}

std::vector<double> SweepTable::deltas(std::size_t b, std::size_t o) const {
  std::vector<double> out;
  for (std::size_t s = 0; s < seeds(); ++s) out.push_back(bleu.at(b).at(o).at(s) - bleu[b][0].at(s));
  return out;
}

std::string SweepTable::to_tsv() const {
  std::ostringstream out;
  out << "beam";
  for (const auto& o : objectives) out << '\t' << o << '\t' << o << ":bleu";
  out << '\n';
  for (std::size_t b = 0; b < beams.size(); ++b) {
    out << beams[b];
    for (std::size_t o = 0; o < objectives.size(); ++o) {
      out << '\t' << format_mean_std(mean_std(deltas(b, o))) << '\t'
          << format_mean_std(mean_std(bleu[b][o]));
    }
    out << '\n';
  }
  return out.str();
}

std::string SweepTable::raw_tsv() const {
  std::ostringstream out;
  char buf[32];
  for (std::size_t b = 0; b < beams.size(); ++b) {
    for (std::size_t o = 0; o < objectives.size(); ++o) {
      for (std::size_t s = 0; s < bleu[b][o].size(); ++s) {
        std::snprintf(buf, sizeof buf, "%.6f", bleu[b][o][s]);
        out << beams[b] << '\t' << objectives[o] << '\t' << s << '\t' << buf << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace saml
