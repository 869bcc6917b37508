#pragma once

// Numeric self-checks shared by the `selftest` command and the acceptance
// report. Every check runs at 64-bit and reports its measured error next to
// the tolerance it was held to.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "saml/tensor.hpp"

namespace saml {

struct CheckResult {
  std::string name;
  double measured = 0;
  double tolerance = 0;
  bool passed = false;
  std::string detail;
};

/// A differentiable primitive applied to random inputs of the given shapes.
struct PrimitiveCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<Tensor<double>(std::span<const Tensor<double>>)> apply;
  double lo = -1.0;
  double hi = 1.0;
};

const std::vector<PrimitiveCase>& primitive_cases();

/// Worst relative gradient error of `c` over `instances` random inputs, with
/// the output contracted against fixed random weights.
double primitive_gradient_error(const PrimitiveCase& c, std::size_t instances);

std::vector<CheckResult> check_primitive_gradients(std::size_t instances, double tolerance);
/// A tanh whose backward has the wrong sign must fail the gradient check.
CheckResult check_mutation_detected();
/// Gradient check of J_ML + J_SAML on a toy model with frozen rollout noise.
CheckResult check_combined_gradient(std::size_t vocab, std::size_t dim, std::size_t target_length,
                                    double tolerance);
/// Gumbel-max frequencies at unit noise scale against p = (0.5, 0.3, 0.2).
CheckResult check_gumbel_frequencies(std::size_t draws, double tolerance);
/// Straight-through samples: one-hot forward, backward equal to the relaxed one.
CheckResult check_straight_through(std::size_t cases);
/// Diagonal alignment over the reference prefix reproduces unsmoothed ML.
CheckResult check_diagonal_oracle(std::size_t batches, double tolerance);
/// Row sums of soft alignments and the single-position and equal-score forms.
std::vector<CheckResult> check_soft_alignment(std::size_t batches);
/// Beam search of width 1 and greedy decoding agree on random sentences.
CheckResult check_beam_matches_greedy(std::size_t sentences);
/// Full-width beam search finds the enumerated optimum on a V = 5 toy.
CheckResult check_exhaustive_beam(std::size_t models, std::size_t max_length);
/// BLEU of a corpus against itself is 100.
CheckResult check_bleu_identity();

std::vector<CheckResult> run_selftest();
/// "status  name  measured  tolerance  detail", one line per check.
std::string format_report(const std::vector<CheckResult>& results);

}  // namespace saml
