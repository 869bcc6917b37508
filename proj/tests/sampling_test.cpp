#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "saml/grad_check.hpp"
#include "saml/sampling.hpp"
#include "support.hpp"

namespace saml {
namespace {

using T = Tensor<double>;
using test::random_tensor;

T log_of(std::vector<double> p) {
  for (double& v : p) v = std::log(v);
  const std::size_t n = p.size();
  return T({n}, std::move(p));
}

TEST(Gumbel, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(gumbel_from_uniform(1.0 / std::numbers::e), 0.0);
  EXPECT_NEAR(gumbel_from_uniform(0.5), 0.36651292058166435, 1e-15);
}

TEST(Gumbel, ClampKeepsExtremesFinite) {
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(0.0)));
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(1.0)));
  EXPECT_EQ(gumbel_from_uniform(0.0), gumbel_from_uniform(kGumbelClamp));
}

TEST(Gumbel, EmpiricalMeanIsEulerGamma) {
  Rng rng(11);
  const T g = sample_gumbel<double>({1000000}, rng);
  double total = 0;
  for (double v : g.values()) total += v;
  EXPECT_NEAR(total / 1e6, std::numbers::egamma, 0.01);
}

TEST(Gumbel, ConfigValidation) {
  EXPECT_THROW((GumbelConfig{0.0, 0.5, 0}.validate()), std::invalid_argument);
  EXPECT_THROW((GumbelConfig{1.0, -0.1, 0}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((GumbelConfig{1.0, 0.0, 0}.validate()));
}

TEST(GumbelMax, DegenerateDistributionAlwaysPicksSupport) {
  const double ninf = -std::numeric_limits<double>::infinity();
  T lp({3}, {0.0, ninf, ninf});
  Rng rng(12);
  for (double beta : {0.0, 0.5, 1.0, 5.0}) {
    for (int i = 0; i < 200; ++i) EXPECT_EQ(gumbel_max(lp, {1.0, beta, 0}, rng)[0], 0);
  }
}

TEST(GumbelMax, ZeroNoiseIsArgmax) {
  Rng rng(13);
  T lp = log_of({0.2, 0.5, 0.3});
  for (int i = 0; i < 50; ++i) EXPECT_EQ(gumbel_max(lp, {1.0, 0.0, 0}, rng)[0], 1);
}

TEST(GumbelMax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax_rows(T({2, 3}, {1, 1, 0, 0, 2, 2})), (std::vector<std::int32_t>{0, 1}));
}

TEST(GumbelMax, UnitNoiseSamplesTheCategorical) {
  const std::vector<double> p = {0.5, 0.3, 0.2};
  T lp = log_of(p);
  Rng rng(14);
  const int draws = 200000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(gumbel_max(lp, {1.0, 1.0, 0}, rng)[0])];
  double chi2 = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double freq = counts[k] / static_cast<double>(draws);
    EXPECT_NEAR(freq, p[k], 0.005);
    const double expected = p[k] * draws;
    chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
  }
  // Upper 0.001 quantile of chi-square with 2 degrees of freedom.
  EXPECT_LT(chi2, 13.815510557964274);
}

TEST(GumbelSoftmax, OutputIsInteriorDistribution) {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    T lp = log_softmax(random_tensor({6}, rng, -2, 2), 0);
    T z = gumbel_softmax(lp, {1.0, 0.5, 0}, rng);
    double total = 0;
    for (double v : z.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(GumbelSoftmax, ZeroNoiseEqualsTemperedSoftmax) {
  Rng rng(16);
  T lp = log_softmax(random_tensor({2, 5}, rng, -2, 2), 1);
  T z = gumbel_softmax(lp, {0.7, 0.0, 0}, rng);
  T expected = softmax(scale(lp, 1.0 / 0.7), 1);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], expected[i]);
}

TEST(GumbelSoftmax, LowTemperatureConcentratesOnArgmax) {
  Rng rng(17);
  T lp({4}, {0.0, -1.0, -2.5, -1.0});
  T z = gumbel_softmax(lp, {0.01, 0.0, 0}, rng);
  EXPECT_GE(z[0], 0.99);
}

TEST(GumbelSoftmax, GradientMatchesFiniteDifferencesWithFrozenNoise) {
  Rng rng(18);
  const GumbelConfig cfg{0.8, 0.5, 0};
  for (int trial = 0; trial < 10; ++trial) {
    T noise = sample_gumbel<double>({2, 5}, rng);
    T weight = random_tensor({2, 5}, rng);
    auto report = grad_check<double>(
        [&](Tape<double>&, std::span<const T> in) {
          return sum(mul(relax_with_noise(log_softmax(in[0], 1), noise, cfg), weight));
        },
        {random_tensor({2, 5}, rng, -2, 2)});
    EXPECT_LT(report.max_rel_error, 1e-6);
  }
}

TEST(StraightThrough, ForwardIsOneHotAtGumbelMaxIndex) {
  Rng rng(19);
  const GumbelConfig cfg{1.0, 0.5, 0};
  for (int trial = 0; trial < 100; ++trial) {
    T lp = log_softmax(random_tensor({3, 6}, rng, -3, 3), 1);
    T noise = sample_gumbel<double>(lp.shape(), rng);
    auto s = st_gumbel_softmax_with_noise(lp, noise, cfg);
    const auto expected = argmax_rows(perturb(lp, noise, cfg.beta));
    EXPECT_EQ(s.tokens, expected);
    for (std::size_t r = 0; r < 3; ++r) {
      int ones = 0;
      for (std::size_t c = 0; c < 6; ++c) {
        const double v = s.hard[r * 6 + c];
        EXPECT_TRUE(v == 0.0 || v == 1.0);
        if (v == 1.0) {
          ++ones;
          EXPECT_EQ(static_cast<std::int32_t>(c), expected[r]);
        }
      }
      EXPECT_EQ(ones, 1);
    }
  }
}

TEST(StraightThrough, BackwardEqualsRelaxedBackward) {
  Rng rng(20);
  const GumbelConfig cfg{0.9, 0.5, 0};
  for (int trial = 0; trial < 100; ++trial) {
    T logits = random_tensor({2, 7}, rng, -3, 3);
    T noise = sample_gumbel<double>(logits.shape(), rng);
    T weight = random_tensor({2, 7}, rng);

    Tape<double> st_tape;
    T a = st_tape.watch(logits);
    auto s = st_gumbel_softmax_with_noise(log_softmax(a, 1), noise, cfg);
    auto g_st = st_tape.backward(sum(mul(s.hard, weight))).of(a);

    Tape<double> relaxed_tape;
    T b = relaxed_tape.watch(logits);
    auto g_rel = relaxed_tape.backward(sum(mul(relax_with_noise(log_softmax(b, 1), noise, cfg), weight))).of(b);

    for (std::size_t i = 0; i < g_st.size(); ++i) EXPECT_EQ(g_st[i], g_rel[i]);
  }
}

TEST(Sampling, SeededStreamsReproduce) {
  T lp = log_of({0.1, 0.6, 0.3});
  const GumbelConfig cfg{1.0, 0.5, 0};
  auto run = [&] {
    Rng rng = make_stream(42, kNoiseStream);
    std::vector<double> out;
    for (int i = 0; i < 20; ++i) {
      out.push_back(gumbel_max(lp, cfg, rng)[0]);
      const T relaxed = gumbel_softmax(lp, cfg, rng);
      const auto s = st_gumbel_softmax(lp, cfg, rng);
      const T noise = sample_gumbel<double>({3}, rng);
      for (const T* t : {&relaxed, &s.relaxed, &noise}) {
        out.insert(out.end(), t->values().begin(), t->values().end());
      }
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Sampling, OneHotRejectsOutOfRange) {
  EXPECT_THROW(one_hot<double>({3}, 3), std::out_of_range);
}

}  // namespace
}  // namespace saml
