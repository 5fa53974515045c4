#include <gtest/gtest.h>

#include <cmath>

#include "doco/metrics.hpp"
#include "doco/rng.hpp"

using namespace doco;

namespace {

// O(n*m) pairwise oracle with tie weight 1/2.
double pairwise_auc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
  double wins = 0.0;
  for (double a : id_scores)
    for (double b : ood_scores) {
      if (a > b)
        wins += 1.0;
      else if (a == b)
        wins += 0.5;
    }
  return wins / (static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size()));
}

}  // namespace

TEST(EnergyScore, Examples) {
  const std::vector<double> two_zero = {0, 0};
  EXPECT_NEAR(energy_score(two_zero), std::log(2.0), 1e-12);
  const std::vector<double> single = {-1.3};
  EXPECT_DOUBLE_EQ(energy_score(single), -1.3);
  // shift equivariance: adding k to all logits adds exactly k
  const std::vector<double> base = {0.2, -0.5, 1.7};
  std::vector<double> shifted = base;
  for (auto& v : shifted) v += 3.25;
  EXPECT_NEAR(energy_score(shifted), energy_score(base) + 3.25, 1e-12);
}

TEST(MspScore, Examples) {
  const std::vector<double> uniform2 = {0.7, 0.7};
  EXPECT_NEAR(msp_score(uniform2), 0.5, 1e-15);
  const std::vector<double> single = {42.0};
  EXPECT_DOUBLE_EQ(msp_score(single), 1.0);
  const std::vector<double> skew = {0.0, 10.0};
  // direct softmax evaluation
  const double expected = std::exp(10.0) / (std::exp(0.0) + std::exp(10.0));
  EXPECT_NEAR(msp_score(skew), expected, 1e-12);
  EXPECT_NEAR(msp_score(skew), 0.99995, 1e-5);
}

TEST(MaxLogitScore, Examples) {
  const std::vector<double> v = {1, 2, 3};
  EXPECT_DOUBLE_EQ(maxlogit_score(v), 3.0);
  const std::vector<double> flat = {0.4, 0.4, 0.4};
  EXPECT_DOUBLE_EQ(maxlogit_score(flat), 0.4);
  const std::vector<double> negated = {-1, -2, -3};  // negation of the sorted list
  EXPECT_DOUBLE_EQ(maxlogit_score(negated), -1.0);   // max of -x is -min of x
}

TEST(EntropyScore, Examples) {
  const std::vector<double> uniform3 = {0.5, 0.5, 0.5};
  EXPECT_NEAR(entropy_score(uniform3), -std::log(3.0), 1e-12);

  const std::vector<double> dominant = {1000.0, 0.0, 0.0};
  EXPECT_NEAR(entropy_score(dominant), 0.0, 1e-9);

  // direct -sum p ln p evaluation
  const std::vector<double> mix = {0.0, 0.0, std::log(3.0)};
  const double z = 1.0 + 1.0 + 3.0;
  const double p0 = 1.0 / z, p2 = 3.0 / z;
  const double direct = -(2.0 * p0 * std::log(p0) + p2 * std::log(p2));
  EXPECT_NEAR(entropy_score(mix), -direct, 1e-12);

  const std::vector<double> one = {1.0};
  EXPECT_THROW(entropy_score(one), std::invalid_argument);
}

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(*auc(std::vector<double>{2, 3}, std::vector<double>{0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(*auc(std::vector<double>{1, 1}, std::vector<double>{1, 1}), 0.5);
  EXPECT_DOUBLE_EQ(*auc(std::vector<double>{1, 3}, std::vector<double>{2}), 0.5);
  EXPECT_FALSE(auc(std::vector<double>{}, std::vector<double>{1}).has_value());
  EXPECT_FALSE(auc(std::vector<double>{1}, std::vector<double>{}).has_value());
}

TEST(Auc, MatchesPairwiseOracle) {
  Rng rng(41);
  for (int trial = 0; trial < 500; ++trial) {
    const int n1 = 1 + rng.uniform_int(20), n0 = 1 + rng.uniform_int(20);
    std::vector<double> id(n1), ood(n0);
    const bool heavy_ties = trial % 3 == 0;
    for (auto& v : id) v = heavy_ties ? std::round(rng.uniform() * 3.0) : rng.normal();
    for (auto& v : ood) v = heavy_ties ? std::round(rng.uniform() * 3.0) : rng.normal();
    EXPECT_DOUBLE_EQ(*auc(id, ood), pairwise_auc(id, ood)) << "trial " << trial;
  }
}

TEST(Auc, ReversalSumsToOne) {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(5 + rng.uniform_int(10)), b(5 + rng.uniform_int(10));
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    EXPECT_NEAR(*auc(a, b) + *auc(b, a), 1.0, 1e-12);
  }
}

TEST(Auc, InvariantUnderGlobalLogitShift) {
  Rng rng(43);
  // AUC identical for all four scores when every sample's logits shift by the
  // same constant
  const int c = 6;
  std::vector<std::vector<double>> id_logits(12), ood_logits(9);
  for (auto& l : id_logits) {
    l.resize(c);
    for (auto& v : l) v = rng.normal() + 1.0;
  }
  for (auto& l : ood_logits) {
    l.resize(c);
    for (auto& v : l) v = rng.normal();
  }
  for (OodScore s : {OodScore::Energy, OodScore::Msp, OodScore::MaxLogit, OodScore::Entropy}) {
    std::vector<double> id_raw, ood_raw, id_shift, ood_shift;
    for (const auto& l : id_logits) {
      id_raw.push_back(apply_ood_score(s, l));
      std::vector<double> ls = l;
      for (auto& v : ls) v += 5.5;
      id_shift.push_back(apply_ood_score(s, ls));
    }
    for (const auto& l : ood_logits) {
      ood_raw.push_back(apply_ood_score(s, l));
      std::vector<double> ls = l;
      for (auto& v : ls) v += 5.5;
      ood_shift.push_back(apply_ood_score(s, ls));
    }
    EXPECT_NEAR(*auc(id_raw, ood_raw), *auc(id_shift, ood_shift), 1e-12) << ood_score_name(s);
  }
}

TEST(HScore, Examples) {
  EXPECT_DOUBLE_EQ(h_score(0.7, 0.7), 0.7);
  EXPECT_DOUBLE_EQ(h_score(0.0, 0.9), 0.0);
  EXPECT_NEAR(h_score(0.498, 0.668), 0.5706, 1e-4);
  EXPECT_THROW(h_score(-0.1, 0.5), std::invalid_argument);
}

TEST(HScore, HarmonicMeanBounds) {
  // min <= h <= arithmetic mean, equal on all three iff acc == auc
  Rng rng(44);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = rng.uniform(), b = rng.uniform();
    const double h = h_score(a, b);
    EXPECT_GE(h, std::min(a, b) - 1e-15);
    EXPECT_LE(h, 0.5 * (a + b) + 1e-15);
    if (a == b) EXPECT_DOUBLE_EQ(h, a);
    EXPECT_DOUBLE_EQ(h_score(a, a), a);
  }
}

TEST(Aggregate, Examples) {
  MetricSummary one{.acc = 0.6, .auc = 0.8, .h = h_score(0.6, 0.8)};
  MetricSummary same = aggregate(std::vector<MetricSummary>{one});
  EXPECT_DOUBLE_EQ(same.acc, one.acc);
  EXPECT_DOUBLE_EQ(same.h, one.h);

  MetricSummary twice = aggregate(std::vector<MetricSummary>{one, one});
  EXPECT_DOUBLE_EQ(twice.acc, one.acc);
  EXPECT_DOUBLE_EQ(twice.auc, one.auc);
  EXPECT_DOUBLE_EQ(twice.h, one.h);

  // averaging-order distinction: H is averaged, not recomputed
  MetricSummary a{.acc = 0.4, .auc = 0.8, .h = h_score(0.4, 0.8)};
  MetricSummary b{.acc = 0.8, .auc = 0.4, .h = h_score(0.8, 0.4)};
  MetricSummary agg = aggregate(std::vector<MetricSummary>{a, b});
  EXPECT_NEAR(agg.h, 0.5333, 2e-4);
  EXPECT_NEAR(h_score(agg.acc, agg.auc), 0.6, 1e-12);
  EXPECT_LT(agg.h, h_score(agg.acc, agg.auc));

  EXPECT_THROW(aggregate(std::vector<MetricSummary>{}), std::invalid_argument);
}
