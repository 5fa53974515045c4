#include <gtest/gtest.h>

#include <cmath>

#include "doco/encoder.hpp"
#include "doco/objective.hpp"
#include "doco/rng.hpp"

using namespace doco;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_features(int n, int d, Rng& rng) {
  Tensor t({n, d});
  for (auto& v : t.data) v = rng.normal();
  return t;
}

// Gram-Schmidt on a random Gaussian matrix gives a random orthogonal Q.
std::vector<double> random_orthogonal(int d, Rng& rng) {
  std::vector<double> q(static_cast<size_t>(d) * d);
  for (auto& v : q) v = rng.normal();
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < i; ++j) {
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += q[static_cast<size_t>(i) * d + k] * q[static_cast<size_t>(j) * d + k];
      for (int k = 0; k < d; ++k) q[static_cast<size_t>(i) * d + k] -= dot * q[static_cast<size_t>(j) * d + k];
    }
    double nrm = 0.0;
    for (int k = 0; k < d; ++k) nrm += q[static_cast<size_t>(i) * d + k] * q[static_cast<size_t>(i) * d + k];
    nrm = std::sqrt(nrm);
    for (int k = 0; k < d; ++k) q[static_cast<size_t>(i) * d + k] /= nrm;
  }
  return q;
}

Tensor rotate(const Tensor& x, const std::vector<double>& q) {
  const int n = x.rows(), d = x.cols();
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += x.data[static_cast<size_t>(i) * d + k] * q[static_cast<size_t>(j) * d + k];
      out.data[static_cast<size_t>(i) * d + j] = s;
    }
  return out;
}

}  // namespace

TEST(BatchStats, Examples) {
  std::vector<double> mean, sd;
  batch_stats(Tensor({1, 3}, {1.0, -2.0, 0.5}), mean, sd);
  EXPECT_EQ(mean, (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_EQ(sd, (std::vector<double>{0.0, 0.0, 0.0}));

  batch_stats(Tensor({2, 1}, {-1.0, 1.0}), mean, sd);
  EXPECT_DOUBLE_EQ(mean[0], 0.0);
  EXPECT_DOUBLE_EQ(sd[0], 1.0);  // population std, divide by n

  batch_stats(Tensor({3, 2}, {2, 5, 2, 5, 2, 5}), mean, sd);
  EXPECT_EQ(sd, (std::vector<double>{0.0, 0.0}));
}

TEST(StatLoss, Examples) {
  SourceStats src{.mu = {0.0}, .sigma = {1.0}, .n_source = 2};
  EXPECT_DOUBLE_EQ(stat_loss(Tensor({2, 1}, {-1.0, 1.0}), src), 0.0);
  EXPECT_DOUBLE_EQ(stat_loss(Tensor({2, 1}, {0.0, 0.0}), src), 1.0);  // |0-0| + |0-1|

  SourceStats mismatch{.mu = {0.0, 0.0}, .sigma = {1.0, 1.0}, .n_source = 2};
  EXPECT_THROW(stat_loss(Tensor({2, 1}, {0.0, 0.0}), mismatch), std::invalid_argument);
}

TEST(StatLoss, PermutationInvariant) {
  Rng rng(21);
  Tensor f = random_features(6, 4, rng);
  SourceStats src{.mu = {0.1, -0.2, 0.3, 0.0}, .sigma = {1.0, 0.5, 2.0, 1.5}, .n_source = 10};
  const double base = stat_loss(f, src);
  Tensor shuffled({6, 4});
  const int perm[6] = {5, 3, 0, 1, 4, 2};
  for (int i = 0; i < 6; ++i)
    std::copy_n(f.data.begin() + perm[i] * 4, 4, shuffled.data.begin() + i * 4);
  EXPECT_DOUBLE_EQ(stat_loss(shuffled, src), base);
}

TEST(Cosine, ExamplesAndDegenerateRule) {
  const std::vector<double> e1 = {1, 0}, e2 = {0, 1};
  EXPECT_DOUBLE_EQ(cosine(e1, e2), 0.0);
  const std::vector<double> a = {1, 1}, b = {2, 2};
  EXPECT_NEAR(cosine(a, b), 1.0, 1e-15);
  const std::vector<double> neg = {-1, 0};
  EXPECT_DOUBLE_EQ(cosine(e1, neg), -1.0);
  const std::vector<double> zero = {0, 0};
  EXPECT_DOUBLE_EQ(cosine(zero, a), 0.0);
}

TEST(PairwiseSim, Examples) {
  Tensor one = pairwise_sim(Tensor({1, 3}, {0.3, -0.7, 0.1}));
  EXPECT_EQ(one.data, (std::vector<double>{1.0}));

  Tensor dup = pairwise_sim(Tensor({2, 2}, {1, 2, 1, 2}));
  for (double v : dup.data) EXPECT_NEAR(v, 1.0, 1e-15);

  Tensor ortho = pairwise_sim(Tensor({2, 2}, {1, 0, 0, 1}));
  EXPECT_DOUBLE_EQ(ortho.data[0], 1.0);
  EXPECT_DOUBLE_EQ(ortho.data[1], 0.0);
  EXPECT_DOUBLE_EQ(ortho.data[2], 0.0);
  EXPECT_DOUBLE_EQ(ortho.data[3], 1.0);
}

TEST(StructuralLoss, Examples) {
  Rng rng(22);
  Tensor x = random_features(4, 3, rng);
  EXPECT_DOUBLE_EQ(structural_loss(x, x), 0.0);

  Tensor single = random_features(1, 3, rng);
  Tensor single2 = random_features(1, 3, rng);
  EXPECT_DOUBLE_EQ(structural_loss(single, single2), 0.0);  // both matrices are [[1]]

  // n=2: off-diagonals a vs b, unit diagonals cancel -> sqrt(2)*|a-b|
  Tensor p({2, 2}, {1.0, 0.0, 1.0, 1.0});
  Tensor r({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const std::vector<double> e1 = {1.0, 0.0}, v11 = {1.0, 1.0}, e2 = {0.0, 1.0};
  const double a = cosine(e1, v11);
  const double b = cosine(e1, e2);
  EXPECT_NEAR(structural_loss(p, r), std::sqrt(2.0) * std::fabs(a - b), 1e-12);
}

TEST(StructuralLoss, OrthogonalTransformInvariant) {
  Rng rng(23);
  const int d = 5;
  Tensor p = random_features(6, d, rng);
  Tensor r = random_features(6, d, rng);
  const double base = structural_loss(p, r);
  const auto q = random_orthogonal(d, rng);
  EXPECT_NEAR(structural_loss(rotate(p, q), rotate(r, q)), base, 1e-9);
}

TEST(DocoLoss, Identities) {
  Rng rng(24);
  Tensor p = random_features(4, 3, rng);
  Tensor r = random_features(4, 3, rng);
  SourceStats src{.mu = {0.0, 0.1, -0.1}, .sigma = {1.0, 0.9, 1.1}, .n_source = 5};

  {  // beta = 0 -> total equals the stat term bit-exactly
    Tape tape;
    LossBreakdown lb = doco_loss(tape, tape.constant(p), r, src, 0.0);
    Tape tape2;
    EXPECT_EQ(lb.total, stat_loss(tape2, tape2.constant(p), src)->scalar());
    EXPECT_EQ(lb.reg, 0.0);
  }
  {  // prompted == raw and batch stats == source stats -> 0
    Tensor exact({2, 1}, {-1.0, 1.0});
    SourceStats unit{.mu = {0.0}, .sigma = {1.0}, .n_source = 2};
    Tape tape;
    LossBreakdown lb = doco_loss(tape, tape.constant(exact), exact, unit, 0.5);
    EXPECT_DOUBLE_EQ(lb.total, 0.0);
    EXPECT_DOUBLE_EQ(lb.stat, 0.0);
    EXPECT_DOUBLE_EQ(lb.reg, 0.0);
  }
  {  // n = 1 forces reg to 0
    Tensor one = random_features(1, 3, rng);
    Tape tape;
    LossBreakdown lb = doco_loss(tape, tape.constant(one), one, src, 0.5);
    EXPECT_EQ(lb.reg, 0.0);
    EXPECT_EQ(lb.total, lb.stat);
  }
  {  // total == stat + beta*reg, same arithmetic path
    Tape tape;
    LossBreakdown lb = doco_loss(tape, tape.constant(p), r, src, 0.5);
    EXPECT_EQ(lb.total, lb.stat + 0.5 * lb.reg);
    EXPECT_GE(lb.stat, 0.0);
    EXPECT_GE(lb.reg, 0.0);
  }
}

TEST(DocoLoss, HandExpandedDegenerateCase) {
  // d=1, n=2, prompted {0,0}, raw {-1,1}, mu_S=0, sigma_S=1, beta=0.5:
  // stat = 1, reg = sqrt(2) via the zero-norm rule, total ~ 1.7071
  Tensor prompted({2, 1}, {0.0, 0.0});
  Tensor raw({2, 1}, {-1.0, 1.0});
  SourceStats src{.mu = {0.0}, .sigma = {1.0}, .n_source = 2};
  Tape tape;
  LossBreakdown lb = doco_loss(tape, tape.constant(prompted), raw, src, 0.5);
  EXPECT_DOUBLE_EQ(lb.stat, 1.0);
  EXPECT_NEAR(lb.reg, std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(lb.total, 1.0 + 0.5 * std::sqrt(2.0), 1e-15);
}

TEST(DocoLoss, PromptedEqualsRawReducesToStatLoss) {
  Rng rng(25);
  Tensor x = random_features(5, 4, rng);
  SourceStats src{.mu = {0.0, 0.0, 0.0, 0.0}, .sigma = {1.0, 1.0, 1.0, 1.0}, .n_source = 5};
  Tape tape;
  LossBreakdown lb = doco_loss(tape, tape.constant(x), x, src, 0.7);
  EXPECT_NEAR(lb.reg, 0.0, 1e-15);
  EXPECT_NEAR(lb.total, lb.stat, 1e-15);
}

// Gradient of L_DOCO w.r.t. prompt tokens through the encoder vs central
// finite differences.
TEST(DocoLoss, GradientThroughEncoderMatchesFiniteDifferences) {
  Rng rng(26);
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_patches = 3;
  cfg.mlp_ratio = 2;
  cfg.n_classes = 3;
  cfg.d_in = 4;
  EncoderWeights w = init_encoder(cfg, rng);
  w.set_requires_grad(false);

  Tensor batch({3, cfg.n_patches * cfg.d_in});
  for (auto& v : batch.data) v = rng.normal();
  SourceStats src;
  src.mu.resize(cfg.d_model);
  src.sigma.resize(cfg.d_model);
  for (auto& v : src.mu) v = 0.3 * rng.normal();
  for (auto& v : src.sigma) v = 1.0 + 0.2 * rng.uniform();
  src.n_source = 16;

  Rng prng(3);
  PromptState prompt = init_prompt(2, cfg.d_model, prng);
  const Tensor raw = forward_plain(w, batch, nullptr).features;

  auto eval = [&]() {
    Tape tape;
    prompt.tokens.requires_grad = false;
    ad::Tensor* f = forward_features(tape, w, batch, &prompt);
    return doco_loss(tape, f, raw, src, 0.5).total;
  };

  prompt.tokens.requires_grad = true;
  prompt.tokens.zero_grad();
  Tape tape;
  ad::Tensor* f = forward_features(tape, w, batch, &prompt);
  LossBreakdown lb = doco_loss(tape, f, raw, src, 0.5);
  tape.backward(lb.total_node);
  const std::vector<double> analytic = prompt.tokens.grad;

  const double h = 1e-5;
  for (size_t i = 0; i < prompt.tokens.data.size(); ++i) {
    const double saved = prompt.tokens.data[i];
    prompt.tokens.data[i] = saved + h;
    const double up = eval();
    prompt.tokens.data[i] = saved - h;
    const double down = eval();
    prompt.tokens.data[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double tol = 1e-8 + 1e-3 * std::max(std::fabs(numeric), std::fabs(analytic[i]));
    EXPECT_NEAR(analytic[i], numeric, tol) << "prompt coordinate " << i;
  }
}
