#pragma once

#include <span>
#include <vector>

#include "doco/autodiff.hpp"

namespace doco {

/// Cached source feature moments (population statistics over promptless
/// features of clean source samples).
struct SourceStats {
  std::vector<double> mu;     // feature mean, length d
  std::vector<double> sigma;  // feature std, length d
  int n_source = 0;
};

struct LossBreakdown {
  double stat = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double beta = 0.0;
  ad::Tensor* total_node = nullptr;  // differentiable total on the tape
};

/// Per-dimension population mean and std (divide by n) of a plain [n, d]
/// feature matrix.
void batch_stats(const ad::Tensor& features, std::vector<double>& mean, std::vector<double>& std);

/// Differentiable batch statistics on the tape: returns (mean [d], std [d]).
std::pair<ad::Tensor*, ad::Tensor*> batch_stats(ad::Tape& tape, ad::Tensor* features);

/// ||mu_hat - mu_S||_2 + ||sigma_hat - sigma_S||_2, differentiable w.r.t.
/// features.
ad::Tensor* stat_loss(ad::Tape& tape, ad::Tensor* features, const SourceStats& src);
double stat_loss(const ad::Tensor& features, const SourceStats& src);

/// Cosine similarity with the degenerate rule: zero-norm input gives 0.
double cosine(std::span<const double> a, std::span<const double> b);

/// Pairwise cosine-similarity matrix [n, n]; diagonal pinned to 1, zero-norm
/// rows give 0 off-diagonal entries.
ad::Tensor pairwise_sim(const ad::Tensor& features);
ad::Tensor* pairwise_sim(ad::Tape& tape, ad::Tensor* features);

/// Frobenius norm of sim(prompted) - sim(raw); gradient flows into prompted
/// only (raw enters as a detached constant).
ad::Tensor* structural_loss(ad::Tape& tape, ad::Tensor* prompted, const ad::Tensor& raw);
double structural_loss(const ad::Tensor& prompted, const ad::Tensor& raw);

/// L_DOCO = L_stat + beta * L_reg; the reg term is forcibly 0 when the batch
/// has a single sample. raw may be empty when beta == 0 (the reg branch is
/// skipped entirely so that the total equals the stat term bit-exactly).
LossBreakdown doco_loss(ad::Tape& tape, ad::Tensor* prompted, const ad::Tensor& raw, const SourceStats& src,
                        double beta);

}  // namespace doco
