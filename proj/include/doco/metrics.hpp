#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace doco {

/// Post-hoc OOD scores. Every function follows the same convention: a higher
/// score means more ID-like, so the entropy score is the negative entropy.
double energy_score(std::span<const double> logits);
double msp_score(std::span<const double> logits);
double maxlogit_score(std::span<const double> logits);
double entropy_score(std::span<const double> logits);  // requires >= 2 classes

enum class OodScore { Energy, Msp, MaxLogit, Entropy };
OodScore ood_score_from_name(const std::string& name);
std::string ood_score_name(OodScore s);
double apply_ood_score(OodScore s, std::span<const double> logits);

/// Rank-based AUROC: probability that a random ID score exceeds a random OOD
/// score, ties counted 1/2. Empty input on either side is undefined and
/// reported as missing rather than a silent 0.
std::optional<double> auc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Harmonic mean of ACC and AUC; 0 when either is 0.
double h_score(double acc, double auc);

struct MetricSummary {
  double acc = 0.0;
  double auc = 0.0;
  double h = 0.0;
};

/// Arithmetic mean per metric across cells; H is averaged as-is, not
/// recomputed from the averaged ACC/AUC.
MetricSummary aggregate(std::span<const MetricSummary> cells);

}  // namespace doco
