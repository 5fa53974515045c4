#include "doco/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace doco {

double energy_score(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("energy_score: empty logits");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  return mx + std::log(s);
}

double msp_score(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("msp_score: empty logits");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  return 1.0 / s;  // exp(mx - mx) / sum
}

double maxlogit_score(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("maxlogit_score: empty logits");
  return *std::max_element(logits.begin(), logits.end());
}

double entropy_score(std::span<const double> logits) {
  if (logits.size() < 2) throw std::invalid_argument("entropy_score: need at least two classes");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  double ent = 0.0;
  for (double v : logits) {
    const double p = std::exp(v - mx) / s;
    if (p > 0.0) ent -= p * std::log(p);
  }
  return -ent;
}

OodScore ood_score_from_name(const std::string& name) {
  if (name == "energy") return OodScore::Energy;
  if (name == "msp") return OodScore::Msp;
  if (name == "maxlogit") return OodScore::MaxLogit;
  if (name == "entropy") return OodScore::Entropy;
  throw std::invalid_argument("unknown ood score: " + name);
}

std::string ood_score_name(OodScore s) {
  switch (s) {
    case OodScore::Energy: return "energy";
    case OodScore::Msp: return "msp";
    case OodScore::MaxLogit: return "maxlogit";
    case OodScore::Entropy: return "entropy";
  }
  return "?";
}

double apply_ood_score(OodScore s, std::span<const double> logits) {
  switch (s) {
    case OodScore::Energy: return energy_score(logits);
    case OodScore::Msp: return msp_score(logits);
    case OodScore::MaxLogit: return maxlogit_score(logits);
    case OodScore::Entropy: return entropy_score(logits);
  }
  throw std::invalid_argument("apply_ood_score: bad enum");
}

std::optional<double> auc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  const size_t n1 = id_scores.size(), n0 = ood_scores.size();
  if (n1 == 0 || n0 == 0) return std::nullopt;
  std::vector<std::pair<double, int>> all;  // (score, is_id)
  all.reserve(n1 + n0);
  for (double v : id_scores) all.emplace_back(v, 1);
  for (double v : ood_scores) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // midranks over tie groups
  double rank_sum_id = 0.0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum_id += midrank;
    i = j;
  }
  const double u = rank_sum_id - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
  return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

double h_score(double acc, double auc) {
  if (acc < 0.0 || acc > 1.0 || auc < 0.0 || auc > 1.0) throw std::invalid_argument("h_score: inputs must be in [0,1]");
  if (acc + auc == 0.0) return 0.0;
  return 2.0 * acc * auc / (acc + auc);
}

MetricSummary aggregate(std::span<const MetricSummary> cells) {
  if (cells.empty()) throw std::invalid_argument("aggregate: empty cell list");
  MetricSummary out;
  for (const auto& c : cells) {
    out.acc += c.acc;
    out.auc += c.auc;
    out.h += c.h;
  }
  const double n = static_cast<double>(cells.size());
  out.acc /= n;
  out.auc /= n;
  out.h /= n;
  return out;
}

}  // namespace doco
