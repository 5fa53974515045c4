#include "doco/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace doco {

using ad::Tape;
using ad::Tensor;

void batch_stats(const Tensor& features, std::vector<double>& mean, std::vector<double>& std) {
  const int n = features.rows(), d = features.cols();
  if (n < 1) throw std::invalid_argument("batch_stats: empty batch");
  mean.assign(d, 0.0);
  std.assign(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[j] += features.data[static_cast<size_t>(i) * d + j];
  for (int j = 0; j < d; ++j) mean[j] /= n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const double c = features.data[static_cast<size_t>(i) * d + j] - mean[j];
      std[j] += c * c;
    }
  for (int j = 0; j < d; ++j) std[j] = std::sqrt(std[j] / n);
}

std::pair<Tensor*, Tensor*> batch_stats(Tape& tape, Tensor* features) {
  if (features->rows() < 1) throw std::invalid_argument("batch_stats: empty batch");
  Tensor* mu = tape.mean_rows(features);
  Tensor* centered = tape.sub(features, mu);
  Tensor* var = tape.mean_rows(tape.mul(centered, centered));
  return {mu, tape.sqrt(var)};
}

Tensor* stat_loss(Tape& tape, Tensor* features, const SourceStats& src) {
  const int d = features->cols();
  if (static_cast<int>(src.mu.size()) != d || static_cast<int>(src.sigma.size()) != d)
    throw std::invalid_argument("stat_loss: source stats dimension mismatch");
  auto [mu, sigma] = batch_stats(tape, features);
  Tensor* mu_s = tape.constant({d}, src.mu);
  Tensor* sigma_s = tape.constant({d}, src.sigma);
  return tape.add(tape.norm2(tape.sub(mu, mu_s)), tape.norm2(tape.sub(sigma, sigma_s)));
}

double stat_loss(const Tensor& features, const SourceStats& src) {
  Tape tape;
  Tensor* f = tape.constant(features);
  return stat_loss(tape, f, src)->scalar();
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Tensor pairwise_sim(const Tensor& features) {
  Tape tape;
  Tensor* f = tape.constant(features);
  return *pairwise_sim(tape, f);
}

Tensor* pairwise_sim(Tape& tape, Tensor* features) {
  if (features->rows() < 1) throw std::invalid_argument("pairwise_sim: empty batch");
  Tensor* unit = tape.row_normalize(features);
  Tensor* sim = tape.matmul(unit, tape.transpose(unit));
  return tape.set_diag_one(sim);
}

Tensor* structural_loss(Tape& tape, Tensor* prompted, const Tensor& raw) {
  if (prompted->shape != raw.shape) throw std::invalid_argument("structural_loss: shape mismatch");
  Tensor* sim_p = pairwise_sim(tape, prompted);
  Tensor raw_sim = pairwise_sim(raw);
  Tensor* sim_r = tape.constant(raw_sim);
  return tape.norm2(tape.sub(sim_p, sim_r));
}

double structural_loss(const Tensor& prompted, const Tensor& raw) {
  Tape tape;
  Tensor* p = tape.constant(prompted);
  return structural_loss(tape, p, raw)->scalar();
}

LossBreakdown doco_loss(Tape& tape, Tensor* prompted, const Tensor& raw, const SourceStats& src, double beta) {
  if (beta < 0.0) throw std::invalid_argument("doco_loss: beta must be >= 0");
  const int n = prompted->rows();
  LossBreakdown out;
  out.beta = beta;
  Tensor* stat = stat_loss(tape, prompted, src);
  out.stat = stat->scalar();
  // the reg term needs at least two samples, and with beta == 0 the total must
  // equal the stat term bit-exactly, so the reg branch is skipped outright
  if (beta > 0.0 && n >= 2) {
    Tensor* reg = structural_loss(tape, prompted, raw);
    out.reg = reg->scalar();
    out.total_node = tape.add(stat, tape.scale(reg, beta));
  } else {
    out.reg = 0.0;
    out.total_node = stat;
  }
  out.total = out.total_node->scalar();
  return out;
}

}  // namespace doco
