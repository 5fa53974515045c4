#include "doco/split.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "doco/objective.hpp"

namespace doco {

double proto_distance(std::span<const double> feature, const ad::Tensor& prototypes) {
  const int c = prototypes.rows(), d = prototypes.cols();
  if (c < 1) throw std::invalid_argument("proto_distance: need at least one prototype");
  if (static_cast<int>(feature.size()) != d) throw std::invalid_argument("proto_distance: dimension mismatch");
  double best = -1.0;
  for (int i = 0; i < c; ++i) {
    const double s = cosine(feature, std::span<const double>(prototypes.data.data() + static_cast<size_t>(i) * d, d));
    best = std::max(best, s);
  }
  return 1.0 - best;
}

TwoMeansResult two_means_1d(std::span<const double> scores) {
  const int n = static_cast<int>(scores.size());
  if (n == 0) throw std::invalid_argument("two_means_1d: empty input");
  TwoMeansResult res;
  if (n == 1) {
    res.low_indices = {0};
    res.centroid_low = res.centroid_high = scores[0];
    return res;
  }
  const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
  if (*mn == *mx) {
    // all identical: no informative split, everything goes to the low cluster
    res.low_indices.resize(n);
    for (int i = 0; i < n; ++i) res.low_indices[i] = i;
    res.centroid_low = res.centroid_high = scores[0];
    return res;
  }

  std::vector<std::pair<double, int>> order(n);
  for (int i = 0; i < n; ++i) order[i] = {scores[i], i};
  std::sort(order.begin(), order.end());

  std::vector<double> prefix(n + 1, 0.0), prefix_sq(n + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i] + order[i].first;
    prefix_sq[i + 1] = prefix_sq[i] + order[i].first * order[i].first;
  }
  auto sse = [&](int lo, int hi) {  // half-open [lo, hi) over sorted order
    const int m = hi - lo;
    const double s = prefix[hi] - prefix[lo];
    return (prefix_sq[hi] - prefix_sq[lo]) - s * s / m;
  };

  int best_cut = 1;
  double best_obj = sse(0, 1) + sse(1, n);
  for (int k = 2; k < n; ++k) {
    const double obj = sse(0, k) + sse(k, n);
    if (obj <= best_obj) {  // prefer the larger low cluster on ties
      best_obj = obj;
      best_cut = k;
    }
  }

  res.objective = best_obj;
  res.centroid_low = (prefix[best_cut] - prefix[0]) / best_cut;
  res.centroid_high = (prefix[n] - prefix[best_cut]) / (n - best_cut);
  for (int i = 0; i < best_cut; ++i) res.low_indices.push_back(order[i].second);
  for (int i = best_cut; i < n; ++i) res.high_indices.push_back(order[i].second);
  std::sort(res.low_indices.begin(), res.low_indices.end());
  std::sort(res.high_indices.begin(), res.high_indices.end());
  return res;
}

SplitResult split_scores(const std::vector<double>& scores, ScoreBuffer* buffer, int buffer_batch_limit) {
  const int n = static_cast<int>(scores.size());
  if (n < 1) throw std::invalid_argument("split_scores: empty batch");
  SplitResult out;
  out.scores = scores;

  if (buffer != nullptr && n <= buffer_batch_limit) {
    for (double s : scores) buffer->push(s);
    const std::vector<double> pool = buffer->snapshot();
    TwoMeansResult km = two_means_1d(pool);
    out.centroid_id = km.centroid_low;
    out.centroid_ood = km.high_indices.empty() ? km.centroid_low : km.centroid_high;
    for (int i = 0; i < n; ++i) {
      // nearest centroid, ties toward ID
      const double d_id = std::fabs(scores[i] - out.centroid_id);
      const double d_ood = std::fabs(scores[i] - out.centroid_ood);
      if (km.high_indices.empty() || d_id <= d_ood)
        out.id_indices.push_back(i);
      else
        out.ood_indices.push_back(i);
    }
    return out;
  }

  TwoMeansResult km = two_means_1d(scores);
  out.centroid_id = km.centroid_low;
  // degenerate all-identical case keeps both centroids equal
  out.centroid_ood = km.high_indices.empty() ? km.centroid_low : km.centroid_high;
  out.id_indices = std::move(km.low_indices);
  out.ood_indices = std::move(km.high_indices);
  return out;
}

SplitResult split_batch(const ad::Tensor& features, const ad::Tensor& prototypes, ScoreBuffer* buffer,
                        int buffer_batch_limit) {
  const int n = features.rows(), d = features.cols();
  std::vector<double> scores(n);
  for (int i = 0; i < n; ++i)
    scores[i] = proto_distance(std::span<const double>(features.data.data() + static_cast<size_t>(i) * d, d),
                               prototypes);
  return split_scores(scores, buffer, buffer_batch_limit);
}

}  // namespace doco
