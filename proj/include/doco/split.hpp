#pragma once

#include <deque>
#include <span>
#include <vector>

#include "doco/autodiff.hpp"

namespace doco {

/// ID/OOD partition of a batch by prototypical distance. Indices are
/// ascending; the ID cluster is the one with the smaller centroid.
struct SplitResult {
  std::vector<int> id_indices;
  std::vector<int> ood_indices;
  double centroid_id = 0.0;
  double centroid_ood = 0.0;
  std::vector<double> scores;  // d_proto per sample, batch order
};

/// FIFO buffer of recent prototypical distances, used to stabilize the split
/// when test batches are tiny.
class ScoreBuffer {
 public:
  explicit ScoreBuffer(size_t capacity = 64) : capacity_(capacity) {}

  void push(double score) {
    if (values_.size() == capacity_) values_.pop_front();
    values_.push_back(score);
  }
  size_t size() const { return values_.size(); }
  size_t capacity() const { return capacity_; }
  std::vector<double> snapshot() const { return {values_.begin(), values_.end()}; }

 private:
  size_t capacity_;
  std::deque<double> values_;
};

/// d_proto(z) = 1 - max_c cos(z, w_c); zero-norm features give distance 1.
double proto_distance(std::span<const double> feature, const ad::Tensor& prototypes);

struct TwoMeansResult {
  std::vector<int> low_indices;   // cluster with the smaller centroid
  std::vector<int> high_indices;  // empty in the degenerate all-identical case
  double centroid_low = 0.0;
  double centroid_high = 0.0;
  double objective = 0.0;  // within-cluster sum of squared deviations
};

/// Globally optimal 1-D 2-means, computed exactly by scanning all n-1
/// threshold cuts of the sorted scores (the 1-D optimum is always a threshold
/// cut). Degenerate rules: a single element or all-identical scores go
/// entirely to the low cluster with equal centroids. Ties in the objective
/// resolve toward the larger low cluster, so boundary-valued scores land on
/// the smaller-centroid side.
TwoMeansResult two_means_1d(std::span<const double> scores);

/// Scores every feature row against the prototypes and clusters. When
/// `buffer` is supplied and the batch has at most `buffer_batch_limit`
/// samples, the scores are pushed into the buffer, clustering runs over the
/// buffer contents, and each current sample is assigned to the cluster with
/// the nearer centroid (ties go ID).
SplitResult split_batch(const ad::Tensor& features, const ad::Tensor& prototypes, ScoreBuffer* buffer = nullptr,
                        int buffer_batch_limit = 8);

/// Clustering half of split_batch, reusable when scores are precomputed.
SplitResult split_scores(const std::vector<double>& scores, ScoreBuffer* buffer = nullptr,
                         int buffer_batch_limit = 8);

}  // namespace doco
