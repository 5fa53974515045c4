#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "doco/encoder.hpp"
#include "doco/objective.hpp"

namespace doco {

/// Procedural source task: each class is a fixed token-grid template drawn
/// from its own seed; samples are the template plus Gaussian noise. ID and
/// OOD classes use disjoint seed pools, which is checked at construction
/// together with nearest-template separability of the clean classes.
struct TaskSpec {
  int n_id_classes = 8;
  int n_ood_classes = 4;
  int n_tokens = 16;
  int token_dim = 16;
  double noise_sigma = 0.6;
  uint64_t seed = 1;
  std::vector<uint64_t> class_seeds;  // ID classes first, then OOD classes
};

TaskSpec make_task(int n_id_classes, int n_ood_classes, int n_tokens, int token_dim, double noise_sigma,
                   uint64_t seed);

/// Clean template for a class; `class_index` counts ID classes 0..n_id-1 then
/// OOD classes n_id..n_id+n_ood-1.
ad::Tensor class_template(const TaskSpec& task, int class_index);

/// One clean sample (template + noise), flattened to n_tokens*token_dim.
std::vector<double> draw_sample(const TaskSpec& task, int class_index, Rng& rng);

enum class ShiftKind { AdditiveBias, Gain, TokenDropout, BlurMix };
ShiftKind shift_kind_from_name(const std::string& name);
std::string shift_kind_name(ShiftKind kind);

/// A target domain: one corruption with realized parameters drawn once from
/// delta_seed, applied identically to every ID and OOD sample of the domain.
struct DomainSpec {
  int domain_index = 0;
  ShiftKind kind = ShiftKind::AdditiveBias;
  double severity = 0.0;
  uint64_t delta_seed = 0;
  // realized corruption parameters (ground truth, hidden from the adapter)
  std::vector<double> bias;        // token_dim, additive-bias
  std::vector<double> gain;        // token_dim, gain
  std::vector<int> dropped_tokens; // token-dropout-mask
  double blur_alpha = 0.0;         // blur-mix
  int blur_rounds = 1;             // blur-mix passes, scales with severity
};

DomainSpec make_domain(int domain_index, ShiftKind kind, double severity, uint64_t delta_seed, int n_tokens,
                       int token_dim);

/// In-place corruption of one flattened token grid.
void apply_corruption(std::vector<double>& tokens, const DomainSpec& domain, int n_tokens, int token_dim);

struct StreamConfig {
  double kappa = 0.5;
  int batch_size = 64;
  int batches_per_domain = 20;
  std::vector<DomainSpec> domains;
  uint64_t seed = 1;
};

/// One test batch. The adapter sees only `tokens`; labels and domain index
/// are evaluation-side metadata.
struct StreamBatch {
  ad::Tensor tokens;            // [n, n_tokens*token_dim]
  int domain_index = 0;
  std::vector<int> labels;      // hidden: ID class index, or OOD class index
  std::vector<uint8_t> is_ood;  // hidden
};

std::vector<StreamBatch> make_stream(const StreamConfig& config, const TaskSpec& task);

struct PretrainOptions {
  double floor_acc = 0.9;
  int min_iters = 0;  // keep training past the floor for prototype alignment
  int max_iters = 800;
  int batch_size = 64;
  int holdout_per_class = 32;
  double lr = 1e-2;
  int eval_every = 10;
};

struct PretrainLog {
  double holdout_acc = 0.0;
  int iterations = 0;
  std::vector<double> loss_curve;
};

/// Cross-entropy pretraining on clean ID samples; weights are frozen by the
/// caller afterwards. Throws if the holdout floor is unreachable at the cap.
PretrainLog pretrain_source(const TaskSpec& task, EncoderWeights& weights, uint64_t seed,
                            const PretrainOptions& opts = {});

/// Population mean/std of raw (promptless) features over n fresh clean ID
/// samples.
SourceStats cache_source_stats(EncoderWeights& weights, const TaskSpec& task, int n, uint64_t seed);

/// Manifest with everything needed to regenerate the stream byte-exactly.
std::string stream_manifest_json(const TaskSpec& task, const StreamConfig& config);

}  // namespace doco
