#pragma once

#include <span>
#include <string>
#include <vector>

#include "doco/encoder.hpp"
#include "doco/objective.hpp"
#include "doco/split.hpp"
#include "doco/synth.hpp"

namespace doco {

struct AdamWConfig {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay adaptive optimizer over a parameter group. Moments
/// are keyed by position in the group, which must stay stable across steps.
/// A step with any non-finite gradient entry is rejected outright: parameters,
/// moments and the step counter all stay untouched.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  bool step(std::span<ad::Tensor* const> params);
  int64_t step_count() const { return t_; }
  int rejected_steps() const { return rejected_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  int64_t t_ = 0;
  int rejected_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Ablation switches: S = sample splitting, O = propagation of the updated
/// prompt to the likely-OOD subset, R = the structural regularizer.
struct AdapterConfig {
  bool use_split = true;
  bool use_propagate = true;
  bool use_reg = true;
  double beta = 0.5;
  int init_iters = 50;
  int prompt_len = 8;
  bool small_batch_buffer = false;
  int buffer_capacity = 64;
  int buffer_batch_limit = 8;
  AdamWConfig optim;
  bool record_raw_split = false;  // also score a raw-feature split per batch (diagnostics)

  double effective_beta() const { return use_reg ? beta : 0.0; }
  std::string ablation_mask() const;
};

struct AdapterState {
  PromptState prompt;
  AdamW optimizer;
  long step_count = 0;  // processed batches
  SourceStats source_stats;
  AdapterConfig config;
  ScoreBuffer buffer;
  std::vector<std::string> events;
  int rejected_batches = 0;
};

AdapterState make_adapter(const AdapterConfig& config, const SourceStats& stats, int d_model, Rng prompt_rng);

/// Result of processing one batch. `final_logits` row i holds the logits the
/// sample was ultimately predicted with (p_t pass for likely-ID samples, the
/// propagated pass for likely-OOD ones).
struct BatchOutcome {
  std::vector<int> predicted;
  ad::Tensor final_logits;  // [n, C]
  SplitResult split;
  LossBreakdown loss;       // values driving the update; zeros if skipped
  bool update_applied = false;
  bool update_rejected = false;
};

/// Batch 1: split on raw features, predict likely-ID with the raw model,
/// refine the prompt for init_iters full-gradient steps on the ID subset,
/// then predict likely-OOD with the refined prompt.
BatchOutcome init_first_batch(AdapterState& state, EncoderWeights& enc, const ad::Tensor& tokens);

/// Batches t >= 2: split on prompted features, predict likely-ID with p_t,
/// one optimizer step on the ID subset yields p_{t+1}, predict likely-OOD
/// with p_{t+1} (or p_t when propagation is ablated).
BatchOutcome step_batch(AdapterState& state, EncoderWeights& enc, const ad::Tensor& tokens);

/// One prompt update on an explicit ID subset (the adaptation half of
/// step_batch with the split pinned externally). Gradient flows only through
/// the listed rows.
bool adapt_on_subset(AdapterState& state, EncoderWeights& enc, const ad::Tensor& tokens,
                     std::span<const int> id_indices, LossBreakdown* out_loss = nullptr);

struct BatchRecord {
  int batch_index = 0;
  int domain_index = 0;
  int n_id_assigned = 0;
  int n_ood_assigned = 0;
  double split_precision = 0.0;
  double split_recall = 0.0;
  double loss_stat = 0.0;
  double loss_reg = 0.0;
  double acc_batch = 0.0;
};

struct ProbeEntry {
  int domain_index = 0;
  int batch_index = 0;
  double lstat_prompt = 0.0;  // carried prompt, before any update on this domain
  double lstat_raw = 0.0;     // no-prompt path on the same batch
};

struct SampleRecord {
  int batch_index = 0;
  int domain_index = 0;
  int predicted = 0;
  bool assigned_ood = false;
  std::vector<double> logits;
  int true_label = 0;  // hidden evaluation label
  bool true_ood = false;
};

struct RunRecord {
  std::vector<BatchRecord> batches;
  std::vector<ProbeEntry> probes;
  std::vector<SampleRecord> samples;
  std::vector<double> raw_split_precision;  // per batch, NaN unless recorded
  int rejected_batches = 0;
  std::vector<std::string> events;
};

/// Strictly-ordered single pass over the stream. Hidden labels are consumed
/// only for the evaluation fields of the record; the adaptation calls receive
/// bare token tensors.
RunRecord run_stream(AdapterState& state, EncoderWeights& enc, std::span<const StreamBatch> stream);

/// Frozen source model baseline: raw forward per batch, no splitting, no
/// updates.
RunRecord run_source_only(EncoderWeights& enc, std::span<const StreamBatch> stream);

/// One line per batch: batch_index,domain_index,n_id_assigned,n_ood_assigned,
/// split_precision,split_recall,loss_stat,loss_reg,acc_batch.
std::string run_record_csv(const RunRecord& rec);
std::string probes_csv(const RunRecord& rec);

}  // namespace doco
