#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "doco/adapt.hpp"
#include "doco/checkpoint.hpp"
#include "doco/metrics.hpp"
#include "doco/synth.hpp"

namespace doco {

/// Missing checkpoint/stats/config snapshot; the CLI maps this to exit code 2.
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// More than half of a run's batches had their update rejected; exit code 3.
struct AdaptationStormError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainTemplate {
  ShiftKind kind = ShiftKind::AdditiveBias;
  double base_severity = 1.0;
  std::optional<uint64_t> delta_seed;  // derived from domain_seed when absent
};

struct StreamSettings {
  double kappa = 0.5;
  int batch_size = 64;
  int batches_per_domain = 20;
  double severity = 1.0;  // global scale applied to every base_severity
  std::vector<DomainTemplate> domains;
  std::string domain_order;  // permutation digits, e.g. "2013"; empty = natural
  uint64_t domain_seed = 99;
};

struct PretrainSettings {
  uint64_t seed = 11;
  double floor_acc = 0.9;
  int max_iters = 800;
  int batch_size = 64;
  double lr = 1e-2;
};

struct ExperimentConfig {
  // task
  int n_id_classes = 8;
  int n_ood_classes = 4;
  int n_tokens = 16;
  int token_dim = 16;
  double noise_sigma = 0.6;
  uint64_t task_seed = 7;

  EncoderConfig encoder;
  PretrainSettings pretrain;
  StreamSettings stream;
  AdapterConfig adapter;

  std::string method = "doco";  // or "source-only"
  std::string ood_score = "energy";
  std::string aggregate = "per-domain";  // or "pooled"
  bool exclude_first_batch = false;

  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::string output_dir;
  std::string artifacts_dir;  // where encoder.ckpt / source_stats.ckpt live

  std::string to_json(bool canonical = false) const;
  static ExperimentConfig from_json(const std::string& text);
  /// Hash of the canonical (seed/path-free) form; keys results-file rows.
  std::string hash() const;
};

ExperimentConfig default_config();

/// Materialized task + ordered, realized domain specs for this config.
TaskSpec build_task(const ExperimentConfig& cfg);
std::vector<DomainSpec> build_domains(const ExperimentConfig& cfg);
StreamConfig build_stream_config(const ExperimentConfig& cfg, uint64_t seed);

struct Artifacts {
  EncoderWeights weights;
  SourceStats stats;
  TaskSpec task;
};

/// Pretrains, caches source statistics, writes encoder.ckpt,
/// source_stats.ckpt and pretrain_log.json under cfg.artifacts_dir.
Artifacts run_pretrain(const ExperimentConfig& cfg, PretrainLog* log_out = nullptr);
Artifacts load_artifacts(const ExperimentConfig& cfg);

/// Per-cell (one cell per domain) and pooled metric evaluation of a run.
std::vector<MetricSummary> per_domain_metrics(const RunRecord& rec, OodScore score, bool exclude_first_batch);
MetricSummary pooled_metrics(const RunRecord& rec, OodScore score, bool exclude_first_batch);
MetricSummary summarize_run(const RunRecord& rec, const ExperimentConfig& cfg);

struct RunOutput {
  RunRecord record;
  MetricSummary summary;
  double wall_seconds = 0.0;
  StreamConfig stream_cfg;
};

/// One full stream pass for one seed (stream generation, adaptation or
/// source-only inference, metric evaluation). Pure given (cfg, artifacts,
/// seed).
RunOutput execute_run(const ExperimentConfig& cfg, Artifacts& art, uint64_t seed);

struct ResultRow {
  std::string config_hash;
  std::string method;
  std::string ablation;
  double kappa = 0.0;
  double severity = 0.0;
  std::string order_id;
  uint64_t seed = 0;
  double acc = 0.0;
  double auc = 0.0;
  double h_score = 0.0;
  double wall_seconds = 0.0;  // sidecar only; keeps results.csv byte-stable
};

ResultRow make_result_row(const ExperimentConfig& cfg, uint64_t seed, const RunOutput& out);
std::vector<ResultRow> read_results(const std::string& path);
/// Appends rows not already present (keyed by config hash + seed); writes the
/// header when the file is new. Wall times go to `<path>.timings.csv`.
void append_results(const std::string& path, const std::vector<ResultRow>& rows);

/// Runs every seed of the config (skipping rows already in results.csv),
/// writing per-run directories and appending to results.csv. Returns the rows
/// for all requested seeds (fresh or recomputed from the file).
std::vector<ResultRow> cmd_run(const ExperimentConfig& cfg);

struct SweepSummaryRow {
  std::string axis;
  std::string value;
  double acc_mean = 0.0, acc_std = 0.0;
  double auc_mean = 0.0, auc_std = 0.0;
  double h_mean = 0.0, h_std = 0.0;
  int n = 0;
};

std::vector<SweepSummaryRow> cmd_sweep(const ExperimentConfig& base, const std::string& axis);

/// Re-runs one row of a results file and checks the stored metrics match
/// exactly. Returns true on match.
bool cmd_verify(const std::string& results_path, size_t row_index, std::string* message = nullptr);

/// >50% of batches rejected in a run counts as an adaptation-failure storm.
bool rejected_storm(const RunRecord& rec);

}  // namespace doco
