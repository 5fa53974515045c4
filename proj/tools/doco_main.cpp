#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "doco/experiment.hpp"

namespace {

std::vector<uint64_t> parse_seeds(const std::string& s) {
  std::vector<uint64_t> seeds;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    seeds.push_back(std::stoull(s.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return seeds;
}

std::string default_out_root() {
  if (const char* env = std::getenv("DOCO_OUT")) return env;
  return "out";
}

struct CommonFlags {
  std::string config_path;
  std::string seeds;
  double kappa = -1.0;
  std::string method;
  bool no_split = false;
  bool no_propagate = false;
  bool no_reg = false;
  std::string ood_score;
  std::string domain_order;
  std::string out;
  bool exclude_first_batch = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "experiment config JSON");
  cmd->add_option("--seed", f.seeds, "seed or comma-separated seed list");
  cmd->add_option("--kappa", f.kappa, "OOD contamination ratio");
  cmd->add_option("--method", f.method, "doco or source-only");
  cmd->add_flag("--no-split", f.no_split, "ablate sample splitting (S)");
  cmd->add_flag("--no-propagate", f.no_propagate, "ablate OOD prompt propagation (O)");
  cmd->add_flag("--no-reg", f.no_reg, "ablate the structural regularizer (R)");
  cmd->add_option("--ood-score", f.ood_score, "energy | msp | maxlogit | entropy");
  cmd->add_option("--domain-order", f.domain_order, "domain permutation, e.g. 2013");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_flag("--exclude-first-batch", f.exclude_first_batch, "drop batch 1 from metric aggregates");
}

doco::ExperimentConfig build_config(const CommonFlags& f) {
  doco::ExperimentConfig cfg = doco::default_config();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw doco::MissingArtifactError("missing config file: " + f.config_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    cfg = doco::ExperimentConfig::from_json(ss.str());
  }
  if (!f.seeds.empty()) cfg.seeds = parse_seeds(f.seeds);
  if (f.kappa >= 0.0) cfg.stream.kappa = f.kappa;
  if (!f.method.empty()) cfg.method = f.method;
  if (f.no_split) cfg.adapter.use_split = false;
  if (f.no_propagate) cfg.adapter.use_propagate = false;
  if (f.no_reg) cfg.adapter.use_reg = false;
  if (!f.ood_score.empty()) cfg.ood_score = f.ood_score;
  if (!f.domain_order.empty()) cfg.stream.domain_order = f.domain_order;
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.exclude_first_batch) cfg.exclude_first_batch = true;
  if (cfg.output_dir.empty()) cfg.output_dir = default_out_root();
  if (cfg.artifacts_dir.empty()) cfg.artifacts_dir = cfg.output_dir + "/artifacts";
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DOCO: closed-loop test-time adaptation on a synthetic open-set stream"};
  app.require_subcommand(1);

  CommonFlags pre_f, run_f, sweep_f, verify_f;
  CLI::App* pre = app.add_subcommand("pretrain", "train the source encoder and cache feature statistics");
  add_common(pre, pre_f);

  CLI::App* run = app.add_subcommand("run", "run the adaptation stream for each seed");
  add_common(run, run_f);

  CLI::App* sweep = app.add_subcommand("sweep", "run a config sweep along one axis");
  std::string axis;
  sweep->add_option("--axis", axis, "kappa | severity | order | score")->required();
  add_common(sweep, sweep_f);

  CLI::App* verify = app.add_subcommand("verify", "re-run one results row and check it reproduces exactly");
  std::string results_path;
  size_t row_index = 0;
  verify->add_option("--results", results_path, "results.csv path")->required();
  verify->add_option("--row", row_index, "row index to verify (default 0)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) {
      doco::ExperimentConfig cfg = build_config(pre_f);
      doco::PretrainLog log;
      doco::run_pretrain(cfg, &log);
      std::printf("pretrain: holdout_acc=%.4f iterations=%d -> %s\n", log.holdout_acc, log.iterations,
                  cfg.artifacts_dir.c_str());
      return 0;
    }
    if (run->parsed()) {
      doco::ExperimentConfig cfg = build_config(run_f);
      const auto rows = doco::cmd_run(cfg);
      for (const auto& r : rows)
        std::printf("%s seed=%llu acc=%.4f auc=%.4f h=%.4f\n", r.method.c_str(),
                    static_cast<unsigned long long>(r.seed), r.acc, r.auc, r.h_score);
      return 0;
    }
    if (sweep->parsed()) {
      doco::ExperimentConfig cfg = build_config(sweep_f);
      const auto summary = doco::cmd_sweep(cfg, axis);
      for (const auto& s : summary)
        std::printf("%s=%s acc=%.4f±%.4f auc=%.4f±%.4f h=%.4f±%.4f (n=%d)\n", s.axis.c_str(), s.value.c_str(),
                    s.acc_mean, s.acc_std, s.auc_mean, s.auc_std, s.h_mean, s.h_std, s.n);
      return 0;
    }
    if (verify->parsed()) {
      std::string msg;
      const bool ok = doco::cmd_verify(results_path, row_index, &msg);
      std::printf("verify: %s\n", msg.c_str());
      return ok ? 0 : 1;
    }
  } catch (const doco::MissingArtifactError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const doco::AdaptationStormError& e) {
    std::fprintf(stderr, "error: adaptation-failure storm: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
