#include "doco/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace doco {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int worker_count() {
  if (const char* env = std::getenv("DOCO_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hw, 1u, 8u));
}

}  // namespace

std::string ExperimentConfig::to_json(bool canonical) const {
  json j;
  j["task"] = {{"n_id_classes", n_id_classes}, {"n_ood_classes", n_ood_classes}, {"n_tokens", n_tokens},
               {"token_dim", token_dim},       {"noise_sigma", noise_sigma},     {"seed", task_seed}};
  j["encoder"] = {{"depth", encoder.depth},         {"d_model", encoder.d_model}, {"n_heads", encoder.n_heads},
                  {"mlp_ratio", encoder.mlp_ratio}};
  j["pretrain"] = {{"seed", pretrain.seed},
                   {"floor_acc", pretrain.floor_acc},
                   {"max_iters", pretrain.max_iters},
                   {"batch_size", pretrain.batch_size},
                   {"lr", pretrain.lr}};
  json domains = json::array();
  for (const auto& d : stream.domains) {
    json jd = {{"kind", shift_kind_name(d.kind)}, {"base_severity", d.base_severity}};
    if (d.delta_seed) jd["delta_seed"] = *d.delta_seed;
    domains.push_back(jd);
  }
  j["stream"] = {{"kappa", stream.kappa},
                 {"batch_size", stream.batch_size},
                 {"batches_per_domain", stream.batches_per_domain},
                 {"severity", stream.severity},
                 {"domains", domains},
                 {"domain_order", stream.domain_order},
                 {"domain_seed", stream.domain_seed}};
  j["adapter"] = {{"use_split", adapter.use_split},
                  {"use_propagate", adapter.use_propagate},
                  {"use_reg", adapter.use_reg},
                  {"beta", adapter.beta},
                  {"init_iters", adapter.init_iters},
                  {"prompt_len", adapter.prompt_len},
                  {"small_batch_buffer", adapter.small_batch_buffer},
                  {"buffer_capacity", adapter.buffer_capacity},
                  {"lr", adapter.optim.lr},
                  {"weight_decay", adapter.optim.weight_decay},
                  {"record_raw_split", adapter.record_raw_split}};
  j["method"] = method;
  j["ood_score"] = ood_score;
  j["aggregate"] = aggregate;
  j["exclude_first_batch"] = exclude_first_batch;
  if (!canonical) {
    j["seeds"] = seeds;
    j["output_dir"] = output_dir;
    j["artifacts_dir"] = artifacts_dir;
  }
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig c;
  if (j.contains("task")) {
    const auto& t = j["task"];
    c.n_id_classes = t.value("n_id_classes", c.n_id_classes);
    c.n_ood_classes = t.value("n_ood_classes", c.n_ood_classes);
    c.n_tokens = t.value("n_tokens", c.n_tokens);
    c.token_dim = t.value("token_dim", c.token_dim);
    c.noise_sigma = t.value("noise_sigma", c.noise_sigma);
    c.task_seed = t.value("seed", c.task_seed);
  }
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    c.encoder.depth = e.value("depth", c.encoder.depth);
    c.encoder.d_model = e.value("d_model", c.encoder.d_model);
    c.encoder.n_heads = e.value("n_heads", c.encoder.n_heads);
    c.encoder.mlp_ratio = e.value("mlp_ratio", c.encoder.mlp_ratio);
  }
  if (j.contains("pretrain")) {
    const auto& p = j["pretrain"];
    c.pretrain.seed = p.value("seed", c.pretrain.seed);
    c.pretrain.floor_acc = p.value("floor_acc", c.pretrain.floor_acc);
    c.pretrain.max_iters = p.value("max_iters", c.pretrain.max_iters);
    c.pretrain.batch_size = p.value("batch_size", c.pretrain.batch_size);
    c.pretrain.lr = p.value("lr", c.pretrain.lr);
  }
  if (j.contains("stream")) {
    const auto& s = j["stream"];
    c.stream.kappa = s.value("kappa", c.stream.kappa);
    c.stream.batch_size = s.value("batch_size", c.stream.batch_size);
    c.stream.batches_per_domain = s.value("batches_per_domain", c.stream.batches_per_domain);
    c.stream.severity = s.value("severity", c.stream.severity);
    c.stream.domain_order = s.value("domain_order", c.stream.domain_order);
    c.stream.domain_seed = s.value("domain_seed", c.stream.domain_seed);
    if (s.contains("domains")) {
      c.stream.domains.clear();
      for (const auto& jd : s["domains"]) {
        DomainTemplate d;
        d.kind = shift_kind_from_name(jd.at("kind").get<std::string>());
        d.base_severity = jd.value("base_severity", 1.0);
        if (jd.contains("delta_seed")) d.delta_seed = jd["delta_seed"].get<uint64_t>();
        c.stream.domains.push_back(d);
      }
    }
  }
  if (j.contains("adapter")) {
    const auto& a = j["adapter"];
    c.adapter.use_split = a.value("use_split", c.adapter.use_split);
    c.adapter.use_propagate = a.value("use_propagate", c.adapter.use_propagate);
    c.adapter.use_reg = a.value("use_reg", c.adapter.use_reg);
    c.adapter.beta = a.value("beta", c.adapter.beta);
    c.adapter.init_iters = a.value("init_iters", c.adapter.init_iters);
    c.adapter.prompt_len = a.value("prompt_len", c.adapter.prompt_len);
    c.adapter.small_batch_buffer = a.value("small_batch_buffer", c.adapter.small_batch_buffer);
    c.adapter.buffer_capacity = a.value("buffer_capacity", c.adapter.buffer_capacity);
    c.adapter.optim.lr = a.value("lr", c.adapter.optim.lr);
    c.adapter.optim.weight_decay = a.value("weight_decay", c.adapter.optim.weight_decay);
    c.adapter.record_raw_split = a.value("record_raw_split", c.adapter.record_raw_split);
  }
  c.method = j.value("method", c.method);
  c.ood_score = j.value("ood_score", c.ood_score);
  c.aggregate = j.value("aggregate", c.aggregate);
  c.exclude_first_batch = j.value("exclude_first_batch", c.exclude_first_batch);
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<uint64_t>>();
  c.output_dir = j.value("output_dir", c.output_dir);
  c.artifacts_dir = j.value("artifacts_dir", c.artifacts_dir);
  return c;
}

std::string ExperimentConfig::hash() const {
  const std::string canon = to_json(true);
  uint64_t h = 0xcbf29ce484222325ull;
  for (char ch : canon) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.encoder.n_patches = c.n_tokens;
  c.encoder.d_in = c.token_dim;
  c.encoder.n_classes = c.n_id_classes;
  c.stream.domains = {
      {ShiftKind::AdditiveBias, 2.5, std::nullopt},
      {ShiftKind::Gain, 0.9, std::nullopt},
      {ShiftKind::TokenDropout, 0.4, std::nullopt},
      {ShiftKind::BlurMix, 0.9, std::nullopt},
  };
  return c;
}

TaskSpec build_task(const ExperimentConfig& cfg) {
  return make_task(cfg.n_id_classes, cfg.n_ood_classes, cfg.n_tokens, cfg.token_dim, cfg.noise_sigma, cfg.task_seed);
}

std::vector<DomainSpec> build_domains(const ExperimentConfig& cfg) {
  std::vector<int> order(cfg.stream.domains.size());
  std::iota(order.begin(), order.end(), 0);
  if (!cfg.stream.domain_order.empty()) {
    if (cfg.stream.domain_order.size() != cfg.stream.domains.size())
      throw std::invalid_argument("domain_order length does not match domain count");
    std::vector<bool> seen(order.size(), false);
    for (size_t i = 0; i < cfg.stream.domain_order.size(); ++i) {
      const int k = cfg.stream.domain_order[i] - '0';
      if (k < 0 || k >= static_cast<int>(order.size()) || seen[static_cast<size_t>(k)])
        throw std::invalid_argument("domain_order is not a permutation");
      seen[static_cast<size_t>(k)] = true;
      order[i] = k;
    }
  }
  std::vector<DomainSpec> out;
  Rng seeder = Rng(cfg.stream.domain_seed).substream("domains");
  std::vector<uint64_t> derived(cfg.stream.domains.size());
  for (auto& s : derived) s = seeder.next_u64();
  for (size_t pos = 0; pos < order.size(); ++pos) {
    const auto& tmpl = cfg.stream.domains[static_cast<size_t>(order[pos])];
    const uint64_t ds = tmpl.delta_seed ? *tmpl.delta_seed : derived[static_cast<size_t>(order[pos])];
    DomainSpec d = make_domain(order[pos], tmpl.kind, tmpl.base_severity * cfg.stream.severity, ds, cfg.n_tokens,
                               cfg.token_dim);
    out.push_back(std::move(d));
  }
  return out;
}

StreamConfig build_stream_config(const ExperimentConfig& cfg, uint64_t seed) {
  StreamConfig sc;
  sc.kappa = cfg.stream.kappa;
  sc.batch_size = cfg.stream.batch_size;
  sc.batches_per_domain = cfg.stream.batches_per_domain;
  sc.domains = build_domains(cfg);
  sc.seed = seed;
  return sc;
}

Artifacts run_pretrain(const ExperimentConfig& cfg, PretrainLog* log_out) {
  if (cfg.artifacts_dir.empty()) throw std::invalid_argument("run_pretrain: artifacts_dir not set");
  fs::create_directories(cfg.artifacts_dir);
  Artifacts art{.weights = {}, .stats = {}, .task = build_task(cfg)};
  EncoderConfig ec = cfg.encoder;
  ec.n_patches = cfg.n_tokens;
  ec.d_in = cfg.token_dim;
  ec.n_classes = cfg.n_id_classes;
  Rng init_rng = Rng(cfg.pretrain.seed).substream("encoder-init");
  art.weights = init_encoder(ec, init_rng);
  PretrainOptions opts;
  opts.floor_acc = cfg.pretrain.floor_acc;
  opts.max_iters = cfg.pretrain.max_iters;
  opts.batch_size = cfg.pretrain.batch_size;
  opts.lr = cfg.pretrain.lr;
  PretrainLog log = pretrain_source(art.task, art.weights, cfg.pretrain.seed, opts);
  art.stats = cache_source_stats(art.weights, art.task, 300, cfg.pretrain.seed);

  save_encoder(cfg.artifacts_dir + "/encoder.ckpt", art.weights);
  save_source_stats(cfg.artifacts_dir + "/source_stats.ckpt", art.stats);
  json jlog = {{"holdout_acc", log.holdout_acc}, {"iterations", log.iterations}};
  write_file(cfg.artifacts_dir + "/pretrain_log.json", jlog.dump(2) + "\n");
  if (log_out) *log_out = log;
  return art;
}

Artifacts load_artifacts(const ExperimentConfig& cfg) {
  const std::string enc_path = cfg.artifacts_dir + "/encoder.ckpt";
  const std::string stats_path = cfg.artifacts_dir + "/source_stats.ckpt";
  if (!fs::exists(enc_path)) throw MissingArtifactError("missing checkpoint: " + enc_path);
  if (!fs::exists(stats_path)) throw MissingArtifactError("missing source stats: " + stats_path);
  Artifacts art{.weights = load_encoder(enc_path), .stats = load_source_stats(stats_path), .task = build_task(cfg)};
  return art;
}

namespace {

MetricSummary eval_samples(std::span<const SampleRecord* const> samples, OodScore score) {
  int id_total = 0, id_correct = 0;
  std::vector<double> id_scores, ood_scores;
  for (const SampleRecord* s : samples) {
    const double v = apply_ood_score(score, s->logits);
    if (s->true_ood) {
      ood_scores.push_back(v);
    } else {
      id_scores.push_back(v);
      ++id_total;
      if (s->predicted == s->true_label) ++id_correct;
    }
  }
  MetricSummary m;
  m.acc = id_total > 0 ? static_cast<double>(id_correct) / id_total : kNan;
  const auto a = auc(id_scores, ood_scores);
  m.auc = a ? *a : kNan;
  m.h = (std::isfinite(m.acc) && std::isfinite(m.auc)) ? h_score(m.acc, m.auc) : kNan;
  return m;
}

}  // namespace

std::vector<MetricSummary> per_domain_metrics(const RunRecord& rec, OodScore score, bool exclude_first_batch) {
  std::vector<int> domains;
  for (const auto& s : rec.samples)
    if (std::find(domains.begin(), domains.end(), s.domain_index) == domains.end()) domains.push_back(s.domain_index);
  std::vector<MetricSummary> out;
  for (int d : domains) {
    std::vector<const SampleRecord*> cell;
    for (const auto& s : rec.samples) {
      if (s.domain_index != d) continue;
      if (exclude_first_batch && s.batch_index == 1) continue;
      cell.push_back(&s);
    }
    if (!cell.empty()) out.push_back(eval_samples(cell, score));
  }
  return out;
}

MetricSummary pooled_metrics(const RunRecord& rec, OodScore score, bool exclude_first_batch) {
  std::vector<const SampleRecord*> all;
  for (const auto& s : rec.samples) {
    if (exclude_first_batch && s.batch_index == 1) continue;
    all.push_back(&s);
  }
  return eval_samples(all, score);
}

MetricSummary summarize_run(const RunRecord& rec, const ExperimentConfig& cfg) {
  const OodScore score = ood_score_from_name(cfg.ood_score);
  if (cfg.aggregate == "pooled") return pooled_metrics(rec, score, cfg.exclude_first_batch);
  const auto cells = per_domain_metrics(rec, score, cfg.exclude_first_batch);
  return aggregate(cells);
}

RunOutput execute_run(const ExperimentConfig& cfg, Artifacts& art, uint64_t seed) {
  RunOutput out;
  out.stream_cfg = build_stream_config(cfg, seed);
  const std::vector<StreamBatch> stream = make_stream(out.stream_cfg, art.task);
  const auto start = std::chrono::steady_clock::now();
  if (cfg.method == "doco") {
    AdapterState state = make_adapter(cfg.adapter, art.stats, art.weights.config.d_model,
                                      Rng(seed).substream("prompt-init"));
    out.record = run_stream(state, art.weights, stream);
  } else if (cfg.method == "source-only") {
    out.record = run_source_only(art.weights, stream);
  } else {
    throw std::invalid_argument("unknown method: " + cfg.method);
  }
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.summary = summarize_run(out.record, cfg);
  return out;
}

bool rejected_storm(const RunRecord& rec) {
  return !rec.batches.empty() && rec.rejected_batches * 2 > static_cast<int>(rec.batches.size());
}

ResultRow make_result_row(const ExperimentConfig& cfg, uint64_t seed, const RunOutput& out) {
  ResultRow r;
  r.config_hash = cfg.hash();
  r.method = cfg.method;
  r.ablation = cfg.method == "doco" ? cfg.adapter.ablation_mask() : "---";
  r.kappa = cfg.stream.kappa;
  r.severity = cfg.stream.severity;
  if (cfg.stream.domain_order.empty()) {
    for (size_t i = 0; i < cfg.stream.domains.size(); ++i) r.order_id += static_cast<char>('0' + i);
  } else {
    r.order_id = cfg.stream.domain_order;
  }
  r.seed = seed;
  r.acc = out.summary.acc;
  r.auc = out.summary.auc;
  r.h_score = out.summary.h;
  r.wall_seconds = out.wall_seconds;
  return r;
}

static const char* kResultsHeader = "config_hash,method,ablation,kappa,severity,order_id,seed,acc,auc,h_score";

std::vector<ResultRow> read_results(const std::string& path) {
  std::vector<ResultRow> rows;
  if (!fs::exists(path)) return rows;
  std::ifstream f(path);
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (first) {
      first = false;
      if (line != kResultsHeader) throw std::runtime_error("results file has unexpected header: " + path);
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream is(line);
    std::string c;
    while (std::getline(is, c, ',')) cols.push_back(c);
    if (cols.size() != 10) throw std::runtime_error("results file has malformed row: " + line);
    ResultRow r;
    r.config_hash = cols[0];
    r.method = cols[1];
    r.ablation = cols[2];
    r.kappa = std::stod(cols[3]);
    r.severity = std::stod(cols[4]);
    r.order_id = cols[5];
    r.seed = std::stoull(cols[6]);
    r.acc = std::stod(cols[7]);
    r.auc = std::stod(cols[8]);
    r.h_score = std::stod(cols[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void append_results(const std::string& path, const std::vector<ResultRow>& rows) {
  std::vector<ResultRow> existing = read_results(path);
  auto have = [&existing](const ResultRow& r) {
    for (const auto& e : existing)
      if (e.config_hash == r.config_hash && e.seed == r.seed) return true;
    return false;
  };
  const bool fresh = !fs::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot append to " + path);
  if (fresh) f << kResultsHeader << "\n";
  std::ofstream tf(path + ".timings.csv", std::ios::app);
  if (fs::file_size(path + ".timings.csv") == 0) tf << "config_hash,seed,wall_seconds\n";
  for (const auto& r : rows) {
    if (have(r)) continue;
    f << r.config_hash << "," << r.method << "," << r.ablation << "," << fmt_double(r.kappa) << ","
      << fmt_double(r.severity) << "," << r.order_id << "," << r.seed << "," << fmt_double(r.acc) << ","
      << fmt_double(r.auc) << "," << fmt_double(r.h_score) << "\n";
    tf << r.config_hash << "," << r.seed << "," << fmt_double(r.wall_seconds) << "\n";
    f.flush();
    tf.flush();
    existing.push_back(r);
  }
}

namespace {

void write_run_dir(const ExperimentConfig& cfg, uint64_t seed, const RunOutput& out, const TaskSpec& task) {
  const fs::path dir = fs::path(cfg.output_dir) / "runs" / cfg.hash() / ("seed" + std::to_string(seed));
  fs::create_directories(dir);
  write_file((dir / "config.json").string(), cfg.to_json() + "\n");
  write_file((dir / "manifest.json").string(), stream_manifest_json(task, out.stream_cfg) + "\n");
  write_file((dir / "run_record.csv").string(), run_record_csv(out.record));
  write_file((dir / "probes.csv").string(), probes_csv(out.record));
  json summary = {{"acc", out.summary.acc}, {"auc", out.summary.auc}, {"h_score", out.summary.h}};
  write_file((dir / "summary.json").string(), summary.dump(2) + "\n");
}

}  // namespace

std::vector<ResultRow> cmd_run(const ExperimentConfig& cfg) {
  if (cfg.output_dir.empty()) throw std::invalid_argument("cmd_run: output_dir not set");
  Artifacts art = load_artifacts(cfg);
  fs::create_directories(fs::path(cfg.output_dir) / "configs");
  write_file((fs::path(cfg.output_dir) / "configs" / (cfg.hash() + ".json")).string(), cfg.to_json() + "\n");
  const std::string results_path = (fs::path(cfg.output_dir) / "results.csv").string();

  const std::vector<ResultRow> existing = read_results(results_path);
  std::vector<uint64_t> pending;
  std::vector<ResultRow> done;
  for (uint64_t seed : cfg.seeds) {
    bool found = false;
    for (const auto& e : existing)
      if (e.config_hash == cfg.hash() && e.seed == seed) {
        done.push_back(e);
        found = true;
      }
    if (!found) pending.push_back(seed);
  }

  std::vector<RunOutput> outputs(pending.size());
  const int workers = std::min<int>(worker_count(), static_cast<int>(pending.size()) > 0 ? static_cast<int>(pending.size()) : 1);
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::string fail_msg;
  std::mutex fail_mu;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= pending.size() || failed.load()) break;
        try {
          outputs[i] = execute_run(cfg, art, pending[i]);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lk(fail_mu);
          failed.store(true);
          fail_msg = e.what();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed.load()) throw std::runtime_error("run failed: " + fail_msg);

  std::vector<ResultRow> fresh_rows;
  for (size_t i = 0; i < pending.size(); ++i) {
    if (rejected_storm(outputs[i].record))
      throw AdaptationStormError("seed " + std::to_string(pending[i]) + ": " +
                                 std::to_string(outputs[i].record.rejected_batches) + "/" +
                                 std::to_string(outputs[i].record.batches.size()) + " batches rejected");
    write_run_dir(cfg, pending[i], outputs[i], art.task);
    fresh_rows.push_back(make_result_row(cfg, pending[i], outputs[i]));
  }
  append_results(results_path, fresh_rows);

  std::vector<ResultRow> all = done;
  all.insert(all.end(), fresh_rows.begin(), fresh_rows.end());
  std::sort(all.begin(), all.end(), [](const ResultRow& a, const ResultRow& b) { return a.seed < b.seed; });
  return all;
}

namespace {

SweepSummaryRow summarize_axis_value(const std::string& axis, const std::string& value,
                                     const std::vector<ResultRow>& rows) {
  SweepSummaryRow s;
  s.axis = axis;
  s.value = value;
  s.n = static_cast<int>(rows.size());
  auto mean_std = [&rows](auto get, double& mean, double& sd) {
    mean = 0.0;
    for (const auto& r : rows) mean += get(r);
    mean /= static_cast<double>(rows.size());
    double ss = 0.0;
    for (const auto& r : rows) ss += (get(r) - mean) * (get(r) - mean);
    sd = rows.size() > 1 ? std::sqrt(ss / (static_cast<double>(rows.size()) - 1.0)) : 0.0;
  };
  mean_std([](const ResultRow& r) { return r.acc; }, s.acc_mean, s.acc_std);
  mean_std([](const ResultRow& r) { return r.auc; }, s.auc_mean, s.auc_std);
  mean_std([](const ResultRow& r) { return r.h_score; }, s.h_mean, s.h_std);
  return s;
}

std::vector<std::string> order_permutations(size_t n_domains, size_t count) {
  std::string base;
  for (size_t i = 0; i < n_domains; ++i) base += static_cast<char>('0' + i);
  std::vector<std::string> out;
  std::string p = base;
  do {
    out.push_back(p);
  } while (out.size() < count && std::next_permutation(p.begin(), p.end()));
  return out;
}

}  // namespace

std::vector<SweepSummaryRow> cmd_sweep(const ExperimentConfig& base, const std::string& axis) {
  std::vector<std::pair<std::string, ExperimentConfig>> variants;
  if (axis == "kappa") {
    for (double k : {0.1, 0.2, 0.3, 0.4, 0.5}) {
      ExperimentConfig c = base;
      c.stream.kappa = k;
      variants.emplace_back(fmt_double(k), c);
    }
  } else if (axis == "severity") {
    for (double s : {0.25, 0.5, 0.75, 1.0}) {
      ExperimentConfig c = base;
      c.stream.severity = s;
      variants.emplace_back(fmt_double(s), c);
    }
  } else if (axis == "order") {
    for (const std::string& ord : order_permutations(base.stream.domains.size(), 6)) {
      ExperimentConfig c = base;
      c.stream.domain_order = ord;
      variants.emplace_back(ord, c);
    }
  } else if (axis == "score") {
    for (const char* s : {"energy", "msp", "maxlogit", "entropy"}) {
      ExperimentConfig c = base;
      c.ood_score = s;
      variants.emplace_back(s, c);
    }
  } else {
    throw std::invalid_argument("unknown sweep axis: " + axis);
  }

  std::vector<SweepSummaryRow> summary;
  for (auto& [value, cfg] : variants) {
    const std::vector<ResultRow> rows = cmd_run(cfg);
    summary.push_back(summarize_axis_value(axis, value, rows));
  }
  std::string csv = "axis,value,acc_mean,acc_std,auc_mean,auc_std,h_mean,h_std,n\n";
  for (const auto& s : summary) {
    csv += s.axis + "," + s.value + "," + fmt_double(s.acc_mean) + "," + fmt_double(s.acc_std) + "," +
           fmt_double(s.auc_mean) + "," + fmt_double(s.auc_std) + "," + fmt_double(s.h_mean) + "," +
           fmt_double(s.h_std) + "," + std::to_string(s.n) + "\n";
  }
  write_file((fs::path(base.output_dir) / ("sweep_" + axis + "_summary.csv")).string(), csv);
  return summary;
}

bool cmd_verify(const std::string& results_path, size_t row_index, std::string* message) {
  const std::vector<ResultRow> rows = read_results(results_path);
  if (rows.empty()) {
    if (message) *message = "no rows in " + results_path;
    return false;
  }
  if (row_index >= rows.size()) {
    if (message) *message = "row index out of range";
    return false;
  }
  const ResultRow& row = rows[row_index];
  const fs::path snapshot = fs::path(results_path).parent_path() / "configs" / (row.config_hash + ".json");
  if (!fs::exists(snapshot)) throw MissingArtifactError("missing config snapshot: " + snapshot.string());
  ExperimentConfig cfg = ExperimentConfig::from_json(read_file(snapshot.string()));
  Artifacts art = load_artifacts(cfg);
  RunOutput out = execute_run(cfg, art, row.seed);
  const bool ok = fmt_double(out.summary.acc) == fmt_double(row.acc) &&
                  fmt_double(out.summary.auc) == fmt_double(row.auc) &&
                  fmt_double(out.summary.h) == fmt_double(row.h_score);
  if (message) {
    *message = ok ? "row " + std::to_string(row_index) + " reproduced exactly"
                  : "row " + std::to_string(row_index) + " mismatch: recomputed acc=" + fmt_double(out.summary.acc) +
                        " auc=" + fmt_double(out.summary.auc) + " h=" + fmt_double(out.summary.h);
  }
  return ok;
}

}  // namespace doco
