#include "doco/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>

#include <json.hpp>

#include "doco/adapt.hpp"

namespace doco {

using ad::Tape;
using ad::Tensor;

namespace {

double template_distance(const Tensor& a, const Tensor& b) {
  double ss = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    ss += d * d;
  }
  return std::sqrt(ss);
}

}  // namespace

TaskSpec make_task(int n_id_classes, int n_ood_classes, int n_tokens, int token_dim, double noise_sigma,
                   uint64_t seed) {
  if (n_id_classes < 1 || n_ood_classes < 0 || n_tokens < 1 || token_dim < 1)
    throw std::invalid_argument("make_task: invalid counts");
  TaskSpec task;
  task.n_id_classes = n_id_classes;
  task.n_ood_classes = n_ood_classes;
  task.n_tokens = n_tokens;
  task.token_dim = token_dim;
  task.noise_sigma = noise_sigma;
  task.seed = seed;
  Rng rng = Rng(seed).substream("task");
  const int total = n_id_classes + n_ood_classes;
  task.class_seeds.resize(total);
  for (int c = 0; c < total; ++c) task.class_seeds[c] = rng.next_u64();
  // ID and OOD seed pools must be disjoint
  for (int i = 0; i < total; ++i)
    for (int j = i + 1; j < total; ++j)
      if (task.class_seeds[i] == task.class_seeds[j]) throw std::runtime_error("make_task: class seed collision");

  // separability probe: clean samples must classify to the nearest template
  std::vector<Tensor> templates;
  for (int c = 0; c < total; ++c) templates.push_back(class_template(task, c));
  double min_dist = 1e300;
  for (int i = 0; i < total; ++i)
    for (int j = i + 1; j < total; ++j) min_dist = std::min(min_dist, template_distance(templates[i], templates[j]));
  Rng probe = Rng(seed).substream("task-probe");
  int correct = 0, trials = 0;
  for (int c = 0; c < n_id_classes; ++c) {
    for (int r = 0; r < 16; ++r) {
      std::vector<double> x = draw_sample(task, c, probe);
      int best = -1;
      double best_d = 1e300;
      for (int t = 0; t < n_id_classes; ++t) {
        double ss = 0.0;
        for (size_t k = 0; k < x.size(); ++k) {
          const double d = x[k] - templates[t].data[k];
          ss += d * d;
        }
        if (ss < best_d) {
          best_d = ss;
          best = t;
        }
      }
      correct += (best == c);
      ++trials;
    }
  }
  const double probe_acc = static_cast<double>(correct) / trials;
  if (probe_acc < 0.95)
    throw std::runtime_error("make_task: clean classes not separable at the calibration floor (probe acc " +
                             std::to_string(probe_acc) + ")");
  return task;
}

ad::Tensor class_template(const TaskSpec& task, int class_index) {
  if (class_index < 0 || class_index >= static_cast<int>(task.class_seeds.size()))
    throw std::invalid_argument("class_template: class index out of range");
  Rng rng(task.class_seeds[static_cast<size_t>(class_index)]);
  Tensor t({task.n_tokens, task.token_dim});
  for (auto& v : t.data) v = rng.normal();
  return t;
}

std::vector<double> draw_sample(const TaskSpec& task, int class_index, Rng& rng) {
  const Tensor tpl = class_template(task, class_index);
  std::vector<double> x(tpl.data.size());
  for (size_t i = 0; i < x.size(); ++i) x[i] = tpl.data[i] + task.noise_sigma * rng.normal();
  return x;
}

ShiftKind shift_kind_from_name(const std::string& name) {
  if (name == "additive-bias") return ShiftKind::AdditiveBias;
  if (name == "gain") return ShiftKind::Gain;
  if (name == "token-dropout-mask") return ShiftKind::TokenDropout;
  if (name == "blur-mix") return ShiftKind::BlurMix;
  throw std::invalid_argument("unknown shift kind: " + name);
}

std::string shift_kind_name(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::AdditiveBias: return "additive-bias";
    case ShiftKind::Gain: return "gain";
    case ShiftKind::TokenDropout: return "token-dropout-mask";
    case ShiftKind::BlurMix: return "blur-mix";
  }
  return "?";
}

DomainSpec make_domain(int domain_index, ShiftKind kind, double severity, uint64_t delta_seed, int n_tokens,
                       int token_dim) {
  if (severity < 0.0) throw std::invalid_argument("make_domain: severity must be >= 0");
  DomainSpec d;
  d.domain_index = domain_index;
  d.kind = kind;
  d.severity = severity;
  d.delta_seed = delta_seed;
  Rng rng(delta_seed);
  switch (kind) {
    case ShiftKind::AdditiveBias:
      d.bias.resize(token_dim);
      for (auto& v : d.bias) v = severity * rng.normal();
      break;
    case ShiftKind::Gain:
      d.gain.resize(token_dim);
      for (auto& v : d.gain) v = std::exp(severity * rng.normal());
      break;
    case ShiftKind::TokenDropout: {
      const int n_drop = std::min(n_tokens - 1, static_cast<int>(std::lround(severity * n_tokens)));
      std::vector<int> order(n_tokens);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      d.dropped_tokens.assign(order.begin(), order.begin() + n_drop);
      std::sort(d.dropped_tokens.begin(), d.dropped_tokens.end());
      break;
    }
    case ShiftKind::BlurMix:
      d.blur_alpha = 0.5 * std::min(severity, 1.0);
      d.blur_rounds = std::max(1, static_cast<int>(std::lround(severity)));
      break;
  }
  return d;
}

void apply_corruption(std::vector<double>& tokens, const DomainSpec& domain, int n_tokens, int token_dim) {
  if (static_cast<int>(tokens.size()) != n_tokens * token_dim)
    throw std::invalid_argument("apply_corruption: token grid size mismatch");
  if (domain.severity == 0.0) return;  // severity 0 is the clean domain, bit-exact
  switch (domain.kind) {
    case ShiftKind::AdditiveBias:
      for (int t = 0; t < n_tokens; ++t)
        for (int j = 0; j < token_dim; ++j) tokens[static_cast<size_t>(t) * token_dim + j] += domain.bias[j];
      break;
    case ShiftKind::Gain:
      for (int t = 0; t < n_tokens; ++t)
        for (int j = 0; j < token_dim; ++j) tokens[static_cast<size_t>(t) * token_dim + j] *= domain.gain[j];
      break;
    case ShiftKind::TokenDropout:
      for (int t : domain.dropped_tokens)
        std::fill_n(tokens.begin() + static_cast<size_t>(t) * token_dim, token_dim, 0.0);
      break;
    case ShiftKind::BlurMix: {
      const double a = domain.blur_alpha;
      if (a == 0.0) return;
      std::vector<double> mixed(tokens.size());
      for (int round = 0; round < domain.blur_rounds; ++round) {
        for (int t = 0; t < n_tokens; ++t) {
          const int prev = (t + n_tokens - 1) % n_tokens;
          const int next = (t + 1) % n_tokens;
          for (int j = 0; j < token_dim; ++j) {
            const double neigh = 0.5 * (tokens[static_cast<size_t>(prev) * token_dim + j] +
                                        tokens[static_cast<size_t>(next) * token_dim + j]);
            mixed[static_cast<size_t>(t) * token_dim + j] =
                (1.0 - a) * tokens[static_cast<size_t>(t) * token_dim + j] + a * neigh;
          }
        }
        tokens.swap(mixed);
      }
      break;
    }
  }
}

std::vector<StreamBatch> make_stream(const StreamConfig& config, const TaskSpec& task) {
  if (config.domains.empty()) throw std::invalid_argument("make_stream: no domains configured");
  if (config.kappa < 0.0 || config.kappa >= 1.0) throw std::invalid_argument("make_stream: kappa must be in [0,1)");
  Rng rng = Rng(config.seed).substream("stream");
  std::vector<StreamBatch> out;
  const int grid = task.n_tokens * task.token_dim;
  for (const DomainSpec& domain : config.domains) {
    for (int b = 0; b < config.batches_per_domain; ++b) {
      StreamBatch batch;
      batch.domain_index = domain.domain_index;
      batch.tokens = Tensor({config.batch_size, grid});
      batch.labels.resize(config.batch_size);
      batch.is_ood.resize(config.batch_size);
      for (int s = 0; s < config.batch_size; ++s) {
        const bool ood = task.n_ood_classes > 0 && rng.uniform() < config.kappa;
        const int cls = ood ? task.n_id_classes + rng.uniform_int(task.n_ood_classes)
                            : rng.uniform_int(task.n_id_classes);
        std::vector<double> x = draw_sample(task, cls, rng);
        apply_corruption(x, domain, task.n_tokens, task.token_dim);
        std::copy(x.begin(), x.end(), batch.tokens.data.begin() + static_cast<size_t>(s) * grid);
        batch.labels[s] = cls;
        batch.is_ood[s] = ood ? 1 : 0;
      }
      out.push_back(std::move(batch));
    }
  }
  return out;
}

namespace {

double holdout_accuracy(EncoderWeights& weights, const Tensor& tokens, const std::vector<int>& labels) {
  ForwardResult fr = forward_plain(weights, tokens, nullptr);
  const int n = fr.logits.rows(), c = fr.logits.cols();
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    const int pred = ad::argmax(std::span<const double>(fr.logits.data.data() + static_cast<size_t>(i) * c, c));
    correct += (pred == labels[i]);
  }
  return static_cast<double>(correct) / n;
}

}  // namespace

PretrainLog pretrain_source(const TaskSpec& task, EncoderWeights& weights, uint64_t seed,
                            const PretrainOptions& opts) {
  Rng data_rng = Rng(seed).substream("pretrain-data");
  Rng holdout_rng = Rng(seed).substream("pretrain-holdout");
  const int grid = task.n_tokens * task.token_dim;
  const int c = task.n_id_classes;

  // fixed holdout set
  const int n_hold = c * opts.holdout_per_class;
  Tensor hold_tokens({n_hold, grid});
  std::vector<int> hold_labels(n_hold);
  for (int i = 0; i < n_hold; ++i) {
    const int cls = i % c;
    std::vector<double> x = draw_sample(task, cls, holdout_rng);
    std::copy(x.begin(), x.end(), hold_tokens.data.begin() + static_cast<size_t>(i) * grid);
    hold_labels[i] = cls;
  }

  weights.set_requires_grad(true);
  std::vector<Tensor*> params = weights.parameters();
  AdamW opt(AdamWConfig{.lr = opts.lr, .weight_decay = 0.0});

  PretrainLog log;
  log.holdout_acc = holdout_accuracy(weights, hold_tokens, hold_labels);
  for (int it = 0; it < opts.max_iters && (it < opts.min_iters || log.holdout_acc < opts.floor_acc); ++it) {
    Tensor batch({opts.batch_size, grid});
    std::vector<int> labels(opts.batch_size);
    for (int s = 0; s < opts.batch_size; ++s) {
      labels[s] = data_rng.uniform_int(c);
      std::vector<double> x = draw_sample(task, labels[s], data_rng);
      std::copy(x.begin(), x.end(), batch.data.begin() + static_cast<size_t>(s) * grid);
    }
    Tape tape;
    Tensor* feats = forward_features(tape, weights, batch, nullptr);
    Tensor* logits = forward_logits(tape, weights, feats);
    Tensor* loss = nullptr;
    for (int i = 0; i < opts.batch_size; ++i) {
      Tensor* row = tape.reshape(tape.slice_rows(logits, i, 1), {c});
      Tensor* li = tape.sub(tape.logsumexp(row), tape.select(row, labels[i]));
      loss = loss ? tape.add(loss, li) : li;
    }
    loss = tape.scale(loss, 1.0 / opts.batch_size);
    log.loss_curve.push_back(loss->scalar());
    for (Tensor* p : params) p->zero_grad();
    tape.backward(loss);
    opt.step(params);
    log.iterations = it + 1;
    if ((it + 1) % opts.eval_every == 0) log.holdout_acc = holdout_accuracy(weights, hold_tokens, hold_labels);
  }
  log.holdout_acc = holdout_accuracy(weights, hold_tokens, hold_labels);
  weights.set_requires_grad(false);
  if (log.holdout_acc < opts.floor_acc)
    throw std::runtime_error("pretrain_source: holdout accuracy floor unreachable at iteration cap (got " +
                             std::to_string(log.holdout_acc) + ")");
  return log;
}

SourceStats cache_source_stats(EncoderWeights& weights, const TaskSpec& task, int n, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("cache_source_stats: need at least two samples");
  Rng rng = Rng(seed).substream("source-stats");
  const int grid = task.n_tokens * task.token_dim;
  const int d = weights.config.d_model;
  Tensor features({n, d});
  int produced = 0;
  const int chunk = 64;
  while (produced < n) {
    const int m = std::min(chunk, n - produced);
    Tensor batch({m, grid});
    for (int s = 0; s < m; ++s) {
      const int cls = rng.uniform_int(task.n_id_classes);
      std::vector<double> x = draw_sample(task, cls, rng);
      std::copy(x.begin(), x.end(), batch.data.begin() + static_cast<size_t>(s) * grid);
    }
    ForwardResult fr = forward_plain(weights, batch, nullptr);
    std::copy(fr.features.data.begin(), fr.features.data.end(),
              features.data.begin() + static_cast<size_t>(produced) * d);
    produced += m;
  }
  SourceStats stats;
  stats.n_source = n;
  batch_stats(features, stats.mu, stats.sigma);
  return stats;
}

std::string stream_manifest_json(const TaskSpec& task, const StreamConfig& config) {
  nlohmann::json j;
  j["task"] = {{"n_id_classes", task.n_id_classes}, {"n_ood_classes", task.n_ood_classes},
               {"n_tokens", task.n_tokens},         {"token_dim", task.token_dim},
               {"noise_sigma", task.noise_sigma},   {"seed", task.seed},
               {"class_seeds", task.class_seeds}};
  j["stream"] = {{"kappa", config.kappa},
                 {"batch_size", config.batch_size},
                 {"batches_per_domain", config.batches_per_domain},
                 {"seed", config.seed}};
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : config.domains) {
    nlohmann::json jd = {{"domain_index", d.domain_index}, {"kind", shift_kind_name(d.kind)},
                         {"severity", d.severity},         {"delta_seed", d.delta_seed},
                         {"bias", d.bias},                 {"gain", d.gain},
                         {"dropped_tokens", d.dropped_tokens}, {"blur_alpha", d.blur_alpha},
                         {"blur_rounds", d.blur_rounds}}; 
    domains.push_back(jd);
  }
  j["stream"]["domains"] = domains;
  return j.dump(2);
}

}  // namespace doco
