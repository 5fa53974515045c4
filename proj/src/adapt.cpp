#include "doco/adapt.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace doco {

using ad::Tape;
using ad::Tensor;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

bool AdamW::step(std::span<Tensor* const> params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->data.size(), 0.0);
      v_[i].assign(params[i]->data.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("AdamW::step: parameter group changed size");
  for (Tensor* p : params) {
    if (!p->grad.empty() && !all_finite(p->grad)) {
      ++rejected_;
      return false;
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i];
    for (size_t j = 0; j < p->data.size(); ++j) {
      const double g = p->grad.empty() ? 0.0 : p->grad[j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m_[i][j] / bc1;
      const double v_hat = v_[i][j] / bc2;
      p->data[j] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * p->data[j]);
    }
  }
  return true;
}

std::string AdapterConfig::ablation_mask() const {
  std::string s;
  s += use_split ? 'S' : '-';
  s += use_propagate ? 'O' : '-';
  s += use_reg ? 'R' : '-';
  return s;
}

AdapterState make_adapter(const AdapterConfig& config, const SourceStats& stats, int d_model, Rng prompt_rng) {
  AdapterState st;
  st.config = config;
  st.source_stats = stats;
  st.prompt = init_prompt(config.prompt_len, d_model, prompt_rng);
  st.prompt.tokens.requires_grad = true;
  st.optimizer = AdamW(config.optim);
  st.buffer = ScoreBuffer(static_cast<size_t>(config.buffer_capacity));
  return st;
}

namespace {

// Plain forward with the prompt treated as a constant (no tape growth for
// gradient bookkeeping).
ForwardResult predict(EncoderWeights& enc, const Tensor& tokens, PromptState* prompt) {
  bool saved = false;
  if (prompt) {
    saved = prompt->tokens.requires_grad;
    prompt->tokens.requires_grad = false;
  }
  ForwardResult fr = forward_plain(enc, tokens, prompt);
  if (prompt) prompt->tokens.requires_grad = saved;
  return fr;
}

Tensor gather_sample_rows(const Tensor& tokens, std::span<const int> indices) {
  const int d = tokens.cols();
  Tensor out({static_cast<int>(indices.size()), d});
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy_n(tokens.data.begin() + static_cast<int64_t>(indices[i]) * d, d,
                out.data.begin() + static_cast<int64_t>(i) * d);
  return out;
}

SplitResult whole_batch_id(int n) {
  SplitResult s;
  s.id_indices.resize(n);
  for (int i = 0; i < n; ++i) s.id_indices[i] = i;
  return s;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int n = logits.rows(), c = logits.cols();
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = ad::argmax(std::span<const double>(logits.data.data() + static_cast<size_t>(i) * c, c));
  return out;
}

void place_rows(Tensor& dst, const Tensor& src, std::span<const int> indices) {
  const int c = dst.cols();
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy_n(src.data.begin() + static_cast<int64_t>(i) * c, c,
                dst.data.begin() + static_cast<int64_t>(indices[i]) * c);
}

// Shared update: L_DOCO over the given rows of an already-recorded prompted
// feature tensor, one optimizer step with non-finite rollback.
bool update_from_features(AdapterState& state, EncoderWeights& enc, Tape& tape, Tensor* feats,
                          const Tensor& whole_tokens, std::span<const int> id_indices, LossBreakdown* out_loss) {
  const double beta = state.config.effective_beta();
  Tensor* id_feats = tape.gather_rows(feats, id_indices);
  Tensor raw_id_feats;
  if (beta > 0.0 && id_indices.size() >= 2) {
    Tensor id_tokens = gather_sample_rows(whole_tokens, id_indices);
    raw_id_feats = predict(enc, id_tokens, nullptr).features;
  }
  LossBreakdown lb = doco_loss(tape, id_feats, raw_id_feats, state.source_stats, beta);
  if (out_loss) *out_loss = lb;
  if (!std::isfinite(lb.total)) {
    state.events.push_back("non-finite loss at step " + std::to_string(state.step_count + 1) + "; update rejected");
    return false;
  }
  state.prompt.tokens.zero_grad();
  tape.backward(lb.total_node);
  Tensor* group[1] = {&state.prompt.tokens};
  if (!state.optimizer.step(group)) {
    state.events.push_back("non-finite gradient at step " + std::to_string(state.step_count + 1) +
                           "; update rejected");
    return false;
  }
  return true;
}

}  // namespace

bool adapt_on_subset(AdapterState& state, EncoderWeights& enc, const Tensor& tokens,
                     std::span<const int> id_indices, LossBreakdown* out_loss) {
  if (id_indices.empty()) return false;
  Tape tape;
  state.prompt.tokens.requires_grad = true;
  Tensor* feats;
  try {
    feats = forward_features(tape, enc, tokens, &state.prompt);
  } catch (const std::runtime_error&) {
    state.events.push_back("non-finite forward during adaptation; update rejected");
    return false;
  }
  return update_from_features(state, enc, tape, feats, tokens, id_indices, out_loss);
}

BatchOutcome init_first_batch(AdapterState& state, EncoderWeights& enc, const Tensor& tokens) {
  const int n = tokens.rows();
  if (n < 1) throw std::invalid_argument("init_first_batch: empty batch");
  BatchOutcome out;

  // Alg. lines 3-5: raw features, raw-score split
  ForwardResult raw = predict(enc, tokens, nullptr);
  out.split = state.config.use_split
                  ? split_batch(raw.features, enc.head_w,
                                state.config.small_batch_buffer ? &state.buffer : nullptr,
                                state.config.buffer_batch_limit)
                  : whole_batch_id(n);

  out.final_logits = raw.logits;  // likely-ID rows keep the raw-model logits
  out.predicted = argmax_rows(raw.logits);

  if (out.split.id_indices.empty()) {
    state.events.push_back("first batch produced no ID samples; refinement skipped");
  } else {
    const Tensor id_tokens = gather_sample_rows(tokens, out.split.id_indices);
    Tensor raw_id_feats = gather_sample_rows(raw.features, out.split.id_indices);
    const double beta = state.config.effective_beta();
    for (int it = 0; it < state.config.init_iters; ++it) {
      Tape tape;
      state.prompt.tokens.requires_grad = true;
      Tensor* feats_p;
      try {
        feats_p = forward_features(tape, enc, id_tokens, &state.prompt);
      } catch (const std::runtime_error&) {
        state.events.push_back("non-finite forward in first-batch refinement; stopped");
        out.update_rejected = true;
        break;
      }
      LossBreakdown lb = doco_loss(tape, feats_p, raw_id_feats, state.source_stats, beta);
      out.loss = lb;
      if (!std::isfinite(lb.total)) {
        state.events.push_back("non-finite loss in first-batch refinement; stopped");
        out.update_rejected = true;
        break;
      }
      state.prompt.tokens.zero_grad();
      tape.backward(lb.total_node);
      Tensor* group[1] = {&state.prompt.tokens};
      if (!state.optimizer.step(group)) {
        state.events.push_back("non-finite gradient in first-batch refinement; stopped");
        out.update_rejected = true;
        break;
      }
      out.update_applied = true;
    }
  }

  // Alg. line 11: likely-OOD predicted with the refined prompt p_2
  if (!out.split.ood_indices.empty() && !out.split.id_indices.empty()) {
    const Tensor ood_tokens = gather_sample_rows(tokens, out.split.ood_indices);
    ForwardResult prop = predict(enc, ood_tokens, &state.prompt);
    place_rows(out.final_logits, prop.logits, out.split.ood_indices);
    const std::vector<int> preds = argmax_rows(prop.logits);
    for (size_t i = 0; i < out.split.ood_indices.size(); ++i)
      out.predicted[static_cast<size_t>(out.split.ood_indices[i])] = preds[i];
  }
  if (out.update_rejected) ++state.rejected_batches;
  state.step_count = 1;
  return out;
}

BatchOutcome step_batch(AdapterState& state, EncoderWeights& enc, const Tensor& tokens) {
  const int n = tokens.rows();
  if (n < 1) throw std::invalid_argument("step_batch: empty batch");
  if (state.step_count < 1) throw std::logic_error("step_batch: init_first_batch must run first");
  BatchOutcome out;

  Tape tape;
  state.prompt.tokens.requires_grad = true;
  Tensor* feats = nullptr;
  try {
    feats = forward_features(tape, enc, tokens, &state.prompt);
  } catch (const std::runtime_error&) {
    // keep the stream alive: predict this batch with the raw model, no update
    state.events.push_back("non-finite prompted forward at step " + std::to_string(state.step_count + 1) +
                           "; batch predicted raw, update skipped");
    ForwardResult raw = predict(enc, tokens, nullptr);
    out.final_logits = raw.logits;
    out.predicted = argmax_rows(raw.logits);
    out.split = whole_batch_id(n);
    out.update_rejected = true;
    ++state.rejected_batches;
    ++state.step_count;
    return out;
  }
  Tensor* logits_t = forward_logits(tape, enc, feats);

  out.split = state.config.use_split
                  ? split_batch(*feats, enc.head_w, state.config.small_batch_buffer ? &state.buffer : nullptr,
                                state.config.buffer_batch_limit)
                  : whole_batch_id(n);

  out.final_logits = *logits_t;  // p_t logits; likely-OOD rows overwritten below
  out.predicted = argmax_rows(*logits_t);

  if (!out.split.id_indices.empty()) {
    const bool ok =
        update_from_features(state, enc, tape, feats, tokens, out.split.id_indices, &out.loss);
    out.update_applied = ok;
    out.update_rejected = !ok;
    if (!ok) ++state.rejected_batches;
  } else {
    state.events.push_back("no ID samples at step " + std::to_string(state.step_count + 1) +
                           "; adaptation skipped");
  }

  if (!out.split.ood_indices.empty() && state.config.use_propagate) {
    const Tensor ood_tokens = gather_sample_rows(tokens, out.split.ood_indices);
    ForwardResult prop = predict(enc, ood_tokens, &state.prompt);  // p_{t+1}
    place_rows(out.final_logits, prop.logits, out.split.ood_indices);
    const std::vector<int> preds = argmax_rows(prop.logits);
    for (size_t i = 0; i < out.split.ood_indices.size(); ++i)
      out.predicted[static_cast<size_t>(out.split.ood_indices[i])] = preds[i];
  }
  ++state.step_count;
  return out;
}

namespace {

BatchRecord evaluate_batch(const BatchOutcome& out, const StreamBatch& sb, int batch_index, bool with_loss) {
  BatchRecord rec;
  rec.batch_index = batch_index;
  rec.domain_index = sb.domain_index;
  rec.n_id_assigned = static_cast<int>(out.split.id_indices.size());
  rec.n_ood_assigned = static_cast<int>(out.split.ood_indices.size());

  int tp = 0;
  for (int i : out.split.id_indices) tp += sb.is_ood[static_cast<size_t>(i)] ? 0 : 1;
  int true_id = 0;
  for (uint8_t o : sb.is_ood) true_id += o ? 0 : 1;
  rec.split_precision = rec.n_id_assigned > 0 ? static_cast<double>(tp) / rec.n_id_assigned : kNan;
  rec.split_recall = true_id > 0 ? static_cast<double>(tp) / true_id : kNan;

  int correct = 0;
  for (size_t i = 0; i < sb.labels.size(); ++i)
    if (!sb.is_ood[i] && out.predicted[i] == sb.labels[i]) ++correct;
  rec.acc_batch = true_id > 0 ? static_cast<double>(correct) / true_id : kNan;

  if (with_loss && out.update_applied) {
    rec.loss_stat = out.loss.stat;
    rec.loss_reg = out.loss.reg;
  } else {
    rec.loss_stat = kNan;
    rec.loss_reg = kNan;
  }
  return rec;
}

void record_samples(RunRecord& rec, const BatchOutcome& out, const StreamBatch& sb, int batch_index) {
  const int n = static_cast<int>(sb.labels.size());
  const int c = out.final_logits.cols();
  std::vector<uint8_t> assigned_ood(static_cast<size_t>(n), 0);
  for (int i : out.split.ood_indices) assigned_ood[static_cast<size_t>(i)] = 1;
  for (int i = 0; i < n; ++i) {
    SampleRecord s;
    s.batch_index = batch_index;
    s.domain_index = sb.domain_index;
    s.predicted = out.predicted[static_cast<size_t>(i)];
    s.assigned_ood = assigned_ood[static_cast<size_t>(i)] != 0;
    s.logits.assign(out.final_logits.data.begin() + static_cast<int64_t>(i) * c,
                    out.final_logits.data.begin() + static_cast<int64_t>(i + 1) * c);
    s.true_label = sb.labels[static_cast<size_t>(i)];
    s.true_ood = sb.is_ood[static_cast<size_t>(i)] != 0;
    rec.samples.push_back(std::move(s));
  }
}

double raw_split_precision_of(EncoderWeights& enc, const StreamBatch& sb) {
  ForwardResult raw = forward_plain(enc, sb.tokens, nullptr);
  SplitResult split = split_batch(raw.features, enc.head_w);
  if (split.id_indices.empty()) return kNan;
  int tp = 0;
  for (int i : split.id_indices) tp += sb.is_ood[static_cast<size_t>(i)] ? 0 : 1;
  return static_cast<double>(tp) / static_cast<double>(split.id_indices.size());
}

}  // namespace

RunRecord run_stream(AdapterState& state, EncoderWeights& enc, std::span<const StreamBatch> stream) {
  if (stream.empty()) throw std::invalid_argument("run_stream: empty stream");
  RunRecord rec;
  int prev_domain = -1;
  for (size_t t = 0; t < stream.size(); ++t) {
    const StreamBatch& sb = stream[t];
    const int batch_index = static_cast<int>(t) + 1;

    if (sb.domain_index != prev_domain) {
      // first batch of a new domain: pre-update statistical misalignment of
      // the carried prompt vs the no-prompt path, whole batch
      ForwardResult prompted = predict(enc, sb.tokens, &state.prompt);
      ForwardResult raw = predict(enc, sb.tokens, nullptr);
      ProbeEntry probe;
      probe.domain_index = sb.domain_index;
      probe.batch_index = batch_index;
      probe.lstat_prompt = stat_loss(prompted.features, state.source_stats);
      probe.lstat_raw = stat_loss(raw.features, state.source_stats);
      rec.probes.push_back(probe);
      prev_domain = sb.domain_index;
    }

    rec.raw_split_precision.push_back(state.config.record_raw_split ? raw_split_precision_of(enc, sb) : kNan);

    BatchOutcome out = (t == 0) ? init_first_batch(state, enc, sb.tokens) : step_batch(state, enc, sb.tokens);
    rec.batches.push_back(evaluate_batch(out, sb, batch_index, true));
    record_samples(rec, out, sb, batch_index);
  }
  rec.rejected_batches = state.rejected_batches;
  rec.events = state.events;
  return rec;
}

RunRecord run_source_only(EncoderWeights& enc, std::span<const StreamBatch> stream) {
  if (stream.empty()) throw std::invalid_argument("run_source_only: empty stream");
  RunRecord rec;
  for (size_t t = 0; t < stream.size(); ++t) {
    const StreamBatch& sb = stream[t];
    const int batch_index = static_cast<int>(t) + 1;
    ForwardResult raw = forward_plain(enc, sb.tokens, nullptr);
    BatchOutcome out;
    out.final_logits = raw.logits;
    out.predicted = argmax_rows(raw.logits);
    out.split = whole_batch_id(sb.tokens.rows());
    BatchRecord br = evaluate_batch(out, sb, batch_index, false);
    br.split_precision = kNan;
    br.split_recall = kNan;
    rec.batches.push_back(br);
    record_samples(rec, out, sb, batch_index);
    rec.raw_split_precision.push_back(kNan);
  }
  return rec;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string run_record_csv(const RunRecord& rec) {
  std::string s = "batch_index,domain_index,n_id_assigned,n_ood_assigned,split_precision,split_recall,loss_stat,loss_reg,acc_batch\n";
  for (const auto& b : rec.batches) {
    s += std::to_string(b.batch_index) + "," + std::to_string(b.domain_index) + "," +
         std::to_string(b.n_id_assigned) + "," + std::to_string(b.n_ood_assigned) + "," +
         fmt_double(b.split_precision) + "," + fmt_double(b.split_recall) + "," + fmt_double(b.loss_stat) + "," +
         fmt_double(b.loss_reg) + "," + fmt_double(b.acc_batch) + "\n";
  }
  return s;
}

std::string probes_csv(const RunRecord& rec) {
  std::string s = "domain_index,batch_index,lstat_prompt,lstat_raw\n";
  for (const auto& p : rec.probes) {
    s += std::to_string(p.domain_index) + "," + std::to_string(p.batch_index) + "," + fmt_double(p.lstat_prompt) +
         "," + fmt_double(p.lstat_raw) + "\n";
  }
  return s;
}

}  // namespace doco
