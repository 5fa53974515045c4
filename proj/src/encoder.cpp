#include "doco/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace doco {

using ad::Tape;
using ad::Tensor;

void EncoderConfig::validate() const {
  if (depth < 1 || d_model < 1 || n_heads < 1 || n_patches < 1 || mlp_ratio < 1 || n_classes < 1 || d_in < 1)
    throw std::invalid_argument("encoder config: all counts must be >= 1");
  if (d_model % n_heads != 0) throw std::invalid_argument("encoder config: d_model must be divisible by n_heads");
}

namespace {

Tensor xavier(int fan_in, int fan_out, ad::Shape shape, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-a, a);
  return t;
}

}  // namespace

PromptState init_prompt(int prompt_len, int d_model, Rng& rng) {
  PromptState p;
  if (prompt_len == 0) {
    p.tokens = Tensor({0, d_model});
    return p;
  }
  p.tokens = xavier(prompt_len, d_model, {prompt_len, d_model}, rng);
  return p;
}

EncoderWeights init_encoder(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const int d = config.d_model;
  EncoderWeights w;
  w.config = config;
  w.patch_proj_w = xavier(config.d_in, d, {config.d_in, d}, rng);
  w.patch_proj_b = Tensor({d});
  w.cls_token = Tensor({1, d});
  for (auto& v : w.cls_token.data) v = 0.02 * rng.normal();
  w.pos_embed = Tensor({1 + config.n_patches, d});
  for (auto& v : w.pos_embed.data) v = 0.02 * rng.normal();
  for (int b = 0; b < config.depth; ++b) {
    EncoderWeights::Block blk;
    blk.ln1_g = Tensor({d}, 1.0);
    blk.ln1_b = Tensor({d});
    blk.wq = xavier(d, d, {d, d}, rng);
    blk.wk = xavier(d, d, {d, d}, rng);
    blk.wv = xavier(d, d, {d, d}, rng);
    blk.wo = xavier(d, d, {d, d}, rng);
    blk.bq = Tensor({d});
    blk.bk = Tensor({d});
    blk.bv = Tensor({d});
    blk.bo = Tensor({d});
    blk.ln2_g = Tensor({d}, 1.0);
    blk.ln2_b = Tensor({d});
    const int h = d * config.mlp_ratio;
    blk.mlp_w1 = xavier(d, h, {d, h}, rng);
    blk.mlp_b1 = Tensor({h});
    blk.mlp_w2 = xavier(h, d, {h, d}, rng);
    blk.mlp_b2 = Tensor({d});
    w.blocks.push_back(std::move(blk));
  }
  w.ln_f_g = Tensor({d}, 1.0);
  w.ln_f_b = Tensor({d});
  w.head_w = xavier(d, config.n_classes, {config.n_classes, d}, rng);
  w.head_b = Tensor({config.n_classes});
  return w;
}

std::vector<std::pair<std::string, Tensor*>> EncoderWeights::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("patch_proj_w", &patch_proj_w);
  out.emplace_back("patch_proj_b", &patch_proj_b);
  out.emplace_back("cls_token", &cls_token);
  out.emplace_back("pos_embed", &pos_embed);
  for (size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    const std::string p = "block" + std::to_string(i) + ".";
    out.emplace_back(p + "ln1_g", &b.ln1_g);
    out.emplace_back(p + "ln1_b", &b.ln1_b);
    out.emplace_back(p + "wq", &b.wq);
    out.emplace_back(p + "wk", &b.wk);
    out.emplace_back(p + "wv", &b.wv);
    out.emplace_back(p + "wo", &b.wo);
    out.emplace_back(p + "bq", &b.bq);
    out.emplace_back(p + "bk", &b.bk);
    out.emplace_back(p + "bv", &b.bv);
    out.emplace_back(p + "bo", &b.bo);
    out.emplace_back(p + "ln2_g", &b.ln2_g);
    out.emplace_back(p + "ln2_b", &b.ln2_b);
    out.emplace_back(p + "mlp_w1", &b.mlp_w1);
    out.emplace_back(p + "mlp_b1", &b.mlp_b1);
    out.emplace_back(p + "mlp_w2", &b.mlp_w2);
    out.emplace_back(p + "mlp_b2", &b.mlp_b2);
  }
  out.emplace_back("ln_f_g", &ln_f_g);
  out.emplace_back("ln_f_b", &ln_f_b);
  out.emplace_back("head_w", &head_w);
  out.emplace_back("head_b", &head_b);
  return out;
}

std::vector<Tensor*> EncoderWeights::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void EncoderWeights::set_requires_grad(bool flag) {
  for (Tensor* t : parameters()) {
    t->requires_grad = flag;
    t->zero_grad();
  }
}

double EncoderWeights::abs_checksum() const {
  double s = 0.0;
  for (Tensor* t : const_cast<EncoderWeights*>(this)->parameters())
    for (double v : t->data) s += std::fabs(v);
  return s;
}

namespace {

Tensor* block_forward(Tape& tape, EncoderWeights::Block& b, Tensor* x, int n_heads) {
  const int d = x->cols();
  const int dh = d / n_heads;
  Tensor* h = tape.layernorm(x, &b.ln1_g, &b.ln1_b);
  Tensor* q = tape.add(tape.matmul(h, &b.wq), &b.bq);
  Tensor* k = tape.add(tape.matmul(h, &b.wk), &b.bk);
  Tensor* v = tape.add(tape.matmul(h, &b.wv), &b.bv);
  std::vector<Tensor*> heads;
  heads.reserve(n_heads);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int hd = 0; hd < n_heads; ++hd) {
    Tensor* qh = tape.slice_cols(q, hd * dh, dh);
    Tensor* kh = tape.slice_cols(k, hd * dh, dh);
    Tensor* vh = tape.slice_cols(v, hd * dh, dh);
    Tensor* scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_scale);
    Tensor* attn = tape.softmax(scores);
    heads.push_back(tape.matmul(attn, vh));
  }
  Tensor* merged = tape.concat_cols(heads);
  Tensor* o = tape.add(tape.matmul(merged, &b.wo), &b.bo);
  x = tape.add(x, o);
  Tensor* h2 = tape.layernorm(x, &b.ln2_g, &b.ln2_b);
  Tensor* m = tape.add(tape.matmul(h2, &b.mlp_w1), &b.mlp_b1);
  m = tape.gelu(m);
  m = tape.add(tape.matmul(m, &b.mlp_w2), &b.mlp_b2);
  return tape.add(x, m);
}

}  // namespace

ad::Tensor* forward_features(Tape& tape, EncoderWeights& w, const Tensor& batch_tokens, PromptState* prompt) {
  const auto& cfg = w.config;
  if (batch_tokens.shape.size() != 2 || batch_tokens.cols() != cfg.n_patches * cfg.d_in)
    throw std::invalid_argument("forward_features: batch must be [n, n_patches*d_in]");
  const int n = batch_tokens.rows();
  if (n < 1) throw std::invalid_argument("forward_features: empty batch");
  if (prompt && prompt->length() > 0 && prompt->tokens.cols() != cfg.d_model)
    throw std::invalid_argument("forward_features: prompt width does not match d_model");

  Tensor* pos_cls = tape.slice_rows(&w.pos_embed, 0, 1);
  Tensor* pos_patch = tape.slice_rows(&w.pos_embed, 1, cfg.n_patches);
  Tensor* cls_tok = tape.add(&w.cls_token, pos_cls);

  std::vector<Tensor*> feature_rows;
  feature_rows.reserve(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> grid(batch_tokens.data.begin() + static_cast<int64_t>(i) * batch_tokens.cols(),
                             batch_tokens.data.begin() + static_cast<int64_t>(i + 1) * batch_tokens.cols());
    Tensor* x = tape.constant({cfg.n_patches, cfg.d_in}, std::move(grid));
    Tensor* patches = tape.add(tape.matmul(x, &w.patch_proj_w), &w.patch_proj_b);
    patches = tape.add(patches, pos_patch);

    std::vector<Tensor*> seq_parts;
    seq_parts.push_back(cls_tok);
    if (prompt && prompt->length() > 0) seq_parts.push_back(&prompt->tokens);
    seq_parts.push_back(patches);
    Tensor* seq = tape.concat_rows(seq_parts);

    for (auto& blk : w.blocks) seq = block_forward(tape, blk, seq, cfg.n_heads);
    seq = tape.layernorm(seq, &w.ln_f_g, &w.ln_f_b);
    feature_rows.push_back(tape.slice_rows(seq, 0, 1));
  }
  Tensor* features = tape.concat_rows(feature_rows);
  if (!features->all_finite()) throw std::runtime_error("forward_features: non-finite activations");
  return features;
}

ad::Tensor* forward_logits(Tape& tape, EncoderWeights& w, Tensor* features) {
  if (features->cols() != w.config.d_model) throw std::invalid_argument("forward_logits: feature width mismatch");
  return tape.add(tape.matmul(features, tape.transpose(&w.head_w)), &w.head_b);
}

ForwardResult forward_plain(EncoderWeights& w, const Tensor& batch_tokens, PromptState* prompt) {
  Tape tape;
  Tensor* f = forward_features(tape, w, batch_tokens, prompt);
  Tensor* l = forward_logits(tape, w, f);
  return ForwardResult{*f, *l};
}

}  // namespace doco
