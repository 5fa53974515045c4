#pragma once

#include <string>
#include <vector>

#include "doco/autodiff.hpp"
#include "doco/rng.hpp"

namespace doco {

struct EncoderConfig {
  int depth = 2;
  int d_model = 32;
  int n_heads = 4;
  int n_patches = 16;   // patch tokens per sample
  int mlp_ratio = 2;
  int n_classes = 8;
  int d_in = 16;        // raw token width fed to the patch projection

  void validate() const;
};

/// Learnable prompt tokens, inserted between [CLS] and the patch tokens.
struct PromptState {
  ad::Tensor tokens;  // [L, d_model]

  int length() const { return tokens.shape.empty() ? 0 : tokens.shape[0]; }
};

PromptState init_prompt(int prompt_len, int d_model, Rng& rng);

/// All encoder and head parameters. Frozen after source pretraining: during
/// adaptation every tensor here has requires_grad == false and is recorded on
/// the tape as a constant, so no gradient can ever be written into it.
struct EncoderWeights {
  EncoderConfig config;

  ad::Tensor patch_proj_w;  // [d_in, d]
  ad::Tensor patch_proj_b;  // [d]
  ad::Tensor cls_token;     // [1, d]
  ad::Tensor pos_embed;     // [1 + n_patches, d]; prompts carry no positional term

  struct Block {
    ad::Tensor ln1_g, ln1_b;
    ad::Tensor wq, wk, wv, wo;  // [d, d]
    ad::Tensor bq, bk, bv, bo;  // [d]
    ad::Tensor ln2_g, ln2_b;
    ad::Tensor mlp_w1, mlp_b1;  // [d, d*ratio], [d*ratio]
    ad::Tensor mlp_w2, mlp_b2;  // [d*ratio, d], [d]
  };
  std::vector<Block> blocks;

  ad::Tensor ln_f_g, ln_f_b;
  ad::Tensor head_w;  // [C, d]; rows double as source class prototypes
  ad::Tensor head_b;  // [C]

  std::vector<ad::Tensor*> parameters();
  std::vector<std::pair<std::string, ad::Tensor*>> named_parameters();
  void set_requires_grad(bool flag);
  /// Sum of |w| over every parameter; the freezing invariant compares this
  /// bit-exactly across an adaptation run.
  double abs_checksum() const;
};

EncoderWeights init_encoder(const EncoderConfig& config, Rng& rng);

/// Forward pass over a batch of raw token grids (shape [n, n_patches*d_in],
/// one flattened grid per row). Returns the [CLS] feature per sample,
/// [n, d_model]. With prompt == nullptr this is the raw path phi(x); with a
/// prompt it is phi(x; p) and gradient flows only into the prompt tokens.
/// Throws on non-finite activations.
ad::Tensor* forward_features(ad::Tape& tape, EncoderWeights& w, const ad::Tensor& batch_tokens,
                             PromptState* prompt);

/// logits = features * head_w^T + head_b, [n, C].
ad::Tensor* forward_logits(ad::Tape& tape, EncoderWeights& w, ad::Tensor* features);

/// Convenience non-differentiated forward: features and logits as plain tensors.
struct ForwardResult {
  ad::Tensor features;  // [n, d_model]
  ad::Tensor logits;    // [n, C]
};
ForwardResult forward_plain(EncoderWeights& w, const ad::Tensor& batch_tokens, PromptState* prompt);

}  // namespace doco
