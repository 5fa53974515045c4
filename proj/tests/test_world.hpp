#pragma once

// Shared desk-size fixture: a small pretrained encoder over a 4-class
// synthetic task, built once per test binary.

#include "doco/adapt.hpp"
#include "doco/synth.hpp"

namespace doco::testing {

inline TaskSpec tiny_task() { return make_task(4, 2, 4, 6, 0.5, 7); }

inline EncoderConfig tiny_encoder_config() {
  EncoderConfig c;
  c.depth = 1;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_patches = 4;
  c.mlp_ratio = 2;
  c.n_classes = 4;
  c.d_in = 6;
  return c;
}

struct TinyWorld {
  TaskSpec task;
  EncoderWeights weights;
  SourceStats stats;
  PretrainLog log;
};

inline TinyWorld& tiny_world() {
  static TinyWorld* world = [] {
    auto* w = new TinyWorld{.task = tiny_task(), .weights = {}, .stats = {}, .log = {}};
    Rng init = Rng(11).substream("encoder-init");
    w->weights = init_encoder(tiny_encoder_config(), init);
    PretrainOptions opts;
    opts.batch_size = 32;
    w->log = pretrain_source(w->task, w->weights, 11, opts);
    w->stats = cache_source_stats(w->weights, w->task, 300, 11);
    return w;
  }();
  return *world;
}

inline StreamConfig tiny_stream_config(double kappa, int batch_size, int batches_per_domain,
                                       std::vector<DomainSpec> domains, uint64_t seed) {
  StreamConfig cfg;
  cfg.kappa = kappa;
  cfg.batch_size = batch_size;
  cfg.batches_per_domain = batches_per_domain;
  cfg.domains = std::move(domains);
  cfg.seed = seed;
  return cfg;
}

}  // namespace doco::testing
