#pragma once

#include <map>
#include <string>
#include <vector>

#include "doco/encoder.hpp"
#include "doco/objective.hpp"

namespace doco {

/// Checkpoint container: a plain-text header (magic line, `meta key value`
/// lines, one `tensor name dim0 dim1 ...` line per tensor, `END`) followed by
/// the tensors' raw 64-bit little-endian floats in header order.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, ad::Tensor>> tensors;  // header order

  const ad::Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

void save_encoder(const std::string& path, EncoderWeights& weights);
EncoderWeights load_encoder(const std::string& path);

/// Source statistics use the same container; the population-std convention is
/// recorded in the header.
void save_source_stats(const std::string& path, const SourceStats& stats);
SourceStats load_source_stats(const std::string& path);

}  // namespace doco
