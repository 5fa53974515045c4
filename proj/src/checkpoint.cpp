#include "doco/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace doco {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format stores raw little-endian doubles");

const ad::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("checkpoint: missing tensor " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f << "DOCO-CKPT 1\n";
  for (const auto& [k, v] : ckpt.meta) f << "meta " << k << " " << v << "\n";
  for (const auto& [name, t] : ckpt.tensors) {
    f << "tensor " << name;
    for (int d : t.shape) f << " " << d;
    f << "\n";
  }
  f << "END\n";
  for (const auto& [name, t] : ckpt.tensors)
    f.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  Checkpoint ckpt;
  std::string line;
  if (!std::getline(f, line) || line != "DOCO-CKPT 1")
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::vector<std::pair<std::string, ad::Shape>> headers;
  while (std::getline(f, line)) {
    if (line == "END") break;
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "meta") {
      std::string key;
      is >> key;
      std::string value;
      std::getline(is, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name;
      is >> name;
      ad::Shape shape;
      int d;
      while (is >> d) shape.push_back(d);
      headers.emplace_back(name, shape);
    } else {
      throw std::runtime_error("checkpoint: unexpected header line: " + line);
    }
  }
  for (auto& [name, shape] : headers) {
    ad::Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated tensor data in " + path);
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  return ckpt;
}

void save_encoder(const std::string& path, EncoderWeights& weights) {
  Checkpoint ckpt;
  const auto& c = weights.config;
  ckpt.meta["depth"] = std::to_string(c.depth);
  ckpt.meta["d_model"] = std::to_string(c.d_model);
  ckpt.meta["n_heads"] = std::to_string(c.n_heads);
  ckpt.meta["n_patches"] = std::to_string(c.n_patches);
  ckpt.meta["mlp_ratio"] = std::to_string(c.mlp_ratio);
  ckpt.meta["n_classes"] = std::to_string(c.n_classes);
  ckpt.meta["d_in"] = std::to_string(c.d_in);
  for (auto& [name, t] : weights.named_parameters()) ckpt.tensors.emplace_back(name, *t);
  save_checkpoint(path, ckpt);
}

EncoderWeights load_encoder(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  EncoderConfig c;
  c.depth = std::stoi(ckpt.meta.at("depth"));
  c.d_model = std::stoi(ckpt.meta.at("d_model"));
  c.n_heads = std::stoi(ckpt.meta.at("n_heads"));
  c.n_patches = std::stoi(ckpt.meta.at("n_patches"));
  c.mlp_ratio = std::stoi(ckpt.meta.at("mlp_ratio"));
  c.n_classes = std::stoi(ckpt.meta.at("n_classes"));
  c.d_in = std::stoi(ckpt.meta.at("d_in"));
  Rng rng(0);
  EncoderWeights w = init_encoder(c, rng);
  for (auto& [name, t] : w.named_parameters()) {
    const ad::Tensor& loaded = ckpt.tensor(name);
    if (loaded.shape != t->shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    t->data = loaded.data;
    t->requires_grad = false;
    t->zero_grad();
  }
  return w;
}

void save_source_stats(const std::string& path, const SourceStats& stats) {
  Checkpoint ckpt;
  ckpt.meta["std"] = "population";
  ckpt.meta["n_source"] = std::to_string(stats.n_source);
  ckpt.tensors.emplace_back("mu", ad::Tensor({static_cast<int>(stats.mu.size())}, stats.mu));
  ckpt.tensors.emplace_back("sigma", ad::Tensor({static_cast<int>(stats.sigma.size())}, stats.sigma));
  save_checkpoint(path, ckpt);
}

SourceStats load_source_stats(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  SourceStats stats;
  stats.mu = ckpt.tensor("mu").data;
  stats.sigma = ckpt.tensor("sigma").data;
  stats.n_source = std::stoi(ckpt.meta.at("n_source"));
  return stats;
}

}  // namespace doco
