#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace doco::ad {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);

/// Dense multi-dimensional array of doubles. Gradients accumulate into
/// `grad` (lazily allocated) only when `requires_grad` is set; on tensors
/// produced by tape ops the flag is derived from the inputs.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until touched; same length as data otherwise

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rows() const;
  int cols() const;
  bool is_scalar() const { return data.size() == 1; }
  double scalar() const;
  bool all_finite() const;

  void ensure_grad();
  void zero_grad() { grad.clear(); }
};

/// Reverse-mode tape. Owns every intermediate tensor its ops produce; leaf
/// tensors (weights, prompt tokens) live outside and are passed by pointer
/// and must outlive the tape. Nodes are recorded in topological order and
/// backward replays them in exact reverse order, so gradients are
/// bit-reproducible for identical inputs. Single-threaded by construction.
class Tape {
 public:
  Tensor* constant(Shape shape, std::vector<double> values);
  Tensor* constant(const Tensor& t);
  Tensor* zeros(Shape shape);

  Tensor* matmul(Tensor* a, Tensor* b);
  Tensor* transpose(Tensor* a);

  Tensor* add(Tensor* a, Tensor* b);
  Tensor* sub(Tensor* a, Tensor* b);
  Tensor* mul(Tensor* a, Tensor* b);
  Tensor* div(Tensor* a, Tensor* b);
  Tensor* scale(Tensor* a, double c);

  Tensor* gelu(Tensor* a);
  Tensor* exp(Tensor* a);
  Tensor* log(Tensor* a);
  Tensor* sqrt(Tensor* a);

  /// Softmax over the last axis (1-D vector or 2-D rows), max-stabilized.
  /// Throws on non-finite input.
  Tensor* softmax(Tensor* a);
  Tensor* layernorm(Tensor* x, Tensor* gamma, Tensor* beta, double eps = 1e-5);
  Tensor* logsumexp(Tensor* a);

  Tensor* sum(Tensor* a);
  Tensor* mean_rows(Tensor* a);
  /// L2 norm over all entries; gradient defined as 0 at the origin.
  Tensor* norm2(Tensor* a);
  Tensor* select(Tensor* a, int64_t flat_index);

  /// Same data, new shape (element count must match).
  Tensor* reshape(Tensor* a, Shape shape);

  Tensor* slice_rows(Tensor* a, int start, int len);
  Tensor* slice_cols(Tensor* a, int start, int len);
  Tensor* concat_rows(std::span<Tensor* const> parts);
  Tensor* concat_cols(std::span<Tensor* const> parts);
  Tensor* gather_rows(Tensor* a, std::span<const int> indices);

  /// Rows scaled to unit L2 norm; zero rows map to zero rows and carry zero
  /// gradient (the degenerate-cosine rule).
  Tensor* row_normalize(Tensor* a);
  /// Copy of a square matrix with the diagonal pinned to exactly 1.
  Tensor* set_diag_one(Tensor* a);

  void backward(Tensor* loss);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor* out;
    std::function<void()> back;
  };

  Tensor* alloc(Shape shape);
  void record(Tensor* out, std::function<void()> back);

  std::deque<Tensor> owned_;
  std::vector<Node> nodes_;
};

int argmax(std::span<const double> v);

}  // namespace doco::ad
