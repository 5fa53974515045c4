#include "doco/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

namespace doco::ad {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(numel(shape)), fill);
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (static_cast<int64_t>(data.size()) != numel(shape)) {
    throw std::invalid_argument("tensor data length does not match shape");
  }
}

int Tensor::rows() const {
  if (shape.size() != 2) throw std::invalid_argument("rows(): tensor is not 2-D");
  return shape[0];
}

int Tensor::cols() const {
  if (shape.size() != 2) throw std::invalid_argument("cols(): tensor is not 2-D");
  return shape[1];
}

double Tensor::scalar() const {
  if (!is_scalar()) throw std::invalid_argument("scalar(): tensor has more than one element");
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

Tensor* Tape::alloc(Shape shape) {
  owned_.emplace_back(std::move(shape));
  return &owned_.back();
}

void Tape::record(Tensor* out, std::function<void()> back) {
  nodes_.push_back({out, std::move(back)});
}

Tensor* Tape::constant(Shape shape, std::vector<double> values) {
  owned_.emplace_back(std::move(shape), std::move(values));
  return &owned_.back();
}

Tensor* Tape::constant(const Tensor& t) {
  owned_.emplace_back(t.shape, t.data);
  return &owned_.back();
}

Tensor* Tape::zeros(Shape shape) { return alloc(std::move(shape)); }

Tensor* Tape::matmul(Tensor* a, Tensor* b) {
  require(a->shape.size() == 2 && b->shape.size() == 2, "matmul: operands must be 2-D");
  const int m = a->rows(), k = a->cols(), n = b->cols();
  require(b->rows() == k, "matmul: inner dimensions disagree");
  Tensor* c = alloc({m, n});
  const double* pa = a->data.data();
  const double* pb = b->data.data();
  double* pc = c->data.data();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      const double* brow = pb + l * n;
      double* crow = pc + i * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  c->requires_grad = a->requires_grad || b->requires_grad;
  if (c->requires_grad) {
    record(c, [a, b, c, m, k, n] {
      const double* dc = c->grad.data();
      if (a->requires_grad) {
        a->ensure_grad();
        double* da = a->grad.data();
        const double* pb2 = b->data.data();
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            const double g = dc[i * n + j];
            const double* brow = pb2 + j;  // column j of B, stride n
            for (int l = 0; l < k; ++l) da[i * k + l] += g * brow[l * n];
          }
        }
      }
      if (b->requires_grad) {
        b->ensure_grad();
        double* db = b->grad.data();
        const double* pa2 = a->data.data();
        for (int l = 0; l < k; ++l) {
          for (int i = 0; i < m; ++i) {
            const double av = pa2[i * k + l];
            const double* dcrow = dc + i * n;
            double* dbrow = db + l * n;
            for (int j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
          }
        }
      }
    });
  }
  return c;
}

Tensor* Tape::transpose(Tensor* a) {
  require(a->shape.size() == 2, "transpose: operand must be 2-D");
  const int m = a->rows(), n = a->cols();
  Tensor* t = alloc({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) t->data[j * m + i] = a->data[i * n + j];
  t->requires_grad = a->requires_grad;
  if (t->requires_grad) {
    record(t, [a, t, m, n] {
      a->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) a->grad[i * n + j] += t->grad[j * m + i];
    });
  }
  return t;
}

// Binary elementwise broadcasting: equal shapes, or b a vector matching a's
// last dimension (broadcast over rows), or b a scalar.
namespace {
enum class Bcast { Same, RowVec, Scalar };

Bcast bcast_mode(const Tensor* a, const Tensor* b) {
  if (same_shape(a->shape, b->shape)) return Bcast::Same;
  if (b->is_scalar()) return Bcast::Scalar;
  if (a->shape.size() == 2 && b->shape.size() == 1 && b->shape[0] == a->shape[1]) return Bcast::RowVec;
  throw std::invalid_argument("elementwise: shapes are not broadcast-compatible");
}
}  // namespace

#define DOCO_BINARY_BODY(FWD_EXPR, DA_EXPR, DB_EXPR)                                           \
  const Bcast mode = bcast_mode(a, b);                                                         \
  Tensor* c = alloc(a->shape);                                                                 \
  const int64_t n = a->size();                                                                 \
  const int cols = (mode == Bcast::RowVec) ? a->shape[1] : 0;                                  \
  for (int64_t i = 0; i < n; ++i) {                                                            \
    const double x = a->data[i];                                                               \
    const double y = (mode == Bcast::Same) ? b->data[i]                                        \
                     : (mode == Bcast::Scalar) ? b->data[0]                                    \
                                               : b->data[i % cols];                            \
    c->data[i] = (FWD_EXPR);                                                                   \
  }                                                                                            \
  c->requires_grad = a->requires_grad || b->requires_grad;                                     \
  if (c->requires_grad) {                                                                      \
    record(c, [a, b, c, mode, n, cols] {                                                       \
      for (int64_t i = 0; i < n; ++i) {                                                        \
        const double x = a->data[i];                                                           \
        const int64_t bi = (mode == Bcast::Same) ? i : (mode == Bcast::Scalar) ? 0 : i % cols; \
        const double y = b->data[bi];                                                          \
        const double g = c->grad[i];                                                           \
        (void)x;                                                                               \
        (void)y;                                                                               \
        if (a->requires_grad) {                                                                \
          a->ensure_grad();                                                                    \
          a->grad[i] += (DA_EXPR);                                                             \
        }                                                                                      \
        if (b->requires_grad) {                                                                \
          b->ensure_grad();                                                                    \
          b->grad[bi] += (DB_EXPR);                                                            \
        }                                                                                      \
      }                                                                                        \
    });                                                                                        \
  }                                                                                            \
  return c;

Tensor* Tape::add(Tensor* a, Tensor* b) { DOCO_BINARY_BODY(x + y, g, g) }

Tensor* Tape::sub(Tensor* a, Tensor* b) { DOCO_BINARY_BODY(x - y, g, -g) }

Tensor* Tape::mul(Tensor* a, Tensor* b) { DOCO_BINARY_BODY(x * y, g * y, g * x) }

// Division by zero is not trapped here: the non-finite result propagates and
// is rejected by the adaptation loop's guard.
Tensor* Tape::div(Tensor* a, Tensor* b) { DOCO_BINARY_BODY(x / y, g / y, -g * x / (y * y)) }

#undef DOCO_BINARY_BODY

Tensor* Tape::scale(Tensor* a, double c) {
  Tensor* out = alloc(a->shape);
  const int64_t n = a->size();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * c;
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, c, n] {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * c;
    });
  }
  return out;
}

Tensor* Tape::gelu(Tensor* a) {
  Tensor* out = alloc(a->shape);
  const int64_t n = a->size();
  constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  for (int64_t i = 0; i < n; ++i) {
    const double x = a->data[i];
    out->data[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, n, inv_sqrt2] {
      a->ensure_grad();
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (int64_t i = 0; i < n; ++i) {
        const double x = a->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        a->grad[i] += out->grad[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

Tensor* Tape::exp(Tensor* a) {
  Tensor* out = alloc(a->shape);
  const int64_t n = a->size();
  for (int64_t i = 0; i < n; ++i) out->data[i] = std::exp(a->data[i]);
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, n] {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * out->data[i];
    });
  }
  return out;
}

Tensor* Tape::log(Tensor* a) {
  Tensor* out = alloc(a->shape);
  const int64_t n = a->size();
  for (int64_t i = 0; i < n; ++i) out->data[i] = std::log(a->data[i]);
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, n] {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] / a->data[i];
    });
  }
  return out;
}

Tensor* Tape::sqrt(Tensor* a) {
  Tensor* out = alloc(a->shape);
  const int64_t n = a->size();
  for (int64_t i = 0; i < n; ++i) out->data[i] = std::sqrt(a->data[i]);
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, n] {
      a->ensure_grad();
      // subgradient 0 at the origin, so sqrt of an exactly-zero variance
      // (constant batch) does not poison the step
      for (int64_t i = 0; i < n; ++i) {
        if (out->data[i] > 0.0) a->grad[i] += out->grad[i] * 0.5 / out->data[i];
      }
    });
  }
  return out;
}

Tensor* Tape::softmax(Tensor* a) {
  require(a->shape.size() == 1 || a->shape.size() == 2, "softmax: operand must be 1-D or 2-D");
  if (!a->all_finite()) throw std::runtime_error("softmax: non-finite input");
  const int rows = (a->shape.size() == 2) ? a->shape[0] : 1;
  const int n = (a->shape.size() == 2) ? a->shape[1] : a->shape[0];
  require(n >= 1, "softmax: empty input");
  Tensor* out = alloc(a->shape);
  for (int r = 0; r < rows; ++r) {
    const double* x = a->data.data() + static_cast<int64_t>(r) * n;
    double* y = out->data.data() + static_cast<int64_t>(r) * n;
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      denom += y[i];
    }
    for (int i = 0; i < n; ++i) y[i] /= denom;
  }
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, rows, n] {
      a->ensure_grad();
      for (int r = 0; r < rows; ++r) {
        const double* y = out->data.data() + static_cast<int64_t>(r) * n;
        const double* dy = out->grad.data() + static_cast<int64_t>(r) * n;
        double* dx = a->grad.data() + static_cast<int64_t>(r) * n;
        double dot = 0.0;
        for (int i = 0; i < n; ++i) dot += dy[i] * y[i];
        for (int i = 0; i < n; ++i) dx[i] += y[i] * (dy[i] - dot);
      }
    });
  }
  return out;
}

Tensor* Tape::layernorm(Tensor* x, Tensor* gamma, Tensor* beta, double eps) {
  require(x->shape.size() == 2, "layernorm: input must be 2-D");
  const int n = x->rows(), d = x->cols();
  require(d >= 2, "layernorm: need at least two features per row");
  require(gamma->shape == Shape{d} && beta->shape == Shape{d}, "layernorm: gamma/beta must be length-d");
  Tensor* out = alloc({n, d});
  // cache normalized rows and inverse stddevs for the backward rule
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (int r = 0; r < n; ++r) {
    const double* row = x->data.data() + static_cast<int64_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    for (int j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * istd;
      (*xhat)[static_cast<size_t>(r) * d + j] = h;
      out->data[static_cast<size_t>(r) * d + j] = h * gamma->data[j] + beta->data[j];
    }
  }
  out->requires_grad = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  if (out->requires_grad) {
    record(out, [x, gamma, beta, out, xhat, inv_std, n, d] {
      for (int r = 0; r < n; ++r) {
        const double* dy = out->grad.data() + static_cast<int64_t>(r) * d;
        const double* h = xhat->data() + static_cast<int64_t>(r) * d;
        if (gamma->requires_grad) {
          gamma->ensure_grad();
          for (int j = 0; j < d; ++j) gamma->grad[j] += dy[j] * h[j];
        }
        if (beta->requires_grad) {
          beta->ensure_grad();
          for (int j = 0; j < d; ++j) beta->grad[j] += dy[j];
        }
        if (x->requires_grad) {
          x->ensure_grad();
          double* dx = x->grad.data() + static_cast<int64_t>(r) * d;
          double sum_g = 0.0, sum_gh = 0.0;
          for (int j = 0; j < d; ++j) {
            const double gj = dy[j] * gamma->data[j];
            sum_g += gj;
            sum_gh += gj * h[j];
          }
          const double istd = (*inv_std)[r];
          for (int j = 0; j < d; ++j) {
            const double gj = dy[j] * gamma->data[j];
            dx[j] += istd * (gj - sum_g / d - h[j] * sum_gh / d);
          }
        }
      }
    });
  }
  return out;
}

Tensor* Tape::logsumexp(Tensor* a) {
  require(a->shape.size() == 1 && a->shape[0] >= 1, "logsumexp: operand must be a nonempty vector");
  const int n = a->shape[0];
  double mx = a->data[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, a->data[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(a->data[i] - mx);
  Tensor* out = constant({1}, {mx + std::log(s)});
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, mx, s, n] {
      a->ensure_grad();
      const double g = out->grad[0];
      for (int i = 0; i < n; ++i) a->grad[i] += g * std::exp(a->data[i] - mx) / s;
    });
  }
  return out;
}

Tensor* Tape::sum(Tensor* a) {
  double s = 0.0;
  for (double v : a->data) s += v;
  Tensor* out = constant({1}, {s});
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out] {
      a->ensure_grad();
      const double g = out->grad[0];
      for (auto& gv : a->grad) gv += g;
    });
  }
  return out;
}

Tensor* Tape::mean_rows(Tensor* a) {
  require(a->shape.size() == 2, "mean_rows: operand must be 2-D");
  const int n = a->rows(), d = a->cols();
  Tensor* out = alloc({d});
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < d; ++j) out->data[j] += a->data[static_cast<size_t>(r) * d + j];
  for (int j = 0; j < d; ++j) out->data[j] /= n;
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, n, d] {
      a->ensure_grad();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j) a->grad[static_cast<size_t>(r) * d + j] += out->grad[j] / n;
    });
  }
  return out;
}

Tensor* Tape::norm2(Tensor* a) {
  double ss = 0.0;
  for (double v : a->data) ss += v * v;
  const double nrm = std::sqrt(ss);
  Tensor* out = constant({1}, {nrm});
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, nrm] {
      if (nrm == 0.0) return;  // subgradient 0 at the origin
      a->ensure_grad();
      const double g = out->grad[0] / nrm;
      for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += g * a->data[i];
    });
  }
  return out;
}

Tensor* Tape::select(Tensor* a, int64_t flat_index) {
  require(flat_index >= 0 && flat_index < a->size(), "select: index out of range");
  Tensor* out = constant({1}, {a->data[static_cast<size_t>(flat_index)]});
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, flat_index] {
      a->ensure_grad();
      a->grad[static_cast<size_t>(flat_index)] += out->grad[0];
    });
  }
  return out;
}

Tensor* Tape::reshape(Tensor* a, Shape shape) {
  require(numel(shape) == a->size(), "reshape: element count mismatch");
  Tensor* out = constant(std::move(shape), a->data);
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

Tensor* Tape::slice_rows(Tensor* a, int start, int len) {
  require(a->shape.size() == 2, "slice_rows: operand must be 2-D");
  const int d = a->cols();
  require(start >= 0 && len >= 0 && start + len <= a->rows(), "slice_rows: range out of bounds");
  Tensor* out = alloc({len, d});
  std::copy_n(a->data.data() + static_cast<int64_t>(start) * d, static_cast<int64_t>(len) * d, out->data.data());
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, start, len, d] {
      a->ensure_grad();
      for (int64_t i = 0; i < static_cast<int64_t>(len) * d; ++i)
        a->grad[static_cast<int64_t>(start) * d + i] += out->grad[i];
    });
  }
  return out;
}

Tensor* Tape::slice_cols(Tensor* a, int start, int len) {
  require(a->shape.size() == 2, "slice_cols: operand must be 2-D");
  const int n = a->rows(), d = a->cols();
  require(start >= 0 && len >= 0 && start + len <= d, "slice_cols: range out of bounds");
  Tensor* out = alloc({n, len});
  for (int r = 0; r < n; ++r)
    std::copy_n(a->data.data() + static_cast<int64_t>(r) * d + start, len,
                out->data.data() + static_cast<int64_t>(r) * len);
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, start, len, n, d] {
      a->ensure_grad();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < len; ++j)
          a->grad[static_cast<int64_t>(r) * d + start + j] += out->grad[static_cast<int64_t>(r) * len + j];
    });
  }
  return out;
}

Tensor* Tape::concat_rows(std::span<Tensor* const> parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  const int d = parts[0]->cols();
  int total = 0;
  bool needs = false;
  for (Tensor* p : parts) {
    require(p->shape.size() == 2 && p->cols() == d, "concat_rows: column counts differ");
    total += p->rows();
    needs = needs || p->requires_grad;
  }
  Tensor* out = alloc({total, d});
  int64_t off = 0;
  for (Tensor* p : parts) {
    std::copy_n(p->data.data(), p->size(), out->data.data() + off);
    off += p->size();
  }
  out->requires_grad = needs;
  if (needs) {
    std::vector<Tensor*> ps(parts.begin(), parts.end());
    record(out, [ps, out] {
      int64_t off2 = 0;
      for (Tensor* p : ps) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (int64_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off2 + i];
        }
        off2 += p->size();
      }
    });
  }
  return out;
}

Tensor* Tape::concat_cols(std::span<Tensor* const> parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  const int n = parts[0]->rows();
  int total = 0;
  bool needs = false;
  for (Tensor* p : parts) {
    require(p->shape.size() == 2 && p->rows() == n, "concat_cols: row counts differ");
    total += p->cols();
    needs = needs || p->requires_grad;
  }
  Tensor* out = alloc({n, total});
  int off = 0;
  for (Tensor* p : parts) {
    const int pc = p->cols();
    for (int r = 0; r < n; ++r)
      std::copy_n(p->data.data() + static_cast<int64_t>(r) * pc, pc,
                  out->data.data() + static_cast<int64_t>(r) * total + off);
    off += pc;
  }
  out->requires_grad = needs;
  if (needs) {
    std::vector<Tensor*> ps(parts.begin(), parts.end());
    record(out, [ps, out, n, total] {
      int off2 = 0;
      for (Tensor* p : ps) {
        const int pc = p->cols();
        if (p->requires_grad) {
          p->ensure_grad();
          for (int r = 0; r < n; ++r)
            for (int j = 0; j < pc; ++j)
              p->grad[static_cast<int64_t>(r) * pc + j] += out->grad[static_cast<int64_t>(r) * total + off2 + j];
        }
        off2 += pc;
      }
    });
  }
  return out;
}

Tensor* Tape::gather_rows(Tensor* a, std::span<const int> indices) {
  require(a->shape.size() == 2, "gather_rows: operand must be 2-D");
  const int n = a->rows(), d = a->cols();
  Tensor* out = alloc({static_cast<int>(indices.size()), d});
  for (size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < n, "gather_rows: index out of range");
    std::copy_n(a->data.data() + static_cast<int64_t>(indices[i]) * d, d,
                out->data.data() + static_cast<int64_t>(i) * d);
  }
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    std::vector<int> idx(indices.begin(), indices.end());
    record(out, [a, out, idx, d] {
      a->ensure_grad();
      for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < d; ++j)
          a->grad[static_cast<int64_t>(idx[i]) * d + j] += out->grad[static_cast<int64_t>(i) * d + j];
    });
  }
  return out;
}

Tensor* Tape::row_normalize(Tensor* a) {
  require(a->shape.size() == 2, "row_normalize: operand must be 2-D");
  const int n = a->rows(), d = a->cols();
  Tensor* out = alloc({n, d});
  auto norms = std::make_shared<std::vector<double>>(n);
  for (int r = 0; r < n; ++r) {
    const double* row = a->data.data() + static_cast<int64_t>(r) * d;
    double ss = 0.0;
    for (int j = 0; j < d; ++j) ss += row[j] * row[j];
    const double nrm = std::sqrt(ss);
    (*norms)[r] = nrm;
    if (nrm > 0.0)
      for (int j = 0; j < d; ++j) out->data[static_cast<int64_t>(r) * d + j] = row[j] / nrm;
    // zero rows stay zero
  }
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, norms, n, d] {
      a->ensure_grad();
      for (int r = 0; r < n; ++r) {
        const double nrm = (*norms)[r];
        if (nrm == 0.0) continue;  // degenerate rule: zero gradient
        const double* y = out->data.data() + static_cast<int64_t>(r) * d;
        const double* dy = out->grad.data() + static_cast<int64_t>(r) * d;
        double* dx = a->grad.data() + static_cast<int64_t>(r) * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += dy[j] * y[j];
        for (int j = 0; j < d; ++j) dx[j] += (dy[j] - dot * y[j]) / nrm;
      }
    });
  }
  return out;
}

Tensor* Tape::set_diag_one(Tensor* a) {
  require(a->shape.size() == 2 && a->rows() == a->cols(), "set_diag_one: operand must be square");
  const int n = a->rows();
  Tensor* out = alloc({n, n});
  out->data = a->data;
  for (int i = 0; i < n; ++i) out->data[static_cast<int64_t>(i) * n + i] = 1.0;
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    record(out, [a, out, n] {
      a->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (i != j) a->grad[static_cast<int64_t>(i) * n + j] += out->grad[static_cast<int64_t>(i) * n + j];
    });
  }
  return out;
}

void Tape::backward(Tensor* loss) {
  if (!loss->is_scalar()) throw std::invalid_argument("backward: loss must be scalar");
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // not on any path to the loss
    it->back();
  }
}

int argmax(std::span<const double> v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace doco::ad
