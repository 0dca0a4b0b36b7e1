#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copying it aliases the same storage, exactly
// like the autograd engines it imitates. Use clone() for an independent copy.
// Every op that sees an input with requires_grad appends a node to the tape.
// Nodes carry a monotonically increasing sequence number, so sorting the
// nodes reachable from a loss by that number recovers execution order and
// backward() walks it in reverse.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ccl/errors.hpp"

namespace ccl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Guard used before log and division.
template <typename T>
inline constexpr T kLogEps = T(1e-12);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  std::uint64_t seq = 0;
  const char* op = "";
  std::vector<Tensor<T>> inputs;
  TensorImpl<T>* output = nullptr;  // owned by the output; valid while the node is reachable
  std::function<void(const std::vector<T>& out_grad)> backward;
  bool consumed = false;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty when absent
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

template <typename T = double>
class Tensor {
 public:
  using value_type = T;

  Tensor() : impl_(std::make_shared<detail::TensorImpl<T>>()) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    if (shape_numel(shape) != data.size())
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
  }
  static Tensor vector(std::vector<T> values, bool requires_grad = false) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values,
                       bool requires_grad = false) {
    return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows,
                          bool requires_grad = false) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("from_rows: ragged rows");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(v), requires_grad);
  }
  static Tensor identity(std::size_t n) {
    auto t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = T(1);
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  // Rows of the matrix view: rank 2 -> dim 0, rank 1 -> one row, rank 0 -> one row.
  std::size_t rows() const { return rank() == 2 ? impl_->shape[0] : 1; }
  std::size_t cols() const {
    if (rank() == 2) return impl_->shape[1];
    if (rank() == 1) return impl_->shape[0];
    return 1;
  }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " values");
    return impl_->data[0];
  }
  T operator[](std::size_t i) const { return impl_->data[i]; }
  T at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  const std::shared_ptr<detail::Node<T>>& grad_fn() const { return impl_->grad_fn; }

  // Same values, cut from the tape.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

  // Independent leaf copy keeping the requires_grad flag.
  Tensor clone() const { return Tensor(impl_->shape, impl_->data, impl_->requires_grad); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl<T>& impl() const { return *impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

namespace detail {

template <typename T>
void ensure_grad(TensorImpl<T>& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), T(0));
}

template <typename T>
void check_finite(const char* op, const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(x)) throw DomainError(std::string(op) + ": non-finite result");
}

// Builds the output tensor and, when needed, records it on the tape.
// `grad_rule` receives the output gradient and accumulates into the inputs.
template <typename T, typename Rule>
Tensor<T> record(const char* op, Shape shape, std::vector<T> data,
                 std::vector<Tensor<T>> inputs, Rule&& grad_rule) {
  check_finite(op, data);
  Tensor<T> out(std::move(shape), std::move(data));
  bool needs = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!needs) return out;
  out.set_requires_grad(true);
  auto node = std::make_shared<Node<T>>();
  node->seq = next_seq();
  node->op = op;
  node->inputs = std::move(inputs);
  node->output = &out.impl();
  node->backward = std::forward<Rule>(grad_rule);
  out.impl().grad_fn = std::move(node);
  return out;
}

// Matrix kernels. Inner loops run over contiguous memory and accumulate in a
// fixed order, which keeps results bitwise reproducible.

// C[m×n] += A[m×k] · B[k×n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T s = T(0);
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

enum class Broadcast { same, row_vector, row_scalar, scalar };

template <typename T>
Broadcast broadcast_kind(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1 && b.rank() <= 1) return Broadcast::scalar;
  if (a.rank() == 2 && b.rank() == 2) {
    if (b.shape()[0] == 1 && b.shape()[1] == a.shape()[1]) return Broadcast::row_vector;
    if (b.shape()[1] == 1 && b.shape()[0] == a.shape()[0]) return Broadcast::row_scalar;
  }
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " do not conform");
}

// Index into b for element (r, c) of a under the given broadcast.
inline std::size_t bidx(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::same: return r * cols + c;
    case Broadcast::row_vector: return c;
    case Broadcast::row_scalar: return r;
    case Broadcast::scalar: return 0;
  }
  return 0;
}

template <typename T>
void require_rank2(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Elementwise a + b. b may be a 1×d row vector, an N×1 per-row scalar or a scalar.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto kind = detail::broadcast_kind("add", a, b);
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = av[r * cols + c] + bv[detail::bidx(kind, r, c, cols)];
  return detail::record<T>("add", a.shape(), std::move(out), {a, b},
                           [a, b, kind, rows, cols](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             auto& bi = b.impl();
                             if (ai.requires_grad) {
                               detail::ensure_grad(ai);
                               for (std::size_t i = 0; i < g.size(); ++i) ai.grad[i] += g[i];
                             }
                             if (bi.requires_grad) {
                               detail::ensure_grad(bi);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < cols; ++c)
                                   bi.grad[detail::bidx(kind, r, c, cols)] += g[r * cols + c];
                             }
                           });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto kind = detail::broadcast_kind("sub", a, b);
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = av[r * cols + c] - bv[detail::bidx(kind, r, c, cols)];
  return detail::record<T>("sub", a.shape(), std::move(out), {a, b},
                           [a, b, kind, rows, cols](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             auto& bi = b.impl();
                             if (ai.requires_grad) {
                               detail::ensure_grad(ai);
                               for (std::size_t i = 0; i < g.size(); ++i) ai.grad[i] += g[i];
                             }
                             if (bi.requires_grad) {
                               detail::ensure_grad(bi);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < cols; ++c)
                                   bi.grad[detail::bidx(kind, r, c, cols)] -= g[r * cols + c];
                             }
                           });
}

// Elementwise product with the same broadcasting rules as add.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto kind = detail::broadcast_kind("mul", a, b);
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = av[r * cols + c] * bv[detail::bidx(kind, r, c, cols)];
  return detail::record<T>("mul", a.shape(), std::move(out), {a, b},
                           [a, b, kind, rows, cols](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             auto& bi = b.impl();
                             if (ai.requires_grad) {
                               detail::ensure_grad(ai);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < cols; ++c)
                                   ai.grad[r * cols + c] +=
                                       g[r * cols + c] * bi.data[detail::bidx(kind, r, c, cols)];
                             }
                             if (bi.requires_grad) {
                               detail::ensure_grad(bi);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < cols; ++c)
                                   bi.grad[detail::bidx(kind, r, c, cols)] +=
                                       g[r * cols + c] * ai.data[r * cols + c];
                             }
                           });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  std::vector<T> out(a.values());
  for (auto& x : out) x *= s;
  return detail::record<T>("scalar_mul", a.shape(), std::move(out), {a},
                           [a, s](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             detail::ensure_grad(ai);
                             for (std::size_t i = 0; i < g.size(); ++i) ai.grad[i] += s * g[i];
                           });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.values());
  for (auto& x : out) x += s;
  return detail::record<T>("add_scalar", a.shape(), std::move(out), {a},
                           [a](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             detail::ensure_grad(ai);
                             for (std::size_t i = 0; i < g.size(); ++i) ai.grad[i] += g[i];
                           });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2("matmul", a);
  detail::require_rank2("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
  return detail::record<T>("matmul", Shape{m, n}, std::move(out), {a, b},
                           [a, b, m, k, n](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             auto& bi = b.impl();
                             if (ai.requires_grad) {
                               detail::ensure_grad(ai);
                               detail::gemm_nt(m, n, k, g.data(), bi.data.data(), ai.grad.data());
                             }
                             if (bi.requires_grad) {
                               detail::ensure_grad(bi);
                               detail::gemm_tn(k, m, n, ai.data.data(), g.data(), bi.grad.data());
                             }
                           });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank2("transpose", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return detail::record<T>("transpose", Shape{c, r}, std::move(out), {a},
                           [a, r, c](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             detail::ensure_grad(ai);
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) ai.grad[i * c + j] += g[j * r + i];
                           });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& x : out) x = x > T(0) ? x : T(0);
  return detail::record<T>("relu", a.shape(), std::move(out), {a}, [a](const std::vector<T>& g) {
    auto& ai = a.impl();
    detail::ensure_grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (ai.data[i] > T(0)) ai.grad[i] += g[i];
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  auto result = out;
  return detail::record<T>("exp", a.shape(), std::move(out), {a},
                           [a, result = std::move(result)](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             detail::ensure_grad(ai);
                             for (std::size_t i = 0; i < g.size(); ++i) ai.grad[i] += g[i] * result[i];
                           });
}

// Natural log; any non-positive entry is a domain error. Pair with clamp_min.
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(av[i] > T(0))) throw DomainError("log: non-positive input");
    out[i] = std::log(av[i]);
  }
  return detail::record<T>("log", a.shape(), std::move(out), {a}, [a](const std::vector<T>& g) {
    auto& ai = a.impl();
    detail::ensure_grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ai.grad[i] += g[i] / ai.data[i];
  });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  std::vector<T> out(a.values());
  for (auto& x : out) x = x > lo ? x : lo;
  return detail::record<T>("clamp_min", a.shape(), std::move(out), {a},
                           [a, lo](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             detail::ensure_grad(ai);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               if (ai.data[i] > lo) ai.grad[i] += g[i];
                           });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = *std::max_element(x, x + cols);
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) s += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= s;
  }
  auto y = out;
  return detail::record<T>(
      "softmax_rows", a.shape(), std::move(out), {a},
      [a, y = std::move(y), rows, cols](const std::vector<T>& g) {
        auto& ai = a.impl();
        detail::ensure_grad(ai);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yr = y.data() + r * cols;
          const T* gr = g.data() + r * cols;
          T dot = T(0);
          for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
          for (std::size_t c = 0; c < cols; ++c) ai.grad[r * cols + c] += yr[c] * (gr[c] - dot);
        }
      });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = *std::max_element(x, x + cols);
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(x[c] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
  auto y = out;
  return detail::record<T>(
      "log_softmax_rows", a.shape(), std::move(out), {a},
      [a, y = std::move(y), rows, cols](const std::vector<T>& g) {
        auto& ai = a.impl();
        detail::ensure_grad(ai);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yr = y.data() + r * cols;
          const T* gr = g.data() + r * cols;
          T gs = T(0);
          for (std::size_t c = 0; c < cols; ++c) gs += gr[c];
          for (std::size_t c = 0; c < cols; ++c)
            ai.grad[r * cols + c] += gr[c] - std::exp(yr[c]) * gs;
        }
      });
}

// Scales every row to unit Euclidean norm. Rows with norm below 1e-12 are a domain error.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(a.numel());
  std::vector<T> norms(rows);
  const auto& av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c] * av[r * cols + c];
    T nr = std::sqrt(s);
    if (!(nr >= kLogEps<T>)) throw DomainError("l2_normalize_rows: zero-norm row " + std::to_string(r));
    norms[r] = nr;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] / nr;
  }
  auto y = out;
  return detail::record<T>(
      "l2_normalize_rows", a.shape(), std::move(out), {a},
      [a, y = std::move(y), norms = std::move(norms), rows, cols](const std::vector<T>& g) {
        auto& ai = a.impl();
        detail::ensure_grad(ai);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yr = y.data() + r * cols;
          const T* gr = g.data() + r * cols;
          T dot = T(0);
          for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
          for (std::size_t c = 0; c < cols; ++c)
            ai.grad[r * cols + c] += (gr[c] - yr[c] * dot) / norms[r];
        }
      });
}

// Sum of all entries, shape [].
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T x : a.values()) s += x;
  return detail::record<T>("sum", Shape{}, std::vector<T>{s}, {a}, [a](const std::vector<T>& g) {
    auto& ai = a.impl();
    detail::ensure_grad(ai);
    for (auto& x : ai.grad) x += g[0];
  });
}

// Mean of all entries, shape []. The mean of an empty tensor is 0.
template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const std::size_t n = a.numel();
  T s = T(0);
  for (T x : a.values()) s += x;
  const T inv = n ? T(1) / T(n) : T(0);
  return detail::record<T>("mean", Shape{}, std::vector<T>{s * inv}, {a},
                           [a, inv](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             detail::ensure_grad(ai);
                             for (auto& x : ai.grad) x += g[0] * inv;
                           });
}

// Per-row sums of a matrix, shape [N×1].
template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(rows, T(0));
  const auto& av = a.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += av[r * cols + c];
  return detail::record<T>("row_sum", Shape{rows, 1}, std::move(out), {a},
                           [a, rows, cols](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             detail::ensure_grad(ai);
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c) ai.grad[r * cols + c] += g[r];
                           });
}

// Per-column means of a matrix, shape [1×C].
template <typename T>
Tensor<T> col_mean(const Tensor<T>& a) {
  detail::require_rank2("col_mean", a);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  std::vector<T> out(cols, T(0));
  const auto& av = a.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += av[r * cols + c];
  const T inv = rows ? T(1) / T(rows) : T(0);
  for (auto& x : out) x *= inv;
  return detail::record<T>("col_mean", Shape{1, cols}, std::move(out), {a},
                           [a, rows, cols, inv](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             detail::ensure_grad(ai);
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c)
                                 ai.grad[r * cols + c] += g[c] * inv;
                           });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  for (const auto& p : parts) detail::require_rank2("concat_rows", p);
  const std::size_t cols = parts[0].shape()[1];
  std::size_t rows = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    if (p.shape()[1] != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.shape()[0];
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return detail::record<T>("concat_rows", Shape{rows, cols}, std::move(out), parts,
                           [parts](const std::vector<T>& g) {
                             std::size_t off = 0;
                             for (const auto& p : parts) {
                               auto& pi = p.impl();
                               if (pi.requires_grad) {
                                 detail::ensure_grad(pi);
                                 for (std::size_t i = 0; i < pi.data.size(); ++i)
                                   pi.grad[i] += g[off + i];
                               }
                               off += pi.data.size();
                             }
                           });
}

template <typename T>
Tensor<T> select_rows(const Tensor<T>& a, std::span<const std::size_t> index) {
  detail::require_rank2("select_rows", a);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  std::vector<T> out;
  out.reserve(index.size() * cols);
  for (auto r : index) {
    if (r >= rows) throw DimensionError("select_rows: index out of range");
    auto it = a.values().begin() + static_cast<std::ptrdiff_t>(r * cols);
    out.insert(out.end(), it, it + static_cast<std::ptrdiff_t>(cols));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return detail::record<T>("select_rows", Shape{idx.size(), cols}, std::move(out), {a},
                           [a, idx, cols](const std::vector<T>& g) {
                             auto& ai = a.impl();
                             detail::ensure_grad(ai);
                             for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::size_t c = 0; c < cols; ++c)
                                 ai.grad[idx[i] * cols + c] += g[i * cols + c];
                           });
}

// ---------------------------------------------------------------------------
// Tape traversal
// ---------------------------------------------------------------------------

// Ops reachable from `root`, in recorded (topological) order.
template <typename T>
std::vector<detail::Node<T>*> tape_of(const Tensor<T>& root) {
  std::vector<detail::Node<T>*> nodes;
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<detail::Node<T>*> stack;
  if (root.grad_fn()) stack.push_back(root.grad_fn().get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    nodes.push_back(n);
    for (const auto& in : n->inputs)
      if (in.grad_fn()) stack.push_back(in.grad_fn().get());
  }
  std::sort(nodes.begin(), nodes.end(), [](auto* x, auto* y) { return x->seq < y->seq; });
  return nodes;
}

// Populates .grad on every requires_grad tensor feeding `loss`.
// Leaf gradients accumulate across graphs; a graph may be run backward once.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.rank() != 0)
    throw ContractError("backward: loss must have shape [], got " + shape_str(loss.shape()));
  if (!loss.grad_fn()) throw EmptyTapeError("backward: loss has no recorded operations");
  auto tape = tape_of(loss);
  for (auto* n : tape)
    if (n->consumed) throw ContractError("backward: graph already differentiated");
  for (auto* n : tape) n->consumed = true;

  auto& li = loss.impl();
  detail::ensure_grad(li);
  li.grad[0] += T(1);
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    auto* n = *it;
    auto& out = *n->output;
    if (out.grad.empty()) continue;
    n->backward(out.grad);
  }
  // Intermediate gradients are not retained.
  for (auto* n : tape) {
    auto* out = n->output;
    if (out != &li) {
      out->grad.clear();
      out->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Largest |analytic − central difference| / max(1, |analytic|) over all
// coordinates of `point`. `fn` maps a tensor to a scalar tensor.
template <typename T, typename Fn>
T finite_difference_check(Fn&& fn, const Tensor<T>& point, T eps) {
  if (!(eps >= T(1e-7) && eps <= T(1e-3)))
    throw ContractError("finite_difference_check: eps must lie in [1e-7, 1e-3]");
  Tensor<T> x(point.shape(), point.values(), true);
  Tensor<T> f = fn(x);
  if (f.numel() != 1) throw ContractError("finite_difference_check: fn must return a scalar");
  if (!std::isfinite(f.item())) throw DomainError("finite_difference_check: non-finite value");
  std::vector<T> analytic(x.numel(), T(0));
  if (f.grad_fn()) {
    backward(f);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  }
  T worst = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    std::vector<T> v = point.values();
    v[i] = point.values()[i] + eps;
    const T fp = fn(Tensor<T>(point.shape(), v)).item();
    v[i] = point.values()[i] - eps;
    const T fm = fn(Tensor<T>(point.shape(), v)).item();
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw DomainError("finite_difference_check: non-finite value");
    const T central = (fp - fm) / (T(2) * eps);
    worst = std::max(worst, std::abs(analytic[i] - central) / std::max(T(1), std::abs(analytic[i])));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers over values
// ---------------------------------------------------------------------------

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<int> out(rows);
  const auto& v = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    auto b = v.begin() + static_cast<std::ptrdiff_t>(r * cols);
    out[r] = static_cast<int>(std::max_element(b, b + static_cast<std::ptrdiff_t>(cols)) - b);
  }
  return out;
}

template <typename T>
std::vector<T> max_rows(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(rows);
  const auto& v = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    auto b = v.begin() + static_cast<std::ptrdiff_t>(r * cols);
    out[r] = *std::max_element(b, b + static_cast<std::ptrdiff_t>(cols));
  }
  return out;
}

// N×C one-hot matrix.
template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t classes) {
  auto t = Tensor<T>::zeros({labels.size(), classes});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw ContractError("one_hot: label out of range");
    d[i * classes + static_cast<std::size_t>(labels[i])] = T(1);
  }
  return t;
}

// Column vector [N×1] from values.
template <typename T, typename U>
Tensor<T> column(std::span<const U> values) {
  std::vector<T> v(values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(values[i]);
  const std::size_t n = v.size();
  return Tensor<T>(Shape{n, 1}, std::move(v));
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& a) {
  std::vector<To> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<To>(a.values()[i]);
  return Tensor<To>(a.shape(), std::move(v));
}

}  // namespace ccl
