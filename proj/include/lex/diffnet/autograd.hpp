#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lex/diffnet/tensor.hpp"
#include "lex/error.hpp"

namespace lex::diffnet {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }
};

/// Handle to a value in a dynamically recorded computation. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : n_(std::make_shared<Node<T>>()) {
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  const Tensor<T>& value() const { return n_->value; }
  Tensor<T>& mutable_value() { return n_->value; }
  const Tensor<T>& grad() const { return n_->grad; }
  Tensor<T>& grad() { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const Shape& shape() const { return n_->value.shape(); }
  std::size_t size() const { return n_->value.size(); }
  std::size_t rows() const { return n_->value.rows(); }
  std::size_t cols() const { return n_->value.cols(); }
  bool valid() const { return static_cast<bool>(n_); }

  const std::shared_ptr<Node<T>>& node() const { return n_; }

 private:
  std::shared_ptr<Node<T>> n_;
};

template <typename T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

/// Builds a result node. The backward closure is only kept when some parent
/// needs a gradient, so inference-only graphs carry no bookkeeping.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(n));
}

/// Reverse-mode sweep from a scalar. Gradients accumulate into leaves.
template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.valid() || loss.size() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_str(loss.valid() ? loss.shape() : Shape{}));
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
CMapMat<T> cmap(const Tensor<T>& t) {
  return CMapMat<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MapMat<T> map(Tensor<T>& t) {
  return MapMat<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline void same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(const Shape& a, std::size_t r, const char* op) {
  if (a.size() != r)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a));
}

template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
  if (!parent.requires_grad) return;
  auto& buf = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

template <typename T>
T log1pexp(T x) {
  // softplus without overflow
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

/// Elementwise op from a value function and its derivative expressed in x and y=f(x).
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_op<T>(std::move(out), {a}, [df](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    auto& buf = p.grad_buffer();
    for (std::size_t i = 0; i < n.value.size(); ++i) buf[i] += n.grad[i] * df(p.value[i], n.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::matrix(a.rows(), b.cols());
  detail::map(out).noalias() = detail::cmap(a.value()) * detail::cmap(b.value());
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    auto g = detail::cmap(n.grad);
    if (pa.requires_grad) detail::map(pa.grad_buffer()).noalias() += g * detail::cmap(pb.value).transpose();
    if (pb.requires_grad) detail::map(pb.grad_buffer()).noalias() += detail::cmap(pa.value).transpose() * g;
  });
}

/// a[m x n] + bias[n] broadcast over rows.
template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
  detail::require_rank(a.shape(), 2, "add_bias");
  if (bias.size() != a.cols())
    throw DimensionError("add_bias: bias of " + shape_str(bias.shape()) + " for " + shape_str(a.shape()));
  Tensor<T> out = a.value();
  const std::size_t m = a.rows(), c = a.cols();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bias.value()[j];
  return make_op<T>(std::move(out), {a, bias}, [m, c](Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad);
    auto& pb = *n.parents[1];
    if (!pb.requires_grad) return;
    auto& buf = pb.grad_buffer();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < c; ++j) buf[j] += n.grad[r * c + j];
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad);
    detail::accumulate(*n.parents[1], n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad);
    auto& pb = *n.parents[1];
    if (!pb.requires_grad) return;
    auto& buf = pb.grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] -= n.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      auto& buf = pa.grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& buf = pb.grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * pa.value[i];
    }
  });
}

/// -log(exp(-a) + exp(-b)): a smooth minimum, used for truncated Gumbel draws.
template <typename T>
Var<T> soft_min(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "soft_min");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T x = a.value()[i], y = b.value()[i];
    T lo = std::min(x, y), hi = std::max(x, y);
    out[i] = lo - std::log1p(std::exp(lo - hi));
  }
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      T wa = detail::sigmoid(pb.value[i] - pa.value[i]);  // d/da
      if (pa.requires_grad) pa.grad_buffer()[i] += n.grad[i] * wa;
      if (pb.requires_grad) pb.grad_buffer()[i] += n.grad[i] * (T(1) - wa);
    }
  });
}

// ---------------------------------------------------------------------------
// With constants

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  return detail::unary<T>(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  return detail::unary<T>(a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c) {
  return add(a, constant(c));
}

template <typename T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& c) {
  return mul(a, constant(c));
}

/// m * x + (1 - m) * fill. Exactly x where m == 1 and exactly fill where m == 0.
template <typename T>
Var<T> blend(const Var<T>& m, const Tensor<T>& x, const Tensor<T>& fill) {
  detail::same_shape(m.shape(), x.shape(), "blend");
  detail::same_shape(m.shape(), fill.shape(), "blend");
  Tensor<T> out(m.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T w = m.value()[i];
    out[i] = w * x[i] + (T(1) - w) * fill[i];
  }
  return make_op<T>(std::move(out), {m}, [x, fill](Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * (x[i] - fill[i]);
  });
}

/// Forward value is `hard`; the gradient is routed to `relaxed` unchanged.
template <typename T>
Var<T> straight_through(const Tensor<T>& hard, const Var<T>& relaxed) {
  detail::same_shape(hard.shape(), relaxed.shape(), "straight_through");
  return make_op<T>(hard, {relaxed}, [](Node<T>& n) { detail::accumulate(*n.parents[0], n.grad); });
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return constant(a.value());
}

// ---------------------------------------------------------------------------
// Elementwise unary

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return detail::sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
}

/// log(sigmoid(x)), stable for large |x|.
template <typename T>
Var<T> log_sigmoid(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return -detail::log1pexp(-x); },
                          [](T x, T) { return T(1) - detail::sigmoid(x); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

/// max(a, lo); the gradient is zero where the floor is active.
template <typename T>
Var<T> clamp_min(const Var<T>& a, T lo) {
  return detail::unary<T>(a, [lo](T x) { return x < lo ? lo : x; }, [lo](T x, T) { return x < lo ? T(0) : T(1); });
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return detail::unary<T>(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x < lo || x > hi) ? T(0) : T(1); });
}

// ---------------------------------------------------------------------------
// Row-wise reductions on matrices

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  detail::require_rank(a.shape(), 2, "softmax_rows");
  const std::size_t m = a.rows(), c = a.cols();
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < m; ++r) {
    auto in = a.value().row(r);
    auto o = out.row(r);
    T mx = *std::max_element(in.begin(), in.end());
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= s;
  }
  return make_op<T>(std::move(out), {a}, [m, c](Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += n.grad[r * c + j] * n.value[r * c + j];
      for (std::size_t j = 0; j < c; ++j) buf[r * c + j] += n.value[r * c + j] * (n.grad[r * c + j] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& a) {
  detail::require_rank(a.shape(), 2, "log_softmax_rows");
  const std::size_t m = a.rows(), c = a.cols();
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < m; ++r) {
    auto in = a.value().row(r);
    T mx = *std::max_element(in.begin(), in.end());
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(in[j] - mx);
    T lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = in[j] - lse;
  }
  return make_op<T>(std::move(out), {a}, [m, c](Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r) {
      T gs = 0;
      for (std::size_t j = 0; j < c; ++j) gs += n.grad[r * c + j];
      for (std::size_t j = 0; j < c; ++j)
        buf[r * c + j] += n.grad[r * c + j] - std::exp(n.value[r * c + j]) * gs;
    }
  });
}

/// [m x n] -> [m]
template <typename T>
Var<T> logsumexp_rows(const Var<T>& a) {
  detail::require_rank(a.shape(), 2, "logsumexp_rows");
  const std::size_t m = a.rows(), c = a.cols();
  Tensor<T> out(Shape{m});
  for (std::size_t r = 0; r < m; ++r) {
    auto in = a.value().row(r);
    T mx = *std::max_element(in.begin(), in.end());
    if (!std::isfinite(mx)) {
      out[r] = mx;
      continue;
    }
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(in[j] - mx);
    out[r] = mx + std::log(s);
  }
  return make_op<T>(std::move(out), {a}, [m, c](Node<T>& n) {
    auto& p = *n.parents[0];
    auto& buf = p.grad_buffer();
    for (std::size_t r = 0; r < m; ++r) {
      if (!std::isfinite(n.value[r])) continue;
      for (std::size_t j = 0; j < c; ++j)
        buf[r * c + j] += n.grad[r] * std::exp(p.value[r * c + j] - n.value[r]);
    }
  });
}

/// [m x n] -> [m]
template <typename T>
Var<T> sum_rows(const Var<T>& a) {
  detail::require_rank(a.shape(), 2, "sum_rows");
  const std::size_t m = a.rows(), c = a.cols();
  Tensor<T> out(Shape{m});
  for (std::size_t r = 0; r < m; ++r) {
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += a.value()[r * c + j];
    out[r] = s;
  }
  return make_op<T>(std::move(out), {a}, [m, c](Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < c; ++j) buf[r * c + j] += n.grad[r];
  });
}

/// out[r] = a[r, idx[r]]
template <typename T>
Var<T> gather_cols(const Var<T>& a, std::vector<std::size_t> idx) {
  detail::require_rank(a.shape(), 2, "gather_cols");
  const std::size_t m = a.rows(), c = a.cols();
  if (idx.size() != m) throw DimensionError("gather_cols: index count differs from row count");
  Tensor<T> out(Shape{m});
  for (std::size_t r = 0; r < m; ++r) {
    if (idx[r] >= c) throw DimensionError("gather_cols: column index out of range");
    out[r] = a.value()[r * c + idx[r]];
  }
  return make_op<T>(std::move(out), {a}, [idx = std::move(idx), c](Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) buf[r * c + idx[r]] += n.grad[r];
  });
}

/// v[m] -> [m x n], each row constant.
template <typename T>
Var<T> broadcast_cols(const Var<T>& v, std::size_t n_cols) {
  detail::require_rank(v.shape(), 1, "broadcast_cols");
  const std::size_t m = v.size();
  Tensor<T> out = Tensor<T>::matrix(m, n_cols);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n_cols; ++j) out[r * n_cols + j] = v.value()[r];
  return make_op<T>(std::move(out), {v}, [m, n_cols](Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n_cols; ++j) buf[r] += n.grad[r * n_cols + j];
  });
}

/// Each row of a[m x n] repeated `times` times consecutively -> [m*times x n].
/// Rank-1 inputs repeat each element.
template <typename T>
Var<T> repeat_rows(const Var<T>& a, std::size_t times) {
  const std::size_t m = a.rows(), c = a.cols();
  Shape s = a.shape().size() == 2 ? Shape{m * times, c} : Shape{m * times};
  Tensor<T> out(s);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(a.value().data() + r * c, c, out.data() + (r * times + t) * c);
  return make_op<T>(std::move(out), {a}, [m, c, times](Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t j = 0; j < c; ++j) buf[r * c + j] += n.grad[(r * times + t) * c + j];
  });
}

/// v[m] -> [m / g], summing consecutive groups of g.
template <typename T>
Var<T> sum_groups(const Var<T>& v, std::size_t g) {
  detail::require_rank(v.shape(), 1, "sum_groups");
  if (g == 0 || v.size() % g != 0) throw DimensionError("sum_groups: length not divisible by group size");
  const std::size_t m = v.size() / g;
  Tensor<T> out(Shape{m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < g; ++j) out[i] += v.value()[i * g + j];
  return make_op<T>(std::move(out), {v}, [m, g](Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < g; ++j) buf[i * g + j] += n.grad[i];
  });
}

/// v[m] -> [m / g], log of the mean of exp over consecutive groups of g.
template <typename T>
Var<T> logmeanexp_groups(const Var<T>& v, std::size_t g) {
  detail::require_rank(v.shape(), 1, "logmeanexp_groups");
  if (g == 0 || v.size() % g != 0) throw DimensionError("logmeanexp_groups: length not divisible by group size");
  const std::size_t m = v.size() / g;
  Tensor<T> out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    const T* p = v.value().data() + i * g;
    T mx = *std::max_element(p, p + g);
    T s = 0;
    for (std::size_t j = 0; j < g; ++j) s += std::exp(p[j] - mx);
    out[i] = mx + std::log(s / T(g));
  }
  return make_op<T>(std::move(out), {v}, [m, g](Node<T>& n) {
    auto& p = *n.parents[0];
    auto& buf = p.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < g; ++j)
        buf[i * g + j] += n.grad[i] * std::exp(p.value[i * g + j] - n.value[i]) / T(g);
  });
}

// ---------------------------------------------------------------------------
// Full reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T x : a.value().storage()) s += x;
  return make_op<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    T g = n.grad[0];
    for (auto& b : buf.storage()) b += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) { detail::accumulate(*n.parents[0], n.grad); });
}

}  // namespace lex::diffnet
