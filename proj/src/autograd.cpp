#include "ddprune/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <optional>
#include <unordered_set>

#include "ddprune/kernels.hpp"

namespace ddprune {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace ag {
namespace {

thread_local bool g_grad_enabled = true;

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw StructuralError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

template <class T, class F>
Tensor<T> map_values(const Tensor<T>& x, F&& f) {
  Tensor<T> out(x.shape());
  const T* in = x.data();
  T* o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = f(in[i]);
  return out;
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= 0) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
T stable_softplus(T x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
Var<T> Var<T>::constant(Tensor<T> value) {
  Var v;
  v.node_ = std::make_shared<Node<T>>();
  v.node_->value = std::move(value);
  return v;
}

template <class T>
Var<T> Var<T>::leaf(Tensor<T> value) {
  Var v = constant(std::move(value));
  v.node_->requires_grad = true;
  return v;
}

template <class T>
Var<T> Var<T>::from_op(Tensor<T> value, std::vector<Var> inputs, BackwardFn<T> backward) {
  const bool record = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                     [](const Var& v) { return v.requires_grad(); });
  Var v = constant(std::move(value));
  if (record) {
    v.node_->requires_grad = true;
    v.node_->inputs = std::move(inputs);
    v.node_->backward = std::move(backward);
  }
  return v;
}

// ---------------------------------------------------------------------------
// SparseMap

template <class T>
SparseMap<T>::SparseMap(std::size_t out_size, std::size_t in_size, std::vector<Entry> entries)
    : out_size_(out_size), in_size_(in_size) {
  for (const Entry& e : entries) {
    if (e.out >= out_size || e.in >= in_size) throw StructuralError("sparse map entry out of range");
  }
  fwd_ = build(out_size, entries, false);
  bwd_ = build(in_size, std::move(entries), true);
}

template <class T>
typename SparseMap<T>::Csr SparseMap<T>::build(std::size_t rows, std::vector<Entry> entries,
                                               bool by_in) {
  auto key = [by_in](const Entry& e) { return by_in ? e.in : e.out; };
  auto other = [by_in](const Entry& e) { return by_in ? e.out : e.in; };
  std::stable_sort(entries.begin(), entries.end(),
                   [&](const Entry& a, const Entry& b) { return key(a) < key(b); });
  Csr csr;
  csr.row_ptr.assign(rows + 1, 0);
  csr.col.reserve(entries.size());
  csr.coef.reserve(entries.size());
  for (const Entry& e : entries) {
    ++csr.row_ptr[key(e) + 1];
    csr.col.push_back(other(e));
    csr.coef.push_back(e.coef);
  }
  for (std::size_t r = 0; r < rows; ++r) csr.row_ptr[r + 1] += csr.row_ptr[r];
  return csr;
}

template <class T>
void SparseMap<T>::apply(std::span<const T> x, std::span<T> y, bool transpose) const {
  const Csr& csr = transpose ? bwd_ : fwd_;
  const std::size_t rows = transpose ? in_size_ : out_size_;
  const std::size_t cols = transpose ? out_size_ : in_size_;
  if (x.size() != cols || y.size() != rows) throw StructuralError("sparse map: operand size mismatch");
  for (std::size_t r = 0; r < rows; ++r) {
    T acc{0};
    for (std::uint32_t e = csr.row_ptr[r]; e < csr.row_ptr[r + 1]; ++e) acc += csr.coef[e] * x[csr.col[e]];
    y[r] = acc;
  }
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  kernels::active<T>().add(a.value().data(), b.value().data(), out.data(), out.size());
  return Var<T>::from_op(std::move(out), {a, b}, [](const Var<T>& g) {
    return std::vector<Var<T>>{g, g};
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  kernels::active<T>().sub(a.value().data(), b.value().data(), out.data(), out.size());
  return Var<T>::from_op(std::move(out), {a, b}, [](const Var<T>& g) {
    return std::vector<Var<T>>{g, affine(g, T{-1}, T{0})};
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  kernels::active<T>().mul(a.value().data(), b.value().data(), out.data(), out.size());
  return Var<T>::from_op(std::move(out), {a, b}, [a, b](const Var<T>& g) {
    std::vector<Var<T>> gs(2);
    if (a.requires_grad()) gs[0] = mul(g, b);
    if (b.requires_grad()) gs[1] = mul(g, a);
    return gs;
  });
}

template <class T>
Var<T> affine(const Var<T>& a, T scale, T shift) {
  Tensor<T> out(a.shape());
  kernels::active<T>().affine(a.value().data(), scale, shift, out.data(), out.size());
  return Var<T>::from_op(std::move(out), {a}, [scale](const Var<T>& g) {
    return std::vector<Var<T>>{affine(g, scale, T{0})};
  });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = map_values(a.value(), [](T x) { return std::exp(x); });
  return Var<T>::from_op(std::move(out), {a}, [a](const Var<T>& g) {
    return std::vector<Var<T>>{mul(g, exp(a))};
  });
}

template <class T>
Var<T> log(const Var<T>& a) {
  Tensor<T> out = map_values(a.value(), [](T x) { return std::log(x); });
  return Var<T>::from_op(std::move(out), {a}, [a](const Var<T>& g) {
    return std::vector<Var<T>>{mul(g, reciprocal(a))};
  });
}

template <class T>
Var<T> reciprocal(const Var<T>& a) {
  Tensor<T> out = map_values(a.value(), [](T x) { return T{1} / x; });
  return Var<T>::from_op(std::move(out), {a}, [a](const Var<T>& g) {
    const Var<T> r = reciprocal(a);
    return std::vector<Var<T>>{affine(mul(g, mul(r, r)), T{-1}, T{0})};
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = map_values(a.value(), [](T x) { return stable_sigmoid(x); });
  return Var<T>::from_op(std::move(out), {a}, [a](const Var<T>& g) {
    const Var<T> s = sigmoid(a);
    return std::vector<Var<T>>{mul(g, mul(s, affine(s, T{-1}, T{1})))};
  });
}

template <class T>
Var<T> softplus(const Var<T>& a) {
  Tensor<T> out = map_values(a.value(), [](T x) { return stable_softplus(x); });
  return Var<T>::from_op(std::move(out), {a}, [a](const Var<T>& g) {
    return std::vector<Var<T>>{mul(g, sigmoid(a))};
  });
}

template <class T>
Var<T> rsqrt(const Var<T>& a, T eps) {
  Tensor<T> out = map_values(a.value(), [eps](T x) { return T{1} / std::sqrt(x + eps); });
  return Var<T>::from_op(std::move(out), {a}, [a, eps](const Var<T>& g) {
    const Var<T> r = rsqrt(a, eps);
    return std::vector<Var<T>>{affine(mul(g, mul(r, mul(r, r))), T{-0.5}, T{0})};
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) throw StructuralError("matmul: rank-2 operands required");
  const std::size_t m = trans_a ? a.shape()[1] : a.shape()[0];
  const std::size_t k = trans_a ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = trans_b ? b.shape()[1] : b.shape()[0];
  const std::size_t n = trans_b ? b.shape()[0] : b.shape()[1];
  if (k != kb) {
    throw StructuralError("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                          shape_string(b.shape()));
  }
  Tensor<T> out({m, n});
  kernels::gemm(a.value().data(), b.value().data(), out.data(), m, n, k, trans_a, trans_b);
  return Var<T>::from_op(std::move(out), {a, b}, [a, b, trans_a, trans_b](const Var<T>& g) {
    std::vector<Var<T>> gs(2);
    if (a.requires_grad()) gs[0] = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
    if (b.requires_grad()) gs[1] = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
    return gs;
  });
}

template <class T>
Var<T> add_row_bias(const Var<T>& x, const Var<T>& bias) {
  if (x.value().rank() != 2 || bias.size() != x.shape()[1]) throw StructuralError("add_row_bias: shape mismatch");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  Tensor<T> out = x.value();
  const auto& kt = kernels::active<T>();
  for (std::size_t i = 0; i < m; ++i) kt.add(out.data() + i * n, bias.value().data(), out.data() + i * n, n);
  return Var<T>::from_op(std::move(out), {x, bias}, [bias](const Var<T>& g) {
    std::vector<Var<T>> gs{g, Var<T>()};
    if (bias.requires_grad()) gs[1] = col_sum(g);
    return gs;
  });
}

template <class T>
Var<T> col_sum(const Var<T>& x) {
  if (x.value().rank() != 2) throw StructuralError("col_sum: rank-2 operand required");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  Tensor<T> out({n});
  const auto& kt = kernels::active<T>();
  for (std::size_t i = 0; i < m; ++i) kt.add(out.data(), x.value().data() + i * n, out.data(), n);
  return Var<T>::from_op(std::move(out), {x}, [m](const Var<T>& g) {
    return std::vector<Var<T>>{row_broadcast(g, m)};
  });
}

template <class T>
Var<T> row_broadcast(const Var<T>& b, std::size_t rows) {
  const std::size_t n = b.size();
  Tensor<T> out({rows, n});
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(b.value().data(), n, out.data() + i * n);
  const Shape in_shape = b.shape();
  return Var<T>::from_op(std::move(out), {b}, [in_shape](const Var<T>& g) {
    return std::vector<Var<T>>{reshape(col_sum(g), in_shape)};
  });
}

template <class T>
Var<T> linear_map(const MapPtr<T>& map, const Var<T>& x, Shape out_shape, bool transpose) {
  const std::size_t expect_in = transpose ? map->out_size() : map->in_size();
  const std::size_t expect_out = transpose ? map->in_size() : map->out_size();
  if (x.size() != expect_in || shape_size(out_shape) != expect_out) {
    throw StructuralError("linear_map: operand " + shape_string(x.shape()) + " or output " +
                          shape_string(out_shape) + " does not fit map");
  }
  Tensor<T> out(std::move(out_shape));
  map->apply(x.value().span(), out.span(), transpose);
  const Shape in_shape = x.shape();
  return Var<T>::from_op(std::move(out), {x}, [map, in_shape, transpose](const Var<T>& g) {
    return std::vector<Var<T>>{linear_map(map, g, in_shape, !transpose)};
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const Shape in_shape = x.shape();
  return Var<T>::from_op(std::move(out), {x}, [in_shape](const Var<T>& g) {
    return std::vector<Var<T>>{reshape(g, in_shape)};
  });
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
  T acc{0};
  for (const T v : x.value().values()) acc += v;
  const Shape in_shape = x.shape();
  return Var<T>::from_op(Tensor<T>({1}, std::vector<T>{acc}), {x}, [in_shape](const Var<T>& g) {
    return std::vector<Var<T>>{broadcast_scalar(g, in_shape)};
  });
}

template <class T>
Var<T> broadcast_scalar(const Var<T>& s, Shape shape) {
  if (s.size() != 1) throw StructuralError("broadcast_scalar: expected a single value");
  Tensor<T> out(std::move(shape), s.value()[0]);
  return Var<T>::from_op(std::move(out), {s}, [](const Var<T>& g) {
    return std::vector<Var<T>>{sum_all(g)};
  });
}

template <class T>
Var<T> dot_constant(const Var<T>& x, const Tensor<T>& c) {
  if (x.size() != c.size()) throw StructuralError("dot_constant: size mismatch");
  return sum_all(mul(x, Var<T>::constant(c.reshaped(x.shape()))));
}

// ---------------------------------------------------------------------------
// Reverse sweep

template <class T>
std::vector<Var<T>> grad(const Var<T>& output, std::span<const Var<T>> inputs, bool create_graph) {
  if (output.size() != 1) throw StructuralError("grad: output must be a scalar");
  std::vector<Var<T>> result(inputs.size());
  auto zeros_like = [](const Var<T>& v) { return Var<T>::constant(Tensor<T>(v.shape())); };
  if (!output.requires_grad()) {
    for (std::size_t i = 0; i < inputs.size(); ++i) result[i] = zeros_like(inputs[i]);
    return result;
  }

  // Post-order DFS, then walk it backwards.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{output.node().get(), 0}};
  visited.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].node().get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::optional<NoGradGuard> no_grad;
  if (!create_graph) no_grad.emplace();

  std::unordered_map<Node<T>*, Var<T>> grads;
  grads[output.node().get()] = Var<T>::constant(Tensor<T>(output.shape(), T{1}));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward) continue;
    const Var<T> g = found->second;
    std::vector<Var<T>> in_grads = node->backward(g);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Var<T>& in = node->inputs[i];
      if (!in.requires_grad() || !in_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(in.node().get(), in_grads[i]);
      if (!inserted) slot->second = add(slot->second, in_grads[i]);
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto found = inputs[i].defined() ? grads.find(inputs[i].node().get()) : grads.end();
    result[i] = found != grads.end() ? found->second : zeros_like(inputs[i]);
  }
  return result;
}

#define DDPRUNE_INSTANTIATE(T)                                                               \
  template class Var<T>;                                                                     \
  template class SparseMap<T>;                                                               \
  template Var<T> add(const Var<T>&, const Var<T>&);                                         \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                         \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                         \
  template Var<T> affine(const Var<T>&, T, T);                                               \
  template Var<T> exp(const Var<T>&);                                                        \
  template Var<T> log(const Var<T>&);                                                        \
  template Var<T> reciprocal(const Var<T>&);                                                 \
  template Var<T> sigmoid(const Var<T>&);                                                    \
  template Var<T> softplus(const Var<T>&);                                                   \
  template Var<T> rsqrt(const Var<T>&, T);                                                   \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                          \
  template Var<T> add_row_bias(const Var<T>&, const Var<T>&);                                \
  template Var<T> col_sum(const Var<T>&);                                                    \
  template Var<T> row_broadcast(const Var<T>&, std::size_t);                                 \
  template Var<T> linear_map(const MapPtr<T>&, const Var<T>&, Shape, bool);                  \
  template Var<T> reshape(const Var<T>&, Shape);                                             \
  template Var<T> sum_all(const Var<T>&);                                                    \
  template Var<T> broadcast_scalar(const Var<T>&, Shape);                                    \
  template Var<T> dot_constant(const Var<T>&, const Tensor<T>&);                             \
  template std::vector<Var<T>> grad(const Var<T>&, std::span<const Var<T>>, bool);

DDPRUNE_INSTANTIATE(float)
DDPRUNE_INSTANTIATE(double)

}  // namespace ag
}  // namespace ddprune
