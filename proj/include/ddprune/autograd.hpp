#pragma once

// Tensor-level reverse-mode autodiff. Every backward rule is itself written in
// terms of differentiable ops, so gradients of gradients (Hessian-vector
// products, mixed parameter/pixel second derivatives) come from running the
// same machinery twice.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ddprune/tensor.hpp"

namespace ddprune::ag {

template <class T>
class Var;

template <class T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& grad_out)>;

template <class T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<Var<T>> inputs;
  BackwardFn<T> backward;
};

template <class T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value);
  // A differentiable input (parameters, distilled pixels).
  static Var leaf(Tensor<T> value);
  static Var from_op(Tensor<T> value, std::vector<Var> inputs, BackwardFn<T> backward);

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Sparse linear operator stored as CSR in both directions. Used for every
// structural reshuffle that is linear in its input: im2col, pooling, group
// means, row sums, label selection, minibatch gather and augmentation.
template <class T>
class SparseMap {
 public:
  struct Entry {
    std::uint32_t out;
    std::uint32_t in;
    T coef;
  };

  SparseMap(std::size_t out_size, std::size_t in_size, std::vector<Entry> entries);

  std::size_t out_size() const { return out_size_; }
  std::size_t in_size() const { return in_size_; }
  std::size_t nnz() const { return fwd_.col.size(); }

  // y = M x (transpose == false) or y = M^T x.
  void apply(std::span<const T> x, std::span<T> y, bool transpose) const;

 private:
  struct Csr {
    std::vector<std::uint32_t> row_ptr;
    std::vector<std::uint32_t> col;
    std::vector<T> coef;
  };
  static Csr build(std::size_t rows, std::vector<Entry> entries, bool by_in);

  std::size_t out_size_;
  std::size_t in_size_;
  Csr fwd_;
  Csr bwd_;
};

template <class T>
using MapPtr = std::shared_ptr<const SparseMap<T>>;

// Elementwise (identical shapes).
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
// scale * a + shift
template <class T> Var<T> affine(const Var<T>& a, T scale, T shift);
template <class T> Var<T> exp(const Var<T>& a);
template <class T> Var<T> log(const Var<T>& a);
template <class T> Var<T> reciprocal(const Var<T>& a);
template <class T> Var<T> sigmoid(const Var<T>& a);
template <class T> Var<T> softplus(const Var<T>& a);
// (a + eps)^(-1/2)
template <class T> Var<T> rsqrt(const Var<T>& a, T eps);

// op(a) * op(b) for rank-2 operands.
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b);
// x[m x n] + 1 * bias[n]^T
template <class T> Var<T> add_row_bias(const Var<T>& x, const Var<T>& bias);
// [m x n] -> [n]
template <class T> Var<T> col_sum(const Var<T>& x);
// [n] -> [m x n]
template <class T> Var<T> row_broadcast(const Var<T>& b, std::size_t rows);

template <class T>
Var<T> linear_map(const MapPtr<T>& map, const Var<T>& x, Shape out_shape, bool transpose = false);
template <class T> Var<T> reshape(const Var<T>& x, Shape shape);
// -> shape [1]
template <class T> Var<T> sum_all(const Var<T>& x);
// scalar [1] -> shape filled with that value
template <class T> Var<T> broadcast_scalar(const Var<T>& s, Shape shape);
// sum(x * c) for a constant tensor c
template <class T> Var<T> dot_constant(const Var<T>& x, const Tensor<T>& c);

// Gradients of scalar `output` with respect to `inputs`. With create_graph the
// returned Vars are themselves differentiable.
template <class T>
std::vector<Var<T>> grad(const Var<T>& output, std::span<const Var<T>> inputs, bool create_graph);

}  // namespace ddprune::ag
