#include "ddprune/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddprune/kernels.hpp"

namespace ddprune {
namespace {

void check_labels(std::size_t batch, std::size_t classes, std::span<const Label> labels) {
  if (batch == 0) throw DomainError("cross_entropy: empty batch");
  if (labels.size() != batch) {
    throw StructuralError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(batch));
  }
  for (const Label y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DomainError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

template <class T>
T dot(const std::vector<T>& a, const std::vector<T>& b) {
  return kernels::active<T>().dot(a.data(), b.data(), a.size());
}

template <class T>
void require_finite(const ParamVector<T>& v, const char* what, std::size_t step) {
  if (!v.all_finite()) {
    throw NumericError(std::string(what) + " became non-finite at inner step " + std::to_string(step));
  }
}

}  // namespace

template <class T>
T cross_entropy(const Tensor<T>& logits, std::span<const Label> labels) {
  if (logits.rank() != 2) throw StructuralError("cross_entropy: logits must be [B x C]");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  check_labels(batch, classes, labels);
  if (!logits.all_finite()) throw NumericError("cross_entropy: non-finite logits");
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = logits.data() + b * classes;
    const double m = *std::max_element(row, row + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(static_cast<double>(row[c]) - m);
    total += m + std::log(s) - static_cast<double>(row[labels[b]]);
  }
  return static_cast<T>(total / static_cast<double>(batch));
}

template <class T>
ag::Var<T> cross_entropy(const ag::Var<T>& logits, std::span<const Label> labels) {
  if (logits.value().rank() != 2) throw StructuralError("cross_entropy: logits must be [B x C]");
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  check_labels(batch, classes, labels);
  if (!logits.value().all_finite()) throw NumericError("cross_entropy: non-finite logits");

  // The row max is a constant shift: log-sum-exp is invariant to it, so
  // treating it as non-differentiable is exact at every derivative order.
  Tensor<T> shift(logits.shape());
  std::vector<typename ag::SparseMap<T>::Entry> row_sum, pick;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = logits.value().data() + b * classes;
    std::fill_n(shift.data() + b * classes, classes, *std::max_element(row, row + classes));
    for (std::size_t c = 0; c < classes; ++c) {
      row_sum.push_back({static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b * classes + c), T{1}});
    }
    pick.push_back({0, static_cast<std::uint32_t>(b * classes + static_cast<std::size_t>(labels[b])),
                    T{-1} / static_cast<T>(batch)});
  }
  const auto row_sum_map = std::make_shared<const ag::SparseMap<T>>(batch, batch * classes, std::move(row_sum));
  const auto pick_map = std::make_shared<const ag::SparseMap<T>>(1, batch * classes, std::move(pick));

  const auto z = ag::sub(logits, ag::Var<T>::constant(std::move(shift)));
  const auto lse = ag::log(ag::linear_map(row_sum_map, ag::exp(z), {batch}));
  const auto log_probs = ag::sub(z, ag::linear_map(row_sum_map, lse, logits.shape(), true));
  return ag::linear_map(pick_map, log_probs, {1});
}

template <class T>
T loss_value(const InnerLoss<T>& loss, const ParamVector<T>& params, const Tensor<T>& images) {
  ag::NoGradGuard no_grad;
  const auto vars = params.constants();
  return loss(vars, ag::Var<T>::constant(images)).value()[0];
}

template <class T>
ParamVector<T> loss_gradient(const InnerLoss<T>& loss, const ParamVector<T>& params, const Tensor<T>& images) {
  const auto leaves = params.leaves();
  const auto value = loss(leaves, ag::Var<T>::constant(images));
  const auto grads = ag::grad<T>(value, leaves, false);
  return gather_segments<T>(params.layout(), grads);
}

template <class T>
ParamVector<T> hessian_vector_product(const InnerLoss<T>& loss, const ParamVector<T>& params,
                                      const Tensor<T>& images, const ParamVector<T>& v) {
  if (v.size() != params.size()) {
    throw StructuralError("hvp: direction has " + std::to_string(v.size()) + " entries, parameters " +
                          std::to_string(params.size()));
  }
  const auto leaves = params.leaves();
  const auto value = loss(leaves, ag::Var<T>::constant(images));
  const auto g = ag::grad<T>(value, leaves, true);
  const auto v_parts = v.unflatten();
  ag::Var<T> inner;
  for (std::size_t s = 0; s < g.size(); ++s) {
    const auto term = ag::dot_constant(g[s], v_parts[s]);
    inner = inner.defined() ? ag::add(inner, term) : term;
  }
  const auto hv = ag::grad<T>(inner, leaves, false);
  return gather_segments<T>(params.layout(), hv);
}

template <class T>
MetaGradients<T> backprop_through_training(std::span<const InnerLoss<T>> steps,
                                           std::span<const ParamVector<T>> states, T alpha,
                                           const Tensor<T>& images, const ParamVector<T>& upstream) {
  if (states.size() != steps.size() + 1) {
    throw StructuralError("backprop_through_training: need J + 1 = " + std::to_string(steps.size() + 1) +
                          " states, got " + std::to_string(states.size()));
  }
  if (upstream.size() != states.front().size()) throw StructuralError("backprop_through_training: upstream length mismatch");

  MetaGradients<T> out{Tensor<T>(images.shape()), T{0}};
  ParamVector<T> d_theta = upstream;
  const auto& kt = kernels::active<T>();
  for (std::size_t jj = steps.size(); jj-- > 0;) {
    const ParamVector<T>& theta = states[jj];
    const auto leaves = theta.leaves();
    const auto image_leaf = ag::Var<T>::leaf(images);
    const auto value = steps[jj](leaves, image_leaf);
    const auto g = ag::grad<T>(value, leaves, true);

    // d_alpha accumulates -<d_theta_{j+1}, g_j>.
    const ParamVector<T> g_flat = gather_segments<T>(theta.layout(), g);
    require_finite(g_flat, "inner gradient", jj);
    out.d_alpha -= dot(d_theta.values(), g_flat.values());

    const auto d_parts = d_theta.unflatten();
    ag::Var<T> inner;
    for (std::size_t s = 0; s < g.size(); ++s) {
      const auto term = ag::dot_constant(g[s], d_parts[s]);
      inner = inner.defined() ? ag::add(inner, term) : term;
    }
    std::vector<ag::Var<T>> wrt(leaves.begin(), leaves.end());
    wrt.push_back(image_leaf);
    const auto second = ag::grad<T>(inner, wrt, false);

    // d_images += -alpha (dg/dx)^T d ; d_theta_j = d - alpha H d
    kt.axpy(-alpha, second.back().value().data(), out.d_images.data(), out.d_images.size());
    const ParamVector<T> hd = gather_segments<T>(theta.layout(), std::span(second.data(), leaves.size()));
    kt.axpy(-alpha, hd.values().data(), d_theta.values().data(), d_theta.size());
    require_finite(d_theta, "parameter adjoint", jj);
  }
  if (!out.d_images.all_finite() || !std::isfinite(out.d_alpha)) {
    throw NumericError("backprop_through_training: non-finite meta-gradient");
  }
  return out;
}

template <class T>
InnerLoss<T> network_loss(const ArchSpec& spec, std::vector<Label> labels) {
  return [spec, labels = std::move(labels)](std::span<const ag::Var<T>> params, const ag::Var<T>& images) {
    return cross_entropy<T>(forward<T>(spec, params, images), labels);
  };
}

template <class T>
ParamVector<T> grad_inner(const ArchSpec& spec, const ParamVector<T>& params, const Tensor<T>& images,
                          std::span<const Label> labels) {
  if (params.size() != param_count(spec)) throw StructuralError(spec.name() + ": parameter count mismatch");
  return loss_gradient<T>(network_loss<T>(spec, {labels.begin(), labels.end()}), params, images);
}

template <class T>
ParamVector<T> hvp(const ArchSpec& spec, const ParamVector<T>& params, const Tensor<T>& images,
                   std::span<const Label> labels, const ParamVector<T>& v) {
  if (params.size() != param_count(spec)) throw StructuralError(spec.name() + ": parameter count mismatch");
  return hessian_vector_product<T>(network_loss<T>(spec, {labels.begin(), labels.end()}), params, images, v);
}

#define DDPRUNE_INSTANTIATE(T)                                                                              \
  template T cross_entropy(const Tensor<T>&, std::span<const Label>);                                       \
  template ag::Var<T> cross_entropy(const ag::Var<T>&, std::span<const Label>);                             \
  template T loss_value(const InnerLoss<T>&, const ParamVector<T>&, const Tensor<T>&);                      \
  template ParamVector<T> loss_gradient(const InnerLoss<T>&, const ParamVector<T>&, const Tensor<T>&);      \
  template ParamVector<T> hessian_vector_product(const InnerLoss<T>&, const ParamVector<T>&,                \
                                                 const Tensor<T>&, const ParamVector<T>&);                  \
  template MetaGradients<T> backprop_through_training(std::span<const InnerLoss<T>>,                        \
                                                      std::span<const ParamVector<T>>, T, const Tensor<T>&, \
                                                      const ParamVector<T>&);                               \
  template InnerLoss<T> network_loss(const ArchSpec&, std::vector<Label>);                                  \
  template ParamVector<T> grad_inner(const ArchSpec&, const ParamVector<T>&, const Tensor<T>&,              \
                                     std::span<const Label>);                                               \
  template ParamVector<T> hvp(const ArchSpec&, const ParamVector<T>&, const Tensor<T>&,                     \
                              std::span<const Label>, const ParamVector<T>&);

DDPRUNE_INSTANTIATE(float)
DDPRUNE_INSTANTIATE(double)

}  // namespace ddprune
