#pragma once

// Differentiable numerics for the inner problem: cross-entropy, parameter
// gradients, Hessian-vector products and the reverse sweep through a
// sequence of unrolled SGD updates.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ddprune/autograd.hpp"
#include "ddprune/models.hpp"
#include "ddprune/params.hpp"

namespace ddprune {

using Label = std::int32_t;

// Inner objective of one student update, as a function of the parameter
// segments and the full (learnable) image block.
template <class T>
using InnerLoss = std::function<ag::Var<T>(std::span<const ag::Var<T>> params, const ag::Var<T>& images)>;

template <class T>
struct MetaGradients {
  Tensor<T> d_images;
  T d_alpha = T{0};
};

// Mean over the batch of -log softmax(logits)[label].
template <class T>
T cross_entropy(const Tensor<T>& logits, std::span<const Label> labels);
template <class T>
ag::Var<T> cross_entropy(const ag::Var<T>& logits, std::span<const Label> labels);

template <class T>
T loss_value(const InnerLoss<T>& loss, const ParamVector<T>& params, const Tensor<T>& images);

template <class T>
ParamVector<T> loss_gradient(const InnerLoss<T>& loss, const ParamVector<T>& params, const Tensor<T>& images);

// H v by differentiating the dot product <grad, v> a second time.
template <class T>
ParamVector<T> hessian_vector_product(const InnerLoss<T>& loss, const ParamVector<T>& params,
                                      const Tensor<T>& images, const ParamVector<T>& v);

// Reverse accumulation through theta_{j+1} = theta_j - alpha * grad_j(theta_j, images).
// `states` holds theta_0..theta_J (J + 1 entries, J == steps.size()) and
// `upstream` is dOuter/dtheta_J. Throws NumericError naming the step index
// on a non-finite intermediate.
template <class T>
MetaGradients<T> backprop_through_training(std::span<const InnerLoss<T>> steps,
                                           std::span<const ParamVector<T>> states, T alpha,
                                           const Tensor<T>& images, const ParamVector<T>& upstream);

// Cross-entropy of a network on a fixed labelled batch.
template <class T>
InnerLoss<T> network_loss(const ArchSpec& spec, std::vector<Label> labels);

template <class T>
ParamVector<T> grad_inner(const ArchSpec& spec, const ParamVector<T>& params, const Tensor<T>& images,
                          std::span<const Label> labels);

template <class T>
ParamVector<T> hvp(const ArchSpec& spec, const ParamVector<T>& params, const Tensor<T>& images,
                   std::span<const Label> labels, const ParamVector<T>& v);

}  // namespace ddprune
