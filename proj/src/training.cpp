#include "ddprune/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddprune/kernels.hpp"

namespace ddprune {

ParamVector<float> sgd_train(const ArchSpec& spec, ParamVector<float> params, const LabeledDataset& train,
                             const SgdConfig& cfg, Rng& rng, const EpochCallback& on_epoch) {
  if (train.size() == 0) throw DomainError("sgd_train: empty training set");
  if (params.size() != param_count(spec)) throw StructuralError(spec.name() + ": parameter count mismatch");
  const std::size_t batch = std::max<std::size_t>(1, std::min(cfg.batch_size, train.size()));
  const auto& kt = kernels::active<float>();
  std::vector<float> velocity(params.size(), 0.0f);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto lr = static_cast<float>(cfg.lr);
  const auto mu = static_cast<float>(cfg.momentum);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    try {
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
        const auto images = train.gather<float>(idx);
        const auto labels = train.gather_labels(idx);
        const auto loss = network_loss<float>(spec, labels);
        const auto leaves = params.leaves();
        const auto value = loss(leaves, ag::Var<float>::constant(images));
        if (!std::isfinite(value.value()[0])) {
          throw NumericError("training loss became non-finite");
        }
        const auto g = gather_segments<float>(params.layout(), ag::grad<float>(value, leaves, false));
        kt.affine(velocity.data(), mu, 0.0f, velocity.data(), velocity.size());
        kt.add(velocity.data(), g.values().data(), velocity.data(), velocity.size());
        kt.axpy(-lr, velocity.data(), params.values().data(), params.size());
      }
      if (!params.all_finite()) throw NumericError("parameters became non-finite");
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (on_epoch) on_epoch(epoch, params);
  }
  return params;
}

double accuracy(const ArchSpec& spec, const ParamVector<float>& params, const LabeledDataset& data,
                std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto logits = forward<float>(spec, params, data.gather<float>(idx));
    const std::size_t classes = logits.dim(1);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const float* row = logits.data() + k * classes;
      const auto pred = static_cast<Label>(std::max_element(row, row + classes) - row);
      if (pred == data.labels[idx[k]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ddprune
