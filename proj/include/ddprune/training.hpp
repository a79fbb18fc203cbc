#pragma once

#include <functional>

#include "ddprune/data.hpp"
#include "ddprune/models.hpp"
#include "ddprune/rng.hpp"

namespace ddprune {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 20;
};

// Called after every epoch with the 1-based epoch index and current parameters.
using EpochCallback = std::function<void(std::size_t epoch, const ParamVector<float>& params)>;

// Minibatch SGD with heavy-ball momentum (v <- mu v + g, theta <- theta - lr v),
// reshuffling every epoch from `rng`. Throws NumericError on a non-finite loss.
ParamVector<float> sgd_train(const ArchSpec& spec, ParamVector<float> params, const LabeledDataset& train,
                             const SgdConfig& cfg, Rng& rng, const EpochCallback& on_epoch = {});

// Fraction of correctly classified examples.
double accuracy(const ArchSpec& spec, const ParamVector<float>& params, const LabeledDataset& data,
                std::size_t batch_size = 256);

}  // namespace ddprune
