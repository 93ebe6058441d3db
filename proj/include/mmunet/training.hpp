#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmunet/network.hpp"
#include "mmunet/synthetic.hpp"

namespace mmunet {

struct TrainConfig {
  Real init_lr = Real(1e-3);
  std::size_t max_epoch = 50;
  std::size_t iters_per_epoch = 50;
  Real momentum = Real(0.99);
  Real weight_decay = Real(3e-5);
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;
  std::vector<Real> ds_weights = {Real(4) / 7, Real(2) / 7, Real(1) / 7};

  void validate() const;
  /// Keys mirror the field names; ds_weights is a comma-separated list that
  /// gets normalized to sum 1.
  void read(KvReader& kv);
  KvMap to_kv() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  Real lr = 0;
  Real train_loss = 0;
  Real val_dice_mean = 0;
  std::vector<Real> val_dice;  // per class, 0..K-1
};

/// Header plus one row per epoch: epoch, lr, train_loss, val_dice_mean, dice_0..dice_{K-1}.
std::string format_train_log(const std::vector<EpochLog>& log, std::size_t classes);

/// Per-class Dice averaged over the given samples, predicting with a single
/// forward pass and argmax.
std::vector<Real> evaluate_dice(const Model& model, const Dataset& data, const std::vector<std::size_t>& idx);

/// Runs max_epoch x iters_per_epoch SGD steps on random training batches with
/// the poly schedule. On a non-finite loss the parameters are rolled back to
/// the end of the last completed epoch and NumericalError is raised.
std::vector<EpochLog> train(Model& model, const Dataset& data, const TrainConfig& cfg,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace mmunet
