#pragma once

#include <vector>

#include "mmunet/layers.hpp"

namespace mmunet {

/// init_lr * (1 - e / max_epoch)^exponent for 0 <= e <= max_epoch.
Real poly_lr(std::size_t epoch, std::size_t max_epoch, Real init_lr, Real exponent = Real(0.9));

/// Heavy-ball SGD: v <- mu v + (g + lambda theta); theta <- theta - lr v.
/// A parameter without a gradient is treated as having g = 0.
class Sgd {
 public:
  explicit Sgd(ParamSet& params);

  /// Raises NumericalError naming the parameter when a gradient is non-finite.
  void step(Real lr, Real momentum, Real weight_decay);

 private:
  ParamSet& params_;
  std::vector<std::vector<Real>> velocity_;
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, Real beta1 = Real(0.9), Real beta2 = Real(0.999), Real eps = Real(1e-8));
  void step(Real lr);

 private:
  std::vector<Tensor> params_;
  Real beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<Real>> m_, v_;
};

}  // namespace mmunet
