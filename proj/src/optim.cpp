#include "mmunet/optim.hpp"

#include <cmath>

#include "mmunet/error.hpp"

namespace mmunet {

Real poly_lr(std::size_t epoch, std::size_t max_epoch, Real init_lr, Real exponent) {
  if (max_epoch == 0) throw ConfigError("poly_lr: max_epoch must be positive");
  if (epoch > max_epoch)
    throw ConfigError("poly_lr: epoch " + std::to_string(epoch) + " beyond max_epoch " + std::to_string(max_epoch));
  return init_lr * std::pow(Real(1) - Real(epoch) / Real(max_epoch), exponent);
}

Sgd::Sgd(ParamSet& params) : params_(params) {
  for (const auto& [_, t] : params_.items()) velocity_.emplace_back(t.numel(), Real(0));
}

void Sgd::step(Real lr, Real momentum, Real weight_decay) {
  const auto& items = params_.items();
  if (items.size() != velocity_.size()) throw ConfigError("sgd: parameter set changed after construction");
  for (std::size_t p = 0; p < items.size(); ++p) {
    Tensor t = items[p].second;
    const auto g = t.grad();
    if (t.has_grad())
      for (Real x : g)
        if (!std::isfinite(x)) throw NumericalError("non-finite gradient in parameter '" + items[p].first + "'");
    auto theta = t.mutable_data();
    auto& v = velocity_[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const Real gi = t.has_grad() ? g[i] : Real(0);
      v[i] = momentum * v[i] + (gi + weight_decay * theta[i]);
      theta[i] -= lr * v[i];
    }
  }
}

Adam::Adam(std::vector<Tensor> params, Real beta1, Real beta2, Real eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& t : params_) {
    m_.emplace_back(t.numel(), Real(0));
    v_.emplace_back(t.numel(), Real(0));
  }
}

void Adam::step(Real lr) {
  ++t_;
  const Real c1 = 1 - std::pow(beta1_, Real(t_));
  const Real c2 = 1 - std::pow(beta2_, Real(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p];
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto theta = t.mutable_data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericalError("adam: non-finite gradient");
      m_[p][i] = beta1_ * m_[p][i] + (1 - beta1_) * g[i];
      v_[p][i] = beta2_ * v_[p][i] + (1 - beta2_) * g[i] * g[i];
      theta[i] -= lr * (m_[p][i] / c1) / (std::sqrt(v_[p][i] / c2) + eps_);
    }
  }
}

}  // namespace mmunet
