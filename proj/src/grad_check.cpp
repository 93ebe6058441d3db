#include "mmunet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mmunet/error.hpp"

namespace mmunet {

namespace {

Real checked(Real v, std::size_t coord, const char* what) {
  if (!std::isfinite(v))
    throw NumericalError(std::string("grad_check: non-finite ") + what + " at coordinate " + std::to_string(coord));
  return v;
}

Real compare(const std::function<Tensor()>& loss, Tensor& param, std::span<const Real> analytic, Real step,
             std::span<const std::size_t> coords) {
  Real worst = 0;
  auto values = param.mutable_data();
  for (std::size_t i : coords) {
    if (i >= values.size()) throw ConfigError("grad_check: coordinate " + std::to_string(i) + " out of range");
    const Real saved = values[i];
    Real up, down;
    {
      NoGradGuard guard;
      values[i] = saved + step;
      up = checked(loss().item(), i, "value at +step");
      values[i] = saved - step;
      down = checked(loss().item(), i, "value at -step");
    }
    values[i] = saved;
    const Real numeric = (up - down) / (2 * step);
    const Real a = checked(analytic.empty() ? Real(0) : analytic[i], i, "analytic gradient");
    worst = std::max(worst, std::abs(a - numeric) / std::max(Real(1), std::abs(a)));
  }
  return worst;
}

}  // namespace

Real grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, Real step) {
  Tensor x(point.shape(), std::vector<Real>(point.data().begin(), point.data().end()), true);
  Tensor y = f(x);
  checked(y.item(), 0, "function value");
  y.backward();
  std::vector<Real> analytic(x.numel(), Real(0));
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  return compare([&] { return f(x); }, x, analytic, step, coords);
}

Real grad_check_param(const std::function<Tensor()>& loss, Tensor param, Real step,
                      std::span<const std::size_t> coords) {
  param.zero_grad();
  Tensor y = loss();
  checked(y.item(), 0, "function value");
  y.backward();
  std::vector<Real> analytic(param.numel(), Real(0));
  if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
  param.zero_grad();
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(param.numel());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coords = all;
  }
  return compare(loss, param, analytic, step, coords);
}

}  // namespace mmunet
