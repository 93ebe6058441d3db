#pragma once

#include <functional>
#include <span>

#include "mmunet/tensor.hpp"

namespace mmunet {

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for the scalar function f at `point`. Raises NumericalError naming the
/// coordinate when any evaluation is non-finite.
Real grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, Real step);

/// Same measure for d loss / d param, perturbing `param` in place and
/// restoring it afterwards. Checks `coords` only, or every entry when empty.
Real grad_check_param(const std::function<Tensor()>& loss, Tensor param, Real step,
                      std::span<const std::size_t> coords = {});

}  // namespace mmunet
