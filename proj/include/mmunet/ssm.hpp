#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mmunet/tensor.hpp"

// Linear time-invariant state-space machinery: continuous parameters, ZOH
// discretization, the recurrent and convolutional evaluation paths, and the
// equivalent lower-triangular "attention" operator.
namespace mmunet::ssm {

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

/// Continuous system h' = A h + B x, y = C h, with step size delta.
struct SsmParams {
  Matrix a;  // N x N
  Vector b;  // N
  Vector c;  // N (the 1 x N output row, stored as a column)
  Real delta = Real(0.01);

  std::size_t state_dim() const { return static_cast<std::size_t>(a.rows()); }
  void validate() const;
};

struct DiscreteSsm {
  Matrix a_bar;
  Vector b_bar;
  Vector c;

  std::size_t state_dim() const { return static_cast<std::size_t>(a_bar.rows()); }
};

struct SsmKernel {
  std::vector<Real> k;
};

/// HiPPO-LegS state matrix: -sqrt(2n+1) sqrt(2k+1) below the diagonal,
/// -(n+1) on it, zero above (0-indexed).
Matrix hippo_legs(std::size_t n);

/// exp(M) and phi1(M) = sum_k M^k / (k+1)! by truncated Taylor series with
/// scaling and squaring. phi1 stays well defined for singular M.
struct ExpPhi {
  Matrix exp;
  Matrix phi1;
};
ExpPhi exp_and_phi1(const Matrix& m);

/// A_bar = exp(delta A); B_bar = delta * phi1(delta A) * B, which equals
/// (delta A)^-1 (exp(delta A) - I) delta B whenever delta A is invertible.
DiscreteSsm zoh_discretize(const SsmParams& p);

/// y_t = C h_t with h_t = A_bar h_{t-1} + B_bar x_t and h_{-1} = h0 (zero when empty).
std::vector<Real> recurrent_scan(const DiscreteSsm& d, std::span<const Real> x, std::span<const Real> h0 = {});

/// K[i] = C A_bar^i B_bar via iterated matrix-vector products.
SsmKernel kernel_materialize(const DiscreteSsm& d, std::size_t length);

/// Causal convolution y_t = sum_{i <= t} K[i] x[t - i]. Lengths must match.
std::vector<Real> kernel_apply(const SsmKernel& k, std::span<const Real> x);

/// Lower-triangular M with M[t, s] = C A_bar^(t-s) B_bar, so recurrent_scan(x) = M x.
Matrix attention_matrix(const DiscreteSsm& d, std::size_t length);

Real spectral_radius(const Matrix& m);

// Differentiable pieces for training a static system.

/// K[i] = C A_bar^i (input_map * b) for trainable b, c [N]. `a_bar` and
/// `input_map` (B_bar = input_map * B) are held fixed.
Tensor ssm_kernel(const Matrix& a_bar, const Matrix& input_map, const Tensor& b, const Tensor& c,
                  std::size_t length);

/// Causal convolution of two [L] tensors, differentiable in both.
Tensor causal_conv(const Tensor& kernel, const Tensor& x);

}  // namespace mmunet::ssm
