#pragma once

#include <span>

#include "mmunet/tensor.hpp"

// Differentiable operations. Volumes are laid out [B, C, D, H, W]; sequences
// [B, C, L]. Shape violations raise ShapeError with both shapes in the message.
namespace mmunet::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Real slope = Real(0.01));

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Same values, new shape of equal element count.
Tensor reshape(const Tensor& x, Shape shape);

/// Concatenation along axis 1.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Softmax along axis 1 for every batch item and trailing position.
Tensor softmax_channels(const Tensor& x);

/// Per-position channel mixing: out[b, o, s] = bias[o] + sum_i w[o, i] x[b, i, s]
/// over any trailing extent s. `bias` may be undefined.
Tensor channel_linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Cross-correlation; weights [out, in, kd, kh, kw], bias [out] (may be undefined).
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, Int3 stride = {1, 1, 1}, Int3 pad = {0, 0, 0});

/// Transposed convolution without padding; weights [in, out, kd, kh, kw].
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& bias, Int3 stride);

/// Per-(batch, channel) normalization over all trailing positions, then the
/// per-channel affine map gamma * x_hat + beta.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps);

/// Treats x as [outer, V] with V = perm.size() and writes out[o, perm[i]] = x[o, i].
/// The result takes `out_shape`, which must hold the same element count.
Tensor permute_last(const Tensor& x, std::span<const std::size_t> perm, Shape out_shape);

/// Reverses the selected spatial axes (D, H, W) of a [B, C, D, H, W] tensor.
Tensor flip_spatial(const Tensor& x, bool d, bool h, bool w);

/// Diagonal-state selective scan. u, delta: [B, C, L]; b, c: [B, N, L];
/// a: [C, N]. The recurrence restarts every `segment` positions (0 = never).
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& b, const Tensor& c, const Tensor& a,
                      std::size_t segment = 0);

}  // namespace mmunet::ops
