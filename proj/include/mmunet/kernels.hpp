#pragma once

// Raw compute kernels behind the differentiable ops.
//
// Every kernel exists twice: the default OpenMP version parallelizes over
// independent output slices only (batch/channel pairs or depth slabs) and
// reduces partial sums in a fixed order, so results do not depend on the
// thread count.
// The `serial` namespace holds plain nested-loop references used by the tests
// and the benchmark.

#include <cstddef>
#include <vector>

#include "mmunet/tensor.hpp"

namespace mmunet::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  Int3 in{1, 1, 1};
  Int3 out{1, 1, 1};
  Int3 kernel{1, 1, 1};
  Int3 stride{1, 1, 1};
  Int3 pad{0, 0, 0};

  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
};

/// Output extents of a (cross-correlation) convolution; throws ShapeError when
/// the padded input is smaller than the kernel.
Int3 conv_output_extent(const Int3& in, const Int3& kernel, const Int3& stride, const Int3& pad);

/// Output extents of a transposed convolution without padding.
Int3 conv_transpose_output_extent(const Int3& in, const Int3& kernel, const Int3& stride);

// Selective scan over [batch, channels, length] sequences with diagonal state
// matrices A[channels, state] and input-dependent delta/B/C. The state is reset
// to zero at every multiple of `segment`.
struct ScanGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t state = 1;
  std::size_t length = 1;
  std::size_t segment = 1;
};

struct ScanInputs {
  const Real* u;      // [B, C, L]
  const Real* delta;  // [B, C, L]
  const Real* b;      // [B, N, L]
  const Real* c;      // [B, N, L]
  const Real* a;      // [C, N]
};

struct ScanGrads {
  Real* u;      // may be null
  Real* delta;  // may be null
  Real* b;      // may be null
  Real* c;      // may be null
  Real* a;      // may be null
};

// Weights: conv [out, in, kd, kh, kw]; transposed conv [in, out, kd, kh, kw].
// Backward kernels accumulate into their outputs.
void conv3d_forward(const ConvGeometry& g, const Real* in, const Real* w, const Real* bias, Real* out);
void conv3d_backward_input(const ConvGeometry& g, const Real* gout, const Real* w, Real* gin);
void conv3d_backward_weight(const ConvGeometry& g, const Real* gout, const Real* in, Real* gw, Real* gbias);

void conv_transpose3d_forward(const ConvGeometry& g, const Real* in, const Real* w, const Real* bias, Real* out);
void conv_transpose3d_backward_input(const ConvGeometry& g, const Real* gout, const Real* w, Real* gin);
void conv_transpose3d_backward_weight(const ConvGeometry& g, const Real* gout, const Real* in, Real* gw,
                                      Real* gbias);

// Per-step states h_t and expm1(delta_t * a) saved by the forward pass, both
// [B, C, L, N]. Without a tape the backward pass recomputes them.
struct ScanTape {
  std::vector<Real> hist;
  std::vector<Real> em1;
};

void selective_scan_forward(const ScanGeometry& g, const ScanInputs& in, Real* y, ScanTape* tape = nullptr);
void selective_scan_backward(const ScanGeometry& g, const ScanInputs& in, const Real* gy, const ScanGrads& grads,
                             const ScanTape* tape = nullptr);

namespace serial {
void conv3d_forward(const ConvGeometry& g, const Real* in, const Real* w, const Real* bias, Real* out);
void conv3d_backward_input(const ConvGeometry& g, const Real* gout, const Real* w, Real* gin);
void conv3d_backward_weight(const ConvGeometry& g, const Real* gout, const Real* in, Real* gw, Real* gbias);

void conv_transpose3d_forward(const ConvGeometry& g, const Real* in, const Real* w, const Real* bias, Real* out);
void conv_transpose3d_backward_input(const ConvGeometry& g, const Real* gout, const Real* w, Real* gin);
void conv_transpose3d_backward_weight(const ConvGeometry& g, const Real* gout, const Real* in, Real* gw,
                                      Real* gbias);

void selective_scan_forward(const ScanGeometry& g, const ScanInputs& in, Real* y);
void selective_scan_backward(const ScanGeometry& g, const ScanInputs& in, const Real* gy, const ScanGrads& grads);
}  // namespace serial

}  // namespace mmunet::kernels
