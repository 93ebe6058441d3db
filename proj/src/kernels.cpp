#include "mmunet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "mmunet/error.hpp"

namespace mmunet::kernels {

using Index = std::ptrdiff_t;

Int3 conv_output_extent(const Int3& in, const Int3& kernel, const Int3& stride, const Int3& pad) {
  Int3 out{};
  for (int a = 0; a < 3; ++a) {
    if (stride[a] == 0 || kernel[a] == 0) throw ShapeError("conv3d: kernel and stride must be positive");
    const std::size_t padded = in[a] + 2 * pad[a];
    if (padded < kernel[a])
      throw ShapeError("conv3d: padded extent " + std::to_string(padded) + " on axis " + std::to_string(a) +
                       " is smaller than kernel extent " + std::to_string(kernel[a]));
    out[a] = (padded - kernel[a]) / stride[a] + 1;
  }
  return out;
}

Int3 conv_transpose_output_extent(const Int3& in, const Int3& kernel, const Int3& stride) {
  Int3 out{};
  for (int a = 0; a < 3; ++a) out[a] = (in[a] - 1) * stride[a] + kernel[a];
  return out;
}

namespace {

bool unit_stride(const ConvGeometry& g) { return g.stride[0] == 1 && g.stride[1] == 1 && g.stride[2] == 1; }

// Unit-stride convolutions run as GEMMs over slabs of output depth slices:
// each slab's receptive fields are unrolled into a [channels * kv, cols]
// matrix that stays cache resident. Tasks own disjoint output slabs.
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

constexpr std::size_t kSlabColumns = 1024;

std::size_t slab_depth(const Int3& out) { return std::max<std::size_t>(1, kSlabColumns / (out[1] * out[2])); }

void im2col_slab(const Real* x, std::size_t channels, const Int3& in, const Int3& out, const Int3& k,
                 const Int3& pad, Index od0, Index od1, Real* col) {
  const Index D = in[0], H = in[1], W = in[2];
  const Index OH = out[1], OW = out[2];
  const Index cols = (od1 - od0) * OH * OW;
  const std::size_t vin = in[0] * in[1] * in[2];
  Real* row = col;
  for (std::size_t ic = 0; ic < channels; ++ic) {
    const Real* xc = x + ic * vin;
    for (Index kd = 0; kd < static_cast<Index>(k[0]); ++kd)
      for (Index kh = 0; kh < static_cast<Index>(k[1]); ++kh)
        for (Index kw = 0; kw < static_cast<Index>(k[2]); ++kw, row += cols) {
          const Index shift = kw - static_cast<Index>(pad[2]);
          const Index lo = std::clamp<Index>(-shift, 0, OW);
          const Index hi = std::clamp<Index>(W - shift, lo, OW);
          for (Index od = od0; od < od1; ++od) {
            const Index id = od + kd - static_cast<Index>(pad[0]);
            for (Index oh = 0; oh < OH; ++oh) {
              Real* r = row + ((od - od0) * OH + oh) * OW;
              const Index ih = oh + kh - static_cast<Index>(pad[1]);
              if (id < 0 || id >= D || ih < 0 || ih >= H) {
                std::fill(r, r + OW, Real(0));
                continue;
              }
              const Real* xr = xc + (id * H + ih) * W + shift;
              std::fill(r, r + lo, Real(0));
              std::copy(xr + lo, xr + hi, r + lo);
              std::fill(r + hi, r + OW, Real(0));
            }
          }
        }
  }
}

// o[b] (+)= w [out_ch, channels * kv] applied to x[b] [channels, in].
void gemm_conv(const Real* x, std::size_t batch, std::size_t channels, const Int3& in, const Int3& out,
               const Int3& k, const Int3& pad, const Real* w, std::size_t out_ch, const Real* bias, bool accumulate,
               Real* o) {
  const std::size_t vin = in[0] * in[1] * in[2], vout = out[0] * out[1] * out[2];
  const std::size_t kv = k[0] * k[1] * k[2], plane = out[1] * out[2];
  const std::size_t sd = slab_depth(out), slabs = (out[0] + sd - 1) / sd;
  const Eigen::Map<const RowMat> wm(w, static_cast<Index>(out_ch), static_cast<Index>(channels * kv));
#pragma omp parallel
  {
    std::vector<Real> col(channels * kv * sd * plane);
#pragma omp for schedule(static)
    for (Index task = 0; task < static_cast<Index>(batch * slabs); ++task) {
      const std::size_t b = task / slabs, od0 = (task % slabs) * sd, od1 = std::min(out[0], od0 + sd);
      const Index cols = static_cast<Index>((od1 - od0) * plane);
      im2col_slab(x + b * channels * vin, channels, in, out, k, pad, od0, od1, col.data());
      const Eigen::Map<const RowMat> cm(col.data(), static_cast<Index>(channels * kv), cols);
      StridedMap om(o + b * out_ch * vout + od0 * plane, static_cast<Index>(out_ch), cols,
                    Eigen::OuterStride<>(static_cast<Index>(vout)));
      if (!accumulate) {
        if (bias)
          om.colwise() = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>(bias, static_cast<Index>(out_ch));
        else
          om.setZero();
      }
      om.noalias() += wm * cm;
    }
  }
}

// Convolutions whose kernel equals their stride (no padding) touch disjoint
// input blocks, so they reduce to a block rearrangement plus one GEMM.
bool blockwise(const ConvGeometry& g) {
  return g.kernel == g.stride && g.pad == Int3{0, 0, 0};
}

// col[c * kv + k, v] = x[c, block v, offset k] over the `coarse` block grid of
// a `fine` volume.
void pack_blocks(const Real* x, std::size_t channels, const Int3& fine, const Int3& coarse, const Int3& k,
                 Real* col) {
  const std::size_t vf = fine[0] * fine[1] * fine[2], vc = coarse[0] * coarse[1] * coarse[2];
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t kd = 0; kd < k[0]; ++kd)
      for (std::size_t kh = 0; kh < k[1]; ++kh)
        for (std::size_t kw = 0; kw < k[2]; ++kw) {
          Real* row = col + ((c * k[0] + kd) * k[1] * k[2] + kh * k[2] + kw) * vc;
          const Real* xc = x + c * vf;
          for (std::size_t d = 0; d < coarse[0]; ++d)
            for (std::size_t h = 0; h < coarse[1]; ++h) {
              const Real* xr = xc + ((d * k[0] + kd) * fine[1] + h * k[1] + kh) * fine[2] + kw;
              Real* r = row + (d * coarse[1] + h) * coarse[2];
              for (std::size_t w = 0; w < coarse[2]; ++w) r[w] = xr[w * k[2]];
            }
        }
}

// Inverse of pack_blocks, accumulating into x.
void unpack_blocks_add(const Real* col, std::size_t channels, const Int3& fine, const Int3& coarse, const Int3& k,
                       Real* x) {
  const std::size_t vf = fine[0] * fine[1] * fine[2], vc = coarse[0] * coarse[1] * coarse[2];
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t kd = 0; kd < k[0]; ++kd)
      for (std::size_t kh = 0; kh < k[1]; ++kh)
        for (std::size_t kw = 0; kw < k[2]; ++kw) {
          const Real* row = col + ((c * k[0] + kd) * k[1] * k[2] + kh * k[2] + kw) * vc;
          Real* xc = x + c * vf;
          for (std::size_t d = 0; d < coarse[0]; ++d)
            for (std::size_t h = 0; h < coarse[1]; ++h) {
              Real* xr = xc + ((d * k[0] + kd) * fine[1] + h * k[1] + kh) * fine[2] + kw;
              const Real* r = row + (d * coarse[1] + h) * coarse[2];
              for (std::size_t w = 0; w < coarse[2]; ++w) xr[w * k[2]] += r[w];
            }
        }
}

using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Generic strided correlation of one (batch, out-channel) slice.
void conv_slice_generic(const ConvGeometry& g, const Real* in_b, const Real* w_oc, Real* o) {
  const Index D = g.in[0], H = g.in[1], W = g.in[2];
  const std::size_t vin = g.in_volume();
  for (Index od = 0; od < static_cast<Index>(g.out[0]); ++od)
    for (Index oh = 0; oh < static_cast<Index>(g.out[1]); ++oh)
      for (Index ow = 0; ow < static_cast<Index>(g.out[2]); ++ow) {
        Real s = 0;
        for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
          const Real* xc = in_b + ic * vin;
          const Real* wc = w_oc + ic * g.kernel_volume();
          for (Index kd = 0; kd < static_cast<Index>(g.kernel[0]); ++kd) {
            const Index id = od * g.stride[0] + kd - g.pad[0];
            if (id < 0 || id >= D) continue;
            for (Index kh = 0; kh < static_cast<Index>(g.kernel[1]); ++kh) {
              const Index ih = oh * g.stride[1] + kh - g.pad[1];
              if (ih < 0 || ih >= H) continue;
              for (Index kw = 0; kw < static_cast<Index>(g.kernel[2]); ++kw) {
                const Index iw = ow * g.stride[2] + kw - g.pad[2];
                if (iw < 0 || iw >= W) continue;
                s += wc[(kd * g.kernel[1] + kh) * g.kernel[2] + kw] * xc[(id * H + ih) * W + iw];
              }
            }
          }
        }
        o[(od * g.out[1] + oh) * g.out[2] + ow] += s;
      }
}

}  // namespace

void conv3d_forward(const ConvGeometry& g, const Real* in, const Real* w, const Real* bias, Real* out) {
  if (unit_stride(g)) {
    gemm_conv(in, g.batch, g.in_ch, g.in, g.out, g.kernel, g.pad, w, g.out_ch, bias, false, out);
    return;
  }
  if (blockwise(g)) {
    const Index rows = static_cast<Index>(g.in_ch * g.kernel_volume()), cols = static_cast<Index>(g.out_volume());
    const ConstMap wm(w, static_cast<Index>(g.out_ch), rows);
#pragma omp parallel
    {
      std::vector<Real> col(static_cast<std::size_t>(rows * cols));
#pragma omp for schedule(static)
      for (Index b = 0; b < static_cast<Index>(g.batch); ++b) {
        pack_blocks(in + b * g.in_ch * g.in_volume(), g.in_ch, g.in, g.out, g.kernel, col.data());
        Map om(out + b * g.out_ch * cols, static_cast<Index>(g.out_ch), cols);
        if (bias)
          om.colwise() = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>(bias, static_cast<Index>(g.out_ch));
        else
          om.setZero();
        om.noalias() += wm * ConstMap(col.data(), rows, cols);
      }
    }
    return;
  }
  const Index B = g.batch, CO = g.out_ch;
  const std::size_t vin = g.in_volume(), vout = g.out_volume();
  const std::size_t wstride = g.in_ch * g.kernel_volume();
#pragma omp parallel for collapse(2) schedule(static)
  for (Index b = 0; b < B; ++b)
    for (Index oc = 0; oc < CO; ++oc) {
      Real* o = out + (b * CO + oc) * vout;
      std::fill(o, o + vout, bias ? bias[oc] : Real(0));
      conv_slice_generic(g, in + b * g.in_ch * vin, w + oc * wstride, o);
    }
}

void conv3d_backward_input(const ConvGeometry& g, const Real* gout, const Real* w, Real* gin) {
  const Index B = g.batch, CI = g.in_ch, CO = g.out_ch;
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.kernel_volume();
  const bool flippable = unit_stride(g) && g.pad[0] < g.kernel[0] && g.pad[1] < g.kernel[1] && g.pad[2] < g.kernel[2];
  if (flippable) {
    // Gradient w.r.t. the input of a stride-1 correlation is a correlation of
    // the output gradient with the channel-transposed, spatially flipped kernel.
    std::vector<Real> wt(static_cast<std::size_t>(CI * CO) * kv);
    for (Index oc = 0; oc < CO; ++oc)
      for (Index ic = 0; ic < CI; ++ic)
        for (std::size_t k = 0; k < kv; ++k) wt[(ic * CO + oc) * kv + (kv - 1 - k)] = w[(oc * CI + ic) * kv + k];
    const Int3 pad{g.kernel[0] - 1 - g.pad[0], g.kernel[1] - 1 - g.pad[1], g.kernel[2] - 1 - g.pad[2]};
    gemm_conv(gout, g.batch, g.out_ch, g.out, g.in, g.kernel, pad, wt.data(), g.in_ch, nullptr, true, gin);
    return;
  }
  if (blockwise(g)) {
    const Index rows = static_cast<Index>(CI * kv), cols = static_cast<Index>(vout);
    const ConstMap wm(w, CO, rows);
#pragma omp parallel
    {
      std::vector<Real> col(static_cast<std::size_t>(rows * cols));
#pragma omp for schedule(static)
      for (Index b = 0; b < B; ++b) {
        Map(col.data(), rows, cols).noalias() = wm.transpose() * ConstMap(gout + b * CO * vout, CO, cols);
        unpack_blocks_add(col.data(), g.in_ch, g.in, g.out, g.kernel, gin + b * CI * vin);
      }
    }
    return;
  }
  const Index D = g.in[0], H = g.in[1], W = g.in[2];
#pragma omp parallel for collapse(2) schedule(static)
  for (Index b = 0; b < B; ++b)
    for (Index ic = 0; ic < CI; ++ic) {
      Real* gi = gin + (b * CI + ic) * vin;
      for (Index oc = 0; oc < CO; ++oc) {
        const Real* go = gout + (b * CO + oc) * vout;
        const Real* wc = w + (oc * CI + ic) * kv;
        for (Index od = 0; od < static_cast<Index>(g.out[0]); ++od)
          for (Index oh = 0; oh < static_cast<Index>(g.out[1]); ++oh)
            for (Index ow = 0; ow < static_cast<Index>(g.out[2]); ++ow) {
              const Real gv = go[(od * g.out[1] + oh) * g.out[2] + ow];
              for (Index kd = 0; kd < static_cast<Index>(g.kernel[0]); ++kd) {
                const Index id = od * g.stride[0] + kd - g.pad[0];
                if (id < 0 || id >= D) continue;
                for (Index kh = 0; kh < static_cast<Index>(g.kernel[1]); ++kh) {
                  const Index ih = oh * g.stride[1] + kh - g.pad[1];
                  if (ih < 0 || ih >= H) continue;
                  for (Index kw = 0; kw < static_cast<Index>(g.kernel[2]); ++kw) {
                    const Index iw = ow * g.stride[2] + kw - g.pad[2];
                    if (iw < 0 || iw >= W) continue;
                    gi[(id * H + ih) * W + iw] += gv * wc[(kd * g.kernel[1] + kh) * g.kernel[2] + kw];
                  }
                }
              }
            }
      }
    }
}

void conv3d_backward_weight(const ConvGeometry& g, const Real* gout, const Real* in, Real* gw, Real* gbias) {
  const Index B = g.batch, CI = g.in_ch, CO = g.out_ch;
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.kernel_volume();
  if (unit_stride(g)) {
    // Per-slab partial products, reduced in slab order afterwards.
    const std::size_t plane = g.out[1] * g.out[2];
    const std::size_t sd = slab_depth(g.out), slabs = (g.out[0] + sd - 1) / sd, tasks = g.batch * slabs;
    const std::size_t wsize = g.out_ch * g.in_ch * kv;
    std::vector<Real> partial(tasks * wsize);
#pragma omp parallel
    {
      std::vector<Real> col(g.in_ch * kv * sd * plane);
#pragma omp for schedule(static)
      for (Index task = 0; task < static_cast<Index>(tasks); ++task) {
        const std::size_t b = task / slabs, od0 = (task % slabs) * sd, od1 = std::min(g.out[0], od0 + sd);
        const Index cols = static_cast<Index>((od1 - od0) * plane);
        im2col_slab(in + b * g.in_ch * vin, g.in_ch, g.in, g.out, g.kernel, g.pad, od0, od1, col.data());
        const Eigen::Map<const RowMat> cm(col.data(), static_cast<Index>(g.in_ch * kv), cols);
        const ConstStridedMap gm(gout + b * g.out_ch * vout + od0 * plane, CO, cols,
                                 Eigen::OuterStride<>(static_cast<Index>(vout)));
        Eigen::Map<RowMat> pm(partial.data() + task * wsize, CO, static_cast<Index>(g.in_ch * kv));
        pm.noalias() = gm * cm.transpose();
      }
    }
    for (std::size_t t = 0; t < tasks; ++t)
      for (std::size_t i = 0; i < wsize; ++i) gw[i] += partial[t * wsize + i];
  } else if (blockwise(g)) {
    const Index rows = static_cast<Index>(CI * kv), cols = static_cast<Index>(vout);
    const std::size_t wsize = g.out_ch * g.in_ch * kv;
    std::vector<Real> partial(g.batch * wsize);
#pragma omp parallel
    {
      std::vector<Real> col(static_cast<std::size_t>(rows * cols));
#pragma omp for schedule(static)
      for (Index b = 0; b < B; ++b) {
        pack_blocks(in + b * CI * vin, g.in_ch, g.in, g.out, g.kernel, col.data());
        Map(partial.data() + b * wsize, CO, rows).noalias() =
            ConstMap(gout + b * CO * vout, CO, cols) * ConstMap(col.data(), rows, cols).transpose();
      }
    }
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t i = 0; i < wsize; ++i) gw[i] += partial[b * wsize + i];
  } else {
    const Index D = g.in[0], H = g.in[1], W = g.in[2];
    const Index OD = g.out[0], OH = g.out[1], OW = g.out[2];
    const Index KD = g.kernel[0], KH = g.kernel[1], KW = g.kernel[2];
    const Index pd = g.pad[0], ph = g.pad[1], pw = g.pad[2];
#pragma omp parallel for collapse(2) schedule(static)
    for (Index oc = 0; oc < CO; ++oc)
      for (Index ic = 0; ic < CI; ++ic) {
        Real* gwc = gw + (oc * CI + ic) * kv;
        for (Index b = 0; b < B; ++b) {
          const Real* go = gout + (b * CO + oc) * vout;
          const Real* x = in + (b * CI + ic) * vin;
          for (Index od = 0; od < OD; ++od)
            for (Index oh = 0; oh < OH; ++oh)
              for (Index ow = 0; ow < OW; ++ow) {
                const Real gv = go[(od * OH + oh) * OW + ow];
                for (Index kd = 0; kd < KD; ++kd) {
                  const Index id = od * g.stride[0] + kd - pd;
                  if (id < 0 || id >= D) continue;
                  for (Index kh = 0; kh < KH; ++kh) {
                    const Index ih = oh * g.stride[1] + kh - ph;
                    if (ih < 0 || ih >= H) continue;
                    for (Index kw = 0; kw < KW; ++kw) {
                      const Index iw = ow * g.stride[2] + kw - pw;
                      if (iw < 0 || iw >= W) continue;
                      gwc[(kd * KH + kh) * KW + kw] += gv * x[(id * H + ih) * W + iw];
                    }
                  }
                }
              }
        }
      }
  }
  if (gbias) {
#pragma omp parallel for schedule(static)
    for (Index oc = 0; oc < CO; ++oc) {
      Real s = 0;
      for (Index b = 0; b < B; ++b) {
        const Real* go = gout + (b * CO + oc) * vout;
        for (std::size_t v = 0; v < vout; ++v) s += go[v];
      }
      gbias[oc] += s;
    }
  }
}

void conv_transpose3d_forward(const ConvGeometry& g, const Real* in, const Real* w, const Real* bias, Real* out) {
  const Index B = g.batch, CI = g.in_ch, CO = g.out_ch;
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.kernel_volume();
  if (blockwise(g)) {
    const Index rows = static_cast<Index>(CO * kv), cols = static_cast<Index>(vin);
    const ConstMap wm(w, CI, rows);
#pragma omp parallel
    {
      std::vector<Real> col(static_cast<std::size_t>(rows * cols));
#pragma omp for schedule(static)
      for (Index b = 0; b < B; ++b) {
        Real* o = out + b * CO * vout;
        for (Index oc = 0; oc < CO; ++oc) std::fill(o + oc * vout, o + (oc + 1) * vout, bias ? bias[oc] : Real(0));
        Map(col.data(), rows, cols).noalias() = wm.transpose() * ConstMap(in + b * CI * vin, CI, cols);
        unpack_blocks_add(col.data(), g.out_ch, g.out, g.in, g.kernel, o);
      }
    }
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (Index b = 0; b < B; ++b)
    for (Index oc = 0; oc < CO; ++oc) {
      Real* o = out + (b * CO + oc) * vout;
      std::fill(o, o + vout, bias ? bias[oc] : Real(0));
      for (Index ic = 0; ic < CI; ++ic) {
        const Real* x = in + (b * CI + ic) * vin;
        const Real* wc = w + (ic * CO + oc) * kv;
        for (std::size_t id = 0; id < g.in[0]; ++id)
          for (std::size_t ih = 0; ih < g.in[1]; ++ih)
            for (std::size_t iw = 0; iw < g.in[2]; ++iw) {
              const Real xv = x[(id * g.in[1] + ih) * g.in[2] + iw];
              for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                  const std::size_t od = id * g.stride[0] + kd, oh = ih * g.stride[1] + kh;
                  Real* orow = o + (od * g.out[1] + oh) * g.out[2] + iw * g.stride[2];
                  const Real* wr = wc + (kd * g.kernel[1] + kh) * g.kernel[2];
                  for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) orow[kw] += wr[kw] * xv;
                }
            }
      }
    }
}

void conv_transpose3d_backward_input(const ConvGeometry& g, const Real* gout, const Real* w, Real* gin) {
  const Index B = g.batch, CI = g.in_ch, CO = g.out_ch;
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.kernel_volume();
  if (blockwise(g)) {
    const Index rows = static_cast<Index>(CO * kv), cols = static_cast<Index>(vin);
    const ConstMap wm(w, CI, rows);
#pragma omp parallel
    {
      std::vector<Real> col(static_cast<std::size_t>(rows * cols));
#pragma omp for schedule(static)
      for (Index b = 0; b < B; ++b) {
        pack_blocks(gout + b * CO * vout, g.out_ch, g.out, g.in, g.kernel, col.data());
        Map(gin + b * CI * vin, CI, cols).noalias() += wm * ConstMap(col.data(), rows, cols);
      }
    }
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (Index b = 0; b < B; ++b)
    for (Index ic = 0; ic < CI; ++ic) {
      Real* gi = gin + (b * CI + ic) * vin;
      for (Index oc = 0; oc < CO; ++oc) {
        const Real* go = gout + (b * CO + oc) * vout;
        const Real* wc = w + (ic * CO + oc) * kv;
        for (std::size_t id = 0; id < g.in[0]; ++id)
          for (std::size_t ih = 0; ih < g.in[1]; ++ih)
            for (std::size_t iw = 0; iw < g.in[2]; ++iw) {
              Real s = 0;
              for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                  const std::size_t od = id * g.stride[0] + kd, oh = ih * g.stride[1] + kh;
                  const Real* grow = go + (od * g.out[1] + oh) * g.out[2] + iw * g.stride[2];
                  const Real* wr = wc + (kd * g.kernel[1] + kh) * g.kernel[2];
                  for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) s += wr[kw] * grow[kw];
                }
              gi[(id * g.in[1] + ih) * g.in[2] + iw] += s;
            }
      }
    }
}

void conv_transpose3d_backward_weight(const ConvGeometry& g, const Real* gout, const Real* in, Real* gw,
                                      Real* gbias) {
  const Index B = g.batch, CI = g.in_ch, CO = g.out_ch;
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.kernel_volume();
  if (blockwise(g)) {
    const Index rows = static_cast<Index>(CO * kv), cols = static_cast<Index>(vin);
    const std::size_t wsize = g.in_ch * g.out_ch * kv;
    std::vector<Real> partial(g.batch * wsize);
#pragma omp parallel
    {
      std::vector<Real> col(static_cast<std::size_t>(rows * cols));
#pragma omp for schedule(static)
      for (Index b = 0; b < B; ++b) {
        pack_blocks(gout + b * CO * vout, g.out_ch, g.out, g.in, g.kernel, col.data());
        Map(partial.data() + b * wsize, CI, rows).noalias() =
            ConstMap(in + b * CI * vin, CI, cols) * ConstMap(col.data(), rows, cols).transpose();
      }
    }
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t i = 0; i < wsize; ++i) gw[i] += partial[b * wsize + i];
  } else {
#pragma omp parallel for collapse(2) schedule(static)
    for (Index ic = 0; ic < CI; ++ic)
      for (Index oc = 0; oc < CO; ++oc) {
        Real* gwc = gw + (ic * CO + oc) * kv;
        for (Index b = 0; b < B; ++b) {
          const Real* x = in + (b * CI + ic) * vin;
          const Real* go = gout + (b * CO + oc) * vout;
          for (std::size_t id = 0; id < g.in[0]; ++id)
            for (std::size_t ih = 0; ih < g.in[1]; ++ih)
              for (std::size_t iw = 0; iw < g.in[2]; ++iw) {
                const Real xv = x[(id * g.in[1] + ih) * g.in[2] + iw];
                for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                  for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                    const std::size_t od = id * g.stride[0] + kd, oh = ih * g.stride[1] + kh;
                    const Real* grow = go + (od * g.out[1] + oh) * g.out[2] + iw * g.stride[2];
                    Real* gr = gwc + (kd * g.kernel[1] + kh) * g.kernel[2];
                    for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) gr[kw] += xv * grow[kw];
                  }
              }
        }
      }
  }
  if (gbias) {
#pragma omp parallel for schedule(static)
    for (Index oc = 0; oc < CO; ++oc) {
      Real s = 0;
      for (Index b = 0; b < B; ++b) {
        const Real* go = gout + (b * CO + oc) * vout;
        for (std::size_t v = 0; v < vout; ++v) s += go[v];
      }
      gbias[oc] += s;
    }
  }
}

// ---------------------------------------------------------------------------
// Selective scan

namespace {

// ZOH input coefficient (exp(dt*a) - 1) / a given em1 = expm1(dt*a), with
// the a -> 0 limit dt.
inline Real zoh_coef(Real dt, Real a, Real em1) { return a == Real(0) ? dt : em1 / a; }

inline Real zoh_coef(Real dt, Real a) { return zoh_coef(dt, a, std::expm1(dt * a)); }

// d/da of zoh_coef.
inline Real zoh_coef_da(Real dt, Real a, Real em1) {
  const Real x = dt * a;
  if (std::abs(x) < Real(1e-3)) return dt * dt * (Real(0.5) + x / 3 + x * x / 8 + x * x * x / 30);
  return (x * (em1 + 1) - em1) / (a * a);
}

// [B, N, L] -> [B, L, N]
std::vector<Real> transpose_state(const Real* src, std::size_t batch, std::size_t state, std::size_t length) {
  std::vector<Real> dst(batch * state * length);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < state; ++n)
      for (std::size_t t = 0; t < length; ++t)
        dst[(b * length + t) * state + n] = src[(b * state + n) * length + t];
  return dst;
}

void scan_channel_forward(const ScanGeometry& g, const ScanInputs& in, const Real* bt, const Real* ct,
                          std::size_t b, std::size_t c, Real* y, Real* hist, Real* em1_out = nullptr) {
  const std::size_t N = g.state, L = g.length;
  const Real* u = in.u + (b * g.channels + c) * L;
  const Real* dl = in.delta + (b * g.channels + c) * L;
  const Real* a = in.a + c * N;
  std::vector<Real> h(N, Real(0));
  for (std::size_t t = 0; t < L; ++t) {
    if (t % g.segment == 0) std::fill(h.begin(), h.end(), Real(0));
    const Real dt = dl[t], ut = u[t];
    const Real* bv = bt + t * N;
    const Real* cv = ct + t * N;
    Real acc = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const Real em1 = std::expm1(dt * a[n]);
      h[n] = (em1 + 1) * h[n] + zoh_coef(dt, a[n], em1) * bv[n] * ut;
      acc += cv[n] * h[n];
      if (em1_out) em1_out[t * N + n] = em1;
    }
    if (y) y[t] = acc;
    if (hist) std::copy(h.begin(), h.end(), hist + t * N);
  }
}

// Reverse sweep for one (batch, channel). gb_t/gc_t are [L, N] accumulators.
void scan_channel_backward(const ScanGeometry& g, const ScanInputs& in, const Real* bt, const Real* ct,
                           std::size_t b, std::size_t c, const Real* hist, const Real* em1s, const Real* gy,
                           const ScanGrads& out, Real* gb_t, Real* gc_t, Real* ga) {
  const std::size_t N = g.state, L = g.length;
  const std::size_t row = (b * g.channels + c) * L;
  const Real* u = in.u + row;
  const Real* dl = in.delta + row;
  const Real* a = in.a + c * N;
  const Real* gyr = gy + row;
  std::vector<Real> carry(N, Real(0));
  const std::vector<Real> zeros(N, Real(0));
  for (std::size_t t = L; t-- > 0;) {
    if ((t + 1) % g.segment == 0) std::fill(carry.begin(), carry.end(), Real(0));
    const Real dt = dl[t], ut = u[t], gyt = gyr[t];
    const Real* ht = hist + t * N;
    const Real* hp = (t % g.segment == 0) ? zeros.data() : hist + (t - 1) * N;
    const Real* bv = bt + t * N;
    const Real* cv = ct + t * N;
    Real gu = 0, gd = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const Real an = a[n];
      const Real em1 = em1s[t * N + n];
      const Real da = em1 + 1;
      const Real coef = zoh_coef(dt, an, em1);
      const Real gh = gyt * cv[n] + carry[n];
      gc_t[t * N + n] += gyt * ht[n];
      gb_t[t * N + n] += gh * coef * ut;
      gu += gh * coef * bv[n];
      gd += gh * (hp[n] * an * da + da * bv[n] * ut);
      ga[n] += gh * (hp[n] * dt * da + zoh_coef_da(dt, an, em1) * bv[n] * ut);
      carry[n] = gh * da;
    }
    if (out.u) out.u[row + t] += gu;
    if (out.delta) out.delta[row + t] += gd;
  }
}

void check_scan(const ScanGeometry& g) {
  if (g.segment == 0 || g.length % g.segment != 0)
    throw ShapeError("selective scan: segment length must divide sequence length");
}

}  // namespace

void selective_scan_forward(const ScanGeometry& g, const ScanInputs& in, Real* y, ScanTape* tape) {
  check_scan(g);
  const std::size_t N = g.state, L = g.length;
  const auto bt = transpose_state(in.b, g.batch, N, L);
  const auto ct = transpose_state(in.c, g.batch, N, L);
  const Index B = g.batch, C = g.channels;
  if (tape) {
    tape->hist.resize(B * C * L * N);
    tape->em1.resize(B * C * L * N);
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const std::size_t off = b * L * N, row = (b * C + c) * L;
      scan_channel_forward(g, in, bt.data() + off, ct.data() + off, b, c, y + row,
                           tape ? tape->hist.data() + row * N : nullptr, tape ? tape->em1.data() + row * N : nullptr);
    }
}

void selective_scan_backward(const ScanGeometry& g, const ScanInputs& in, const Real* gy, const ScanGrads& grads,
                             const ScanTape* tape) {
  check_scan(g);
  const std::size_t N = g.state, L = g.length;
  const auto bt = transpose_state(in.b, g.batch, N, L);
  const auto ct = transpose_state(in.c, g.batch, N, L);
  const Index B = g.batch, C = g.channels;
  if (tape && (tape->hist.size() != B * C * L * N || tape->em1.size() != tape->hist.size()))
    throw ShapeError("selective scan: tape does not match the scan geometry");
  // Per-channel B/C gradient partials, reduced over channels afterwards in a
  // fixed order.
  std::vector<Real> gb_part(static_cast<std::size_t>(C) * B * L * N, Real(0));
  std::vector<Real> gc_part(gb_part.size(), Real(0));

#pragma omp parallel
  {
    std::vector<Real> hist(tape ? 0 : L * N), em1s(tape ? 0 : L * N);
    std::vector<Real> ga(N);
#pragma omp for schedule(static)
    for (Index c = 0; c < C; ++c) {
      std::fill(ga.begin(), ga.end(), Real(0));
      for (Index b = 0; b < B; ++b) {
        const std::size_t off = b * L * N, row = (b * C + c) * L;
        const Real* hp = hist.data();
        const Real* ep = em1s.data();
        if (tape) {
          hp = tape->hist.data() + row * N;
          ep = tape->em1.data() + row * N;
        } else {
          scan_channel_forward(g, in, bt.data() + off, ct.data() + off, b, c, nullptr, hist.data(), em1s.data());
        }
        Real* gbp = gb_part.data() + (c * B + b) * L * N;
        Real* gcp = gc_part.data() + (c * B + b) * L * N;
        scan_channel_backward(g, in, bt.data() + off, ct.data() + off, b, c, hp, ep, gy, grads, gbp, gcp, ga.data());
      }
      if (grads.a)
        for (std::size_t n = 0; n < N; ++n) grads.a[c * N + n] += ga[n];
    }
  }

  if (grads.b || grads.c) {
#pragma omp parallel for collapse(2) schedule(static)
    for (Index b = 0; b < B; ++b)
      for (Index n = 0; n < static_cast<Index>(N); ++n)
        for (std::size_t t = 0; t < L; ++t) {
          Real sb = 0, sc = 0;
          for (Index c = 0; c < C; ++c) {
            const std::size_t idx = ((c * B + b) * L + t) * N + n;
            sb += gb_part[idx];
            sc += gc_part[idx];
          }
          const std::size_t dst = (b * N + n) * L + t;
          if (grads.b) grads.b[dst] += sb;
          if (grads.c) grads.c[dst] += sc;
        }
  }
}

// ---------------------------------------------------------------------------
// Serial references: direct loops straight from the definitions.

namespace serial {

namespace {
inline bool inside(Index v, std::size_t extent) { return v >= 0 && v < static_cast<Index>(extent); }
}  // namespace

void conv3d_forward(const ConvGeometry& g, const Real* in, const Real* w, const Real* bias, Real* out) {
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.kernel_volume();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oc = 0; oc < g.out_ch; ++oc)
      for (std::size_t od = 0; od < g.out[0]; ++od)
        for (std::size_t oh = 0; oh < g.out[1]; ++oh)
          for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
            Real s = bias ? bias[oc] : Real(0);
            for (std::size_t ic = 0; ic < g.in_ch; ++ic)
              for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
                  for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                    const Index id = Index(od * g.stride[0] + kd) - Index(g.pad[0]);
                    const Index ih = Index(oh * g.stride[1] + kh) - Index(g.pad[1]);
                    const Index iw = Index(ow * g.stride[2] + kw) - Index(g.pad[2]);
                    if (!inside(id, g.in[0]) || !inside(ih, g.in[1]) || !inside(iw, g.in[2])) continue;
                    s += w[(oc * g.in_ch + ic) * kv + (kd * g.kernel[1] + kh) * g.kernel[2] + kw] *
                         in[(b * g.in_ch + ic) * vin + (id * g.in[1] + ih) * g.in[2] + iw];
                  }
            out[(b * g.out_ch + oc) * vout + (od * g.out[1] + oh) * g.out[2] + ow] = s;
          }
}

void conv3d_backward_input(const ConvGeometry& g, const Real* gout, const Real* w, Real* gin) {
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.kernel_volume();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oc = 0; oc < g.out_ch; ++oc)
      for (std::size_t od = 0; od < g.out[0]; ++od)
        for (std::size_t oh = 0; oh < g.out[1]; ++oh)
          for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
            const Real gv = gout[(b * g.out_ch + oc) * vout + (od * g.out[1] + oh) * g.out[2] + ow];
            for (std::size_t ic = 0; ic < g.in_ch; ++ic)
              for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
                  for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                    const Index id = Index(od * g.stride[0] + kd) - Index(g.pad[0]);
                    const Index ih = Index(oh * g.stride[1] + kh) - Index(g.pad[1]);
                    const Index iw = Index(ow * g.stride[2] + kw) - Index(g.pad[2]);
                    if (!inside(id, g.in[0]) || !inside(ih, g.in[1]) || !inside(iw, g.in[2])) continue;
                    gin[(b * g.in_ch + ic) * vin + (id * g.in[1] + ih) * g.in[2] + iw] +=
                        gv * w[(oc * g.in_ch + ic) * kv + (kd * g.kernel[1] + kh) * g.kernel[2] + kw];
                  }
          }
}

void conv3d_backward_weight(const ConvGeometry& g, const Real* gout, const Real* in, Real* gw, Real* gbias) {
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.kernel_volume();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oc = 0; oc < g.out_ch; ++oc)
      for (std::size_t od = 0; od < g.out[0]; ++od)
        for (std::size_t oh = 0; oh < g.out[1]; ++oh)
          for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
            const Real gv = gout[(b * g.out_ch + oc) * vout + (od * g.out[1] + oh) * g.out[2] + ow];
            if (gbias) gbias[oc] += gv;
            for (std::size_t ic = 0; ic < g.in_ch; ++ic)
              for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
                  for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                    const Index id = Index(od * g.stride[0] + kd) - Index(g.pad[0]);
                    const Index ih = Index(oh * g.stride[1] + kh) - Index(g.pad[1]);
                    const Index iw = Index(ow * g.stride[2] + kw) - Index(g.pad[2]);
                    if (!inside(id, g.in[0]) || !inside(ih, g.in[1]) || !inside(iw, g.in[2])) continue;
                    gw[(oc * g.in_ch + ic) * kv + (kd * g.kernel[1] + kh) * g.kernel[2] + kw] +=
                        gv * in[(b * g.in_ch + ic) * vin + (id * g.in[1] + ih) * g.in[2] + iw];
                  }
          }
}

namespace {
template <class F>
void for_each_transpose_tap(const ConvGeometry& g, F&& f) {
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.kernel_volume();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t ic = 0; ic < g.in_ch; ++ic)
      for (std::size_t id = 0; id < g.in[0]; ++id)
        for (std::size_t ih = 0; ih < g.in[1]; ++ih)
          for (std::size_t iw = 0; iw < g.in[2]; ++iw)
            for (std::size_t oc = 0; oc < g.out_ch; ++oc)
              for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
                  for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                    const std::size_t od = id * g.stride[0] + kd, oh = ih * g.stride[1] + kh,
                                      ow = iw * g.stride[2] + kw;
                    f((b * g.in_ch + ic) * vin + (id * g.in[1] + ih) * g.in[2] + iw,
                      (ic * g.out_ch + oc) * kv + (kd * g.kernel[1] + kh) * g.kernel[2] + kw,
                      (b * g.out_ch + oc) * vout + (od * g.out[1] + oh) * g.out[2] + ow, oc);
                  }
}
}  // namespace

void conv_transpose3d_forward(const ConvGeometry& g, const Real* in, const Real* w, const Real* bias, Real* out) {
  const std::size_t vout = g.out_volume();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oc = 0; oc < g.out_ch; ++oc)
      for (std::size_t v = 0; v < vout; ++v) out[(b * g.out_ch + oc) * vout + v] = bias ? bias[oc] : Real(0);
  for_each_transpose_tap(g, [&](std::size_t xi, std::size_t wi, std::size_t oi, std::size_t) {
    out[oi] += w[wi] * in[xi];
  });
}

void conv_transpose3d_backward_input(const ConvGeometry& g, const Real* gout, const Real* w, Real* gin) {
  for_each_transpose_tap(g, [&](std::size_t xi, std::size_t wi, std::size_t oi, std::size_t) {
    gin[xi] += w[wi] * gout[oi];
  });
}

void conv_transpose3d_backward_weight(const ConvGeometry& g, const Real* gout, const Real* in, Real* gw,
                                      Real* gbias) {
  for_each_transpose_tap(g, [&](std::size_t xi, std::size_t wi, std::size_t oi, std::size_t) {
    gw[wi] += in[xi] * gout[oi];
  });
  if (gbias) {
    const std::size_t vout = g.out_volume();
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t oc = 0; oc < g.out_ch; ++oc)
        for (std::size_t v = 0; v < vout; ++v) gbias[oc] += gout[(b * g.out_ch + oc) * vout + v];
  }
}

void selective_scan_forward(const ScanGeometry& g, const ScanInputs& in, Real* y) {
  check_scan(g);
  const std::size_t N = g.state, L = g.length;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t c = 0; c < g.channels; ++c) {
      std::vector<Real> h(N, Real(0));
      for (std::size_t t = 0; t < L; ++t) {
        if (t % g.segment == 0) std::fill(h.begin(), h.end(), Real(0));
        const std::size_t i = (b * g.channels + c) * L + t;
        Real acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const Real a = in.a[c * N + n];
          const Real bv = in.b[(b * N + n) * L + t];
          h[n] = std::exp(in.delta[i] * a) * h[n] + zoh_coef(in.delta[i], a) * bv * in.u[i];
          acc += in.c[(b * N + n) * L + t] * h[n];
        }
        y[i] = acc;
      }
    }
}

void selective_scan_backward(const ScanGeometry& g, const ScanInputs& in, const Real* gy, const ScanGrads& grads) {
  check_scan(g);
  const std::size_t N = g.state, L = g.length;
  const auto bt = transpose_state(in.b, g.batch, N, L);
  const auto ct = transpose_state(in.c, g.batch, N, L);
  std::vector<Real> gbt(g.batch * L * N, Real(0)), gct(gbt.size(), Real(0));
  std::vector<Real> hist(L * N), em1s(L * N), ga(N);
  for (std::size_t c = 0; c < g.channels; ++c) {
    std::fill(ga.begin(), ga.end(), Real(0));
    for (std::size_t b = 0; b < g.batch; ++b) {
      const std::size_t off = b * L * N;
      scan_channel_forward(g, in, bt.data() + off, ct.data() + off, b, c, nullptr, hist.data(), em1s.data());
      scan_channel_backward(g, in, bt.data() + off, ct.data() + off, b, c, hist.data(), em1s.data(), gy, grads,
                            gbt.data() + off, gct.data() + off, ga.data());
    }
    if (grads.a)
      for (std::size_t n = 0; n < N; ++n) grads.a[c * N + n] += ga[n];
  }
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < L; ++t) {
        if (grads.b) grads.b[(b * N + n) * L + t] += gbt[(b * L + t) * N + n];
        if (grads.c) grads.c[(b * N + n) * L + t] += gct[(b * L + t) * N + n];
      }
}

}  // namespace serial

}  // namespace mmunet::kernels
