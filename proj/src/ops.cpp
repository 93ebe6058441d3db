#include "mmunet/ops.hpp"

#include <algorithm>
#include <cmath>

#include "mmunet/error.hpp"
#include "mmunet/kernels.hpp"

namespace mmunet::ops {

namespace {

using detail::Node;

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

// Accumulates into input i's gradient when it tracks one.
template <class F>
void with_grad(Node& n, std::size_t i, F&& f) {
  Node& in = *n.inputs[i];
  if (in.requires_grad) f(in.ensure_grad());
}

template <class Fwd, class Dfdx>
Tensor unary(const Tensor& x, Fwd fwd, Dfdx dfdx) {
  std::vector<Real> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [dfdx](Node& n) {
    with_grad(n, 0, [&](std::vector<Real>& g) {
      const auto& xv = n.inputs[0]->value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * dfdx(xv[i], n.value[i]);
    });
  });
}

Real sigmoid(Real v) { return Real(1) / (Real(1) + std::exp(-v)); }

Int3 spatial(const Tensor& x) { return {x.dim(2), x.dim(3), x.dim(4)}; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k)
      with_grad(n, k, [&](std::vector<Real>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    with_grad(n, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
    with_grad(n, 1, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    with_grad(n, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    });
    with_grad(n, 1, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    });
  });
}

Tensor scale(const Tensor& a, Real s) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& n) {
    with_grad(n, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
    });
  });
}

Tensor neg(const Tensor& x) { return scale(x, Real(-1)); }

Tensor exp(const Tensor& x) {
  return unary(x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](Real v) { return v * sigmoid(v); },
      [](Real v, Real) {
        const Real s = sigmoid(v);
        return s * (Real(1) + v * (Real(1) - s));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](Real v) { return v > Real(30) ? v : std::log1p(std::exp(v)); }, [](Real v, Real) { return sigmoid(v); });
}

Tensor leaky_relu(const Tensor& x, Real slope) {
  return unary(
      x, [slope](Real v) { return v > 0 ? v : slope * v; }, [slope](Real v, Real) { return v > 0 ? Real(1) : slope; });
}

Tensor sum(const Tensor& x) {
  Real s = 0;
  for (Real v : x.data()) s += v;
  return make_result(Shape{1}, {s}, {x}, [](Node& n) {
    with_grad(n, 0, [&](std::vector<Real>& g) {
      for (auto& v : g) v += n.grad[0];
    });
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), Real(1) / static_cast<Real>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  std::vector<Real> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& n) {
    with_grad(n, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || a.rank() != b.rank() || a.dim(0) != b.dim(0) ||
      !std::equal(a.shape().begin() + 2, a.shape().end(), b.shape().begin() + 2))
    throw ShapeError("concat_channels: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t B = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t inner = a.numel() / (B * ca);
  Shape shape = a.shape();
  shape[1] = ca + cb;
  std::vector<Real> out(B * (ca + cb) * inner);
  for (std::size_t bi = 0; bi < B; ++bi) {
    std::copy_n(a.data().begin() + bi * ca * inner, ca * inner, out.begin() + bi * (ca + cb) * inner);
    std::copy_n(b.data().begin() + bi * cb * inner, cb * inner, out.begin() + (bi * (ca + cb) + ca) * inner);
  }
  return make_result(std::move(shape), std::move(out), {a, b}, [B, ca, cb, inner](Node& n) {
    with_grad(n, 0, [&](std::vector<Real>& g) {
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t i = 0; i < ca * inner; ++i) g[bi * ca * inner + i] += n.grad[bi * (ca + cb) * inner + i];
    });
    with_grad(n, 1, [&](std::vector<Real>& g) {
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t i = 0; i < cb * inner; ++i)
          g[bi * cb * inner + i] += n.grad[(bi * (ca + cb) + ca) * inner + i];
    });
  });
}

Tensor softmax_channels(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("softmax_channels: need rank >= 2, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), K = x.dim(1), S = x.numel() / (B * K);
  std::vector<Real> out(x.numel());
  auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) {
      Real mx = xv[b * K * S + s];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, xv[(b * K + k) * S + s]);
      Real z = 0;
      for (std::size_t k = 0; k < K; ++k) z += (out[(b * K + k) * S + s] = std::exp(xv[(b * K + k) * S + s] - mx));
      for (std::size_t k = 0; k < K; ++k) out[(b * K + k) * S + s] /= z;
    }
  return make_result(x.shape(), std::move(out), {x}, [B, K, S](Node& n) {
    with_grad(n, 0, [&](std::vector<Real>& g) {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s) {
          Real dot = 0;
          for (std::size_t k = 0; k < K; ++k) dot += n.grad[(b * K + k) * S + s] * n.value[(b * K + k) * S + s];
          for (std::size_t k = 0; k < K; ++k) {
            const std::size_t i = (b * K + k) * S + s;
            g[i] += n.value[i] * (n.grad[i] - dot);
          }
        }
    });
  });
}

Tensor channel_linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() < 2 || w.rank() != 2 || w.dim(1) != x.dim(1))
    throw ShapeError("channel_linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  if (bias.defined() && bias.numel() != w.dim(0))
    throw ShapeError("channel_linear: bias " + shape_str(bias.shape()) + " for weight " + shape_str(w.shape()));
  const std::size_t B = x.dim(0), CI = x.dim(1), CO = w.dim(0), S = x.numel() / (B * CI);
  Shape shape = x.shape();
  shape[1] = CO;
  std::vector<Real> out(B * CO * S);
  auto xv = x.data();
  auto wv = w.data();
  const bool has_bias = bias.defined();
  const Real* bv = has_bias ? bias.data().data() : nullptr;
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(B * CO);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t b = r / CO, o = r % CO;
    Real* orow = out.data() + r * S;
    std::fill(orow, orow + S, bv ? bv[o] : Real(0));
    for (std::size_t i = 0; i < CI; ++i) {
      const Real wo = wv[o * CI + i];
      const Real* xr = xv.data() + (b * CI + i) * S;
      for (std::size_t s = 0; s < S; ++s) orow[s] += wo * xr[s];
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(shape), std::move(out), std::move(inputs), [B, CI, CO, S](Node& n) {
    const auto& xv = n.inputs[0]->value;
    const auto& wv = n.inputs[1]->value;
    with_grad(n, 0, [&](std::vector<Real>& g) {
      const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(B * CI);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const std::size_t b = r / CI, i = r % CI;
        Real* grow = g.data() + r * S;
        for (std::size_t o = 0; o < CO; ++o) {
          const Real wo = wv[o * CI + i];
          const Real* gr = n.grad.data() + (b * CO + o) * S;
          for (std::size_t s = 0; s < S; ++s) grow[s] += wo * gr[s];
        }
      }
    });
    with_grad(n, 1, [&](std::vector<Real>& g) {
      const std::ptrdiff_t cells = static_cast<std::ptrdiff_t>(CO * CI);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t r = 0; r < cells; ++r) {
        const std::size_t o = r / CI, i = r % CI;
        Real acc = 0;
        for (std::size_t b = 0; b < B; ++b) {
          const Real* gr = n.grad.data() + (b * CO + o) * S;
          const Real* xr = xv.data() + (b * CI + i) * S;
          for (std::size_t s = 0; s < S; ++s) acc += gr[s] * xr[s];
        }
        g[r] += acc;
      }
    });
    if (n.inputs.size() > 2)
      with_grad(n, 2, [&](std::vector<Real>& g) {
        for (std::size_t o = 0; o < CO; ++o) {
          Real acc = 0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < S; ++s) acc += n.grad[(b * CO + o) * S + s];
          g[o] += acc;
        }
      });
  });
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, Int3 stride, Int3 pad) {
  require_rank(x, 5, "conv3d");
  require_rank(w, 5, "conv3d weight");
  if (w.dim(1) != x.dim(1))
    throw ShapeError("conv3d: input channels " + std::to_string(x.dim(1)) + " but weight expects " +
                     std::to_string(w.dim(1)) + " (input " + shape_str(x.shape()) + ", weight " +
                     shape_str(w.shape()) + ")");
  if (bias.defined() && bias.numel() != w.dim(0))
    throw ShapeError("conv3d: bias " + shape_str(bias.shape()) + " for weight " + shape_str(w.shape()));
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.in_ch = x.dim(1);
  g.out_ch = w.dim(0);
  g.in = spatial(x);
  g.kernel = {w.dim(2), w.dim(3), w.dim(4)};
  g.stride = stride;
  g.pad = pad;
  g.out = kernels::conv_output_extent(g.in, g.kernel, stride, pad);
  std::vector<Real> out(g.batch * g.out_ch * g.out_volume());
  kernels::conv3d_forward(g, x.data().data(), w.data().data(), bias.defined() ? bias.data().data() : nullptr,
                          out.data());
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(Shape{g.batch, g.out_ch, g.out[0], g.out[1], g.out[2]}, std::move(out), std::move(inputs),
                     [g](Node& n) {
                       const Real* xv = n.inputs[0]->value.data();
                       const Real* wv = n.inputs[1]->value.data();
                       with_grad(n, 0, [&](std::vector<Real>& gx) {
                         kernels::conv3d_backward_input(g, n.grad.data(), wv, gx.data());
                       });
                       const bool want_w = n.inputs[1]->requires_grad;
                       const bool want_b = n.inputs.size() > 2 && n.inputs[2]->requires_grad;
                       if (want_w || want_b) {
                         std::vector<Real> gw(n.inputs[1]->value.size(), Real(0));
                         std::vector<Real> gb(g.out_ch, Real(0));
                         kernels::conv3d_backward_weight(g, n.grad.data(), xv, gw.data(), gb.data());
                         if (want_w) {
                           auto& t = n.inputs[1]->ensure_grad();
                           for (std::size_t i = 0; i < t.size(); ++i) t[i] += gw[i];
                         }
                         if (want_b) {
                           auto& t = n.inputs[2]->ensure_grad();
                           for (std::size_t i = 0; i < t.size(); ++i) t[i] += gb[i];
                         }
                       }
                     });
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& bias, Int3 stride) {
  require_rank(x, 5, "conv_transpose3d");
  require_rank(w, 5, "conv_transpose3d weight");
  if (w.dim(0) != x.dim(1))
    throw ShapeError("conv_transpose3d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  if (bias.defined() && bias.numel() != w.dim(1))
    throw ShapeError("conv_transpose3d: bias " + shape_str(bias.shape()) + " for weight " + shape_str(w.shape()));
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.in_ch = x.dim(1);
  g.out_ch = w.dim(1);
  g.in = spatial(x);
  g.kernel = {w.dim(2), w.dim(3), w.dim(4)};
  g.stride = stride;
  g.out = kernels::conv_transpose_output_extent(g.in, g.kernel, stride);
  std::vector<Real> out(g.batch * g.out_ch * g.out_volume());
  kernels::conv_transpose3d_forward(g, x.data().data(), w.data().data(),
                                    bias.defined() ? bias.data().data() : nullptr, out.data());
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(Shape{g.batch, g.out_ch, g.out[0], g.out[1], g.out[2]}, std::move(out), std::move(inputs),
                     [g](Node& n) {
                       const Real* xv = n.inputs[0]->value.data();
                       const Real* wv = n.inputs[1]->value.data();
                       with_grad(n, 0, [&](std::vector<Real>& gx) {
                         kernels::conv_transpose3d_backward_input(g, n.grad.data(), wv, gx.data());
                       });
                       const bool want_w = n.inputs[1]->requires_grad;
                       const bool want_b = n.inputs.size() > 2 && n.inputs[2]->requires_grad;
                       if (want_w || want_b) {
                         std::vector<Real> gw(n.inputs[1]->value.size(), Real(0));
                         std::vector<Real> gb(g.out_ch, Real(0));
                         kernels::conv_transpose3d_backward_weight(g, n.grad.data(), xv, gw.data(), gb.data());
                         if (want_w) {
                           auto& t = n.inputs[1]->ensure_grad();
                           for (std::size_t i = 0; i < t.size(); ++i) t[i] += gw[i];
                         }
                         if (want_b) {
                           auto& t = n.inputs[2]->ensure_grad();
                           for (std::size_t i = 0; i < t.size(); ++i) t[i] += gb[i];
                         }
                       }
                     });
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  if (x.rank() < 3) throw ShapeError("instance_norm: need [B, C, ...], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.numel() / (B * C);
  if (gamma.numel() != C || beta.numel() != C)
    throw ShapeError("instance_norm: affine parameters must have " + std::to_string(C) + " entries");
  std::vector<Real> out(x.numel());
  std::vector<Real> xhat(x.numel());
  std::vector<Real> inv_std(B * C);
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(B * C);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t c = r % C;
    const Real* xr = xv.data() + r * S;
    Real m = 0;
    for (std::size_t s = 0; s < S; ++s) m += xr[s];
    m /= static_cast<Real>(S);
    Real var = 0;
    for (std::size_t s = 0; s < S; ++s) var += (xr[s] - m) * (xr[s] - m);
    var /= static_cast<Real>(S);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t s = 0; s < S; ++s) {
      const Real h = (xr[s] - m) * is;
      xhat[r * S + s] = h;
      out[r * S + s] = gv[c] * h + bv[c];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [B, C, S, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                       const auto& gv = n.inputs[1]->value;
                       with_grad(n, 0, [&](std::vector<Real>& g) {
                         const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(B * C);
#pragma omp parallel for schedule(static)
                         for (std::ptrdiff_t r = 0; r < rows; ++r) {
                           const std::size_t c = r % C;
                           const Real* gy = n.grad.data() + r * S;
                           const Real* h = xhat.data() + r * S;
                           Real mg = 0, mgh = 0;
                           for (std::size_t s = 0; s < S; ++s) {
                             mg += gy[s];
                             mgh += gy[s] * h[s];
                           }
                           mg /= static_cast<Real>(S);
                           mgh /= static_cast<Real>(S);
                           const Real k = gv[c] * inv_std[r];
                           for (std::size_t s = 0; s < S; ++s) g[r * S + s] += k * (gy[s] - mg - h[s] * mgh);
                         }
                       });
                       with_grad(n, 1, [&](std::vector<Real>& g) {
                         for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t b = 0; b < B; ++b) {
                             const std::size_t r = b * C + c;
                             Real acc = 0;
                             for (std::size_t s = 0; s < S; ++s) acc += n.grad[r * S + s] * xhat[r * S + s];
                             g[c] += acc;
                           }
                       });
                       with_grad(n, 2, [&](std::vector<Real>& g) {
                         for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t b = 0; b < B; ++b) {
                             const std::size_t r = b * C + c;
                             Real acc = 0;
                             for (std::size_t s = 0; s < S; ++s) acc += n.grad[r * S + s];
                             g[c] += acc;
                           }
                       });
                     });
}

Tensor permute_last(const Tensor& x, std::span<const std::size_t> perm, Shape out_shape) {
  const std::size_t V = perm.size();
  if (V == 0 || x.numel() % V != 0 || shape_numel(out_shape) != x.numel())
    throw ShapeError("permute_last: permutation of length " + std::to_string(V) + " cannot map " +
                     shape_str(x.shape()) + " to " + shape_str(out_shape));
  const std::size_t outer = x.numel() / V;
  std::vector<std::size_t> p(perm.begin(), perm.end());
  std::vector<Real> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < V; ++i) out[o * V + p[i]] = xv[o * V + i];
  return make_result(std::move(out_shape), std::move(out), {x}, [outer, V, p = std::move(p)](Node& n) {
    with_grad(n, 0, [&](std::vector<Real>& g) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < V; ++i) g[o * V + i] += n.grad[o * V + p[i]];
    });
  });
}

Tensor flip_spatial(const Tensor& x, bool d, bool h, bool w) {
  require_rank(x, 5, "flip_spatial");
  const std::size_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
  std::vector<std::size_t> perm(D * H * W);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < H; ++j)
      for (std::size_t k = 0; k < W; ++k) {
        const std::size_t fi = d ? D - 1 - i : i, fj = h ? H - 1 - j : j, fk = w ? W - 1 - k : k;
        perm[(i * H + j) * W + k] = (fi * H + fj) * W + fk;
      }
  return permute_last(x, perm, x.shape());
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& b, const Tensor& c, const Tensor& a,
                      std::size_t segment) {
  require_rank(u, 3, "selective_scan u");
  require_same(u, delta, "selective_scan delta");
  require_rank(b, 3, "selective_scan B");
  require_same(b, c, "selective_scan C");
  require_rank(a, 2, "selective_scan A");
  kernels::ScanGeometry g;
  g.batch = u.dim(0);
  g.channels = u.dim(1);
  g.length = u.dim(2);
  g.state = a.dim(1);
  g.segment = segment == 0 ? g.length : segment;
  if (a.dim(0) != g.channels || b.dim(0) != g.batch || b.dim(1) != g.state || b.dim(2) != g.length)
    throw ShapeError("selective_scan: u " + shape_str(u.shape()) + ", B " + shape_str(b.shape()) + ", A " +
                     shape_str(a.shape()) + " are inconsistent");
  std::vector<Real> y(u.numel());
  const kernels::ScanInputs in{u.data().data(), delta.data().data(), b.data().data(), c.data().data(),
                               a.data().data()};
  auto tape = grad_enabled() ? std::make_shared<kernels::ScanTape>() : nullptr;
  kernels::selective_scan_forward(g, in, y.data(), tape.get());
  return make_result(u.shape(), std::move(y), {u, delta, b, c, a}, [g, tape](Node& n) {
    const kernels::ScanInputs in{n.inputs[0]->value.data(), n.inputs[1]->value.data(), n.inputs[2]->value.data(),
                                 n.inputs[3]->value.data(), n.inputs[4]->value.data()};
    auto slot = [&](std::size_t i) -> Real* {
      return n.inputs[i]->requires_grad ? n.inputs[i]->ensure_grad().data() : nullptr;
    };
    const kernels::ScanGrads grads{slot(0), slot(1), slot(2), slot(3), slot(4)};
    kernels::selective_scan_backward(g, in, n.grad.data(), grads, tape.get());
  });
}

}  // namespace mmunet::ops
