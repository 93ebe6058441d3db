#include "mmunet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mmunet/error.hpp"
#include "mmunet/ops.hpp"

namespace mmunet {

namespace {
void check_target(const Tensor& logits, const LabelGrid& target) {
  if (logits.rank() < 3 || target.shape.size() + 1 != logits.rank() || target.shape[0] != logits.dim(0) ||
      !std::equal(target.shape.begin() + 1, target.shape.end(), logits.shape().begin() + 2))
    throw ShapeError("loss: logits " + shape_str(logits.shape()) + " vs labels " + shape_str(target.shape));
  const std::size_t K = logits.dim(1);
  for (auto l : target.v)
    if (l >= K) throw ConfigError("loss: label " + std::to_string(l) + " out of range for " + std::to_string(K) +
                                  " classes");
}
}  // namespace

Tensor dice_ce_loss(const Tensor& logits, const LabelGrid& target, Real smooth) {
  check_target(logits, target);
  const std::size_t B = logits.dim(0), K = logits.dim(1), V = logits.numel() / (B * K);
  if (K < 2) throw ConfigError("loss: need at least 2 classes");
  const auto z = logits.data();

  // Probabilities laid out like the logits.
  std::vector<Real> p(z.size());
  Real ce = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < V; ++i) {
      const std::size_t base = b * K * V + i;
      Real m = z[base];
      for (std::size_t k = 1; k < K; ++k) m = std::max(m, z[base + k * V]);
      Real s = 0;
      for (std::size_t k = 0; k < K; ++k) s += (p[base + k * V] = std::exp(z[base + k * V] - m));
      for (std::size_t k = 0; k < K; ++k) p[base + k * V] /= s;
      const std::size_t y = target.v[b * V + i];
      ce -= z[base + y * V] - m - std::log(s);
    }
  const Real n = Real(B * V);
  ce /= n;

  std::vector<Real> inter(K, 0), psum(K, 0), gsum(K, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 1; k < K; ++k)
      for (std::size_t i = 0; i < V; ++i) {
        const Real pk = p[(b * K + k) * V + i];
        const bool g = target.v[b * V + i] == k;
        psum[k] += pk;
        if (g) {
          inter[k] += pk;
          gsum[k] += 1;
        }
      }
  Real dice_mean = 0;
  for (std::size_t k = 1; k < K; ++k) dice_mean += (2 * inter[k] + smooth) / (psum[k] + gsum[k] + smooth);
  dice_mean /= Real(K - 1);
  const Real loss = (1 - dice_mean) + ce;

  return make_result(Shape{}, {loss}, {logits},
                     [p = std::move(p), inter, psum, gsum, B, K, V, n, smooth, target](detail::Node& node) {
                       auto& g = node.inputs[0]->ensure_grad();
                       const Real go = node.grad[0];
                       std::vector<Real> gp(K);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t i = 0; i < V; ++i) {
                           const std::size_t y = target.v[b * V + i];
                           // d(dice loss)/dp_k for this voxel.
                           Real dot = 0;
                           for (std::size_t k = 0; k < K; ++k) {
                             Real d = 0;
                             if (k > 0) {
                               const Real u = psum[k] + gsum[k] + smooth;
                               const Real num = 2 * inter[k] + smooth;
                               const Real gk = y == k ? Real(1) : Real(0);
                               d = -(2 * gk * u - num) / (u * u) / Real(K - 1);
                             }
                             gp[k] = d;
                             dot += p[(b * K + k) * V + i] * d;
                           }
                           for (std::size_t k = 0; k < K; ++k) {
                             const std::size_t idx = (b * K + k) * V + i;
                             const Real pk = p[idx];
                             const Real ce_g = (pk - (y == k ? Real(1) : Real(0))) / n;
                             g[idx] += go * (pk * (gp[k] - dot) + ce_g);
                           }
                         }
                     });
}

LabelGrid downsample_labels(const LabelGrid& labels, std::size_t factor) {
  if (factor == 0) throw ConfigError("downsample_labels: factor must be positive");
  if (factor == 1) return labels;
  const auto& s = labels.shape;
  if (s.size() != 4) throw ShapeError("downsample_labels: expected [B, D, H, W], got " + shape_str(s));
  for (std::size_t i = 1; i < 4; ++i)
    if (s[i] % factor) throw ShapeError("downsample_labels: " + shape_str(s) + " not divisible by " +
                                        std::to_string(factor));
  LabelGrid out({s[0], s[1] / factor, s[2] / factor, s[3] / factor});
  const auto& o = out.shape;
  std::size_t idx = 0;
  for (std::size_t b = 0; b < o[0]; ++b)
    for (std::size_t d = 0; d < o[1]; ++d)
      for (std::size_t h = 0; h < o[2]; ++h)
        for (std::size_t w = 0; w < o[3]; ++w)
          out.v[idx++] = labels.v[((b * s[1] + d * factor) * s[2] + h * factor) * s[3] + w * factor];
  return out;
}

std::vector<Real> halving_weights(std::size_t n) {
  if (n == 0) throw ConfigError("halving_weights: need at least one head");
  std::vector<Real> w(n);
  Real total = 0;
  for (std::size_t i = 0; i < n; ++i) total += (w[i] = std::ldexp(Real(1), -static_cast<int>(i)));
  for (auto& x : w) x /= total;
  return w;
}

Tensor deep_supervised_loss(const ModelOutput& out, const LabelGrid& target, const std::vector<Real>& weights) {
  std::vector<Tensor> heads{out.logits};
  heads.insert(heads.end(), out.aux.begin(), out.aux.end());
  if (weights.size() != heads.size())
    throw ConfigError("deep supervision: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(heads.size()) + " outputs");
  Tensor total;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const std::size_t full = out.logits.dim(2), here = heads[i].dim(2);
    if (here == 0 || full % here) throw ShapeError("deep supervision: resolution mismatch at head " + std::to_string(i));
    const Tensor l = ops::scale(dice_ce_loss(heads[i], downsample_labels(target, full / here)), weights[i]);
    total = total.defined() ? ops::add(total, l) : l;
  }
  return total;
}

std::vector<Real> dice_score(const LabelGrid& pred, const LabelGrid& gt, std::size_t classes) {
  if (pred.shape != gt.shape) throw ShapeError("dice_score: " + shape_str(pred.shape) + " vs " + shape_str(gt.shape));
  std::vector<std::size_t> inter(classes, 0), np(classes, 0), ng(classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto a = pred.v[i], b = gt.v[i];
    if (a < classes) ++np[a];
    if (b < classes) ++ng[b];
    if (a == b && a < classes) ++inter[a];
  }
  std::vector<Real> out(classes);
  for (std::size_t k = 0; k < classes; ++k)
    out[k] = np[k] + ng[k] == 0 ? Real(1) : Real(2 * inter[k]) / Real(np[k] + ng[k]);
  return out;
}

Real mean_foreground(const std::vector<Real>& per_class) {
  if (per_class.size() < 2) return per_class.empty() ? Real(0) : per_class[0];
  Real s = 0;
  for (std::size_t k = 1; k < per_class.size(); ++k) s += per_class[k];
  return s / Real(per_class.size() - 1);
}

LabelGrid argmax_labels(const Tensor& scores) {
  if (scores.rank() < 2) throw ShapeError("argmax: expected [B, K, ...], got " + shape_str(scores.shape()));
  const std::size_t B = scores.dim(0), K = scores.dim(1), V = scores.numel() / (B * K);
  Shape s{B};
  s.insert(s.end(), scores.shape().begin() + 2, scores.shape().end());
  LabelGrid out(s);
  const auto v = scores.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < V; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (v[(b * K + k) * V + i] > v[(b * K + best) * V + i]) best = k;
      out.v[b * V + i] = static_cast<std::uint8_t>(best);
    }
  return out;
}

}  // namespace mmunet
