#include "mmunet/inference.hpp"

#include <algorithm>
#include <cmath>

#include "mmunet/error.hpp"
#include "mmunet/ops.hpp"

namespace mmunet {

void InferConfig::validate() const {
  if (patch[0] == 0 || patch[1] == 0 || patch[2] == 0) throw ConfigError("infer: patch extents must be positive");
  if (!(overlap >= 0 && overlap < 1)) throw ConfigError("infer: overlap must be in [0, 1)");
  if (!(sigma_scale > 0)) throw ConfigError("infer: sigma_scale must be positive");
  if (!(weight_floor > 0)) throw ConfigError("infer: weight_floor must be positive");
}

void InferConfig::read(KvReader& kv) {
  std::size_t cube = 0;
  kv.read("patch", cube);
  if (cube) patch = {cube, cube, cube};
  kv.read("patch_d", patch[0]);
  kv.read("patch_h", patch[1]);
  kv.read("patch_w", patch[2]);
  kv.read("overlap", overlap);
  kv.read("tta", tta);
  kv.read("sigma_scale", sigma_scale);
  kv.read("weight_floor", weight_floor);
  validate();
}

KvMap InferConfig::to_kv() const {
  return {{"patch_d", std::to_string(patch[0])},     {"patch_h", std::to_string(patch[1])},
          {"patch_w", std::to_string(patch[2])},     {"overlap", format_real(overlap)},
          {"tta", tta ? "true" : "false"},           {"sigma_scale", format_real(sigma_scale)},
          {"weight_floor", format_real(weight_floor)}};
}

Predictor model_predictor(const Model& model) {
  return [&model](const Tensor& x) {
    NoGradGuard guard;
    return model.forward(x).logits;
  };
}

Tensor gaussian_map(Int3 dims, Real sigma_scale, Real floor) {
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw ConfigError("gaussian_map: empty extent");
  std::array<std::vector<Real>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    const Real c = (Real(dims[a]) - 1) / 2;
    const Real sigma = Real(dims[a]) * sigma_scale;
    axis[a].resize(dims[a]);
    for (std::size_t i = 0; i < dims[a]; ++i) {
      const Real z = (Real(i) - c) / sigma;
      axis[a][i] = Real(-0.5) * z * z;
    }
  }
  std::vector<Real> v(dims[0] * dims[1] * dims[2]);
  std::size_t idx = 0;
  for (std::size_t d = 0; d < dims[0]; ++d)
    for (std::size_t h = 0; h < dims[1]; ++h)
      for (std::size_t w = 0; w < dims[2]; ++w) v[idx++] = std::max(floor, std::exp(axis[0][d] + axis[1][h] + axis[2][w]));
  return Tensor({dims[0], dims[1], dims[2]}, std::move(v));
}

Tensor flip_tta(const Predictor& predict, const Tensor& patch) {
  NoGradGuard guard;
  std::vector<Real> acc;
  Shape shape;
  for (int mask = 0; mask < 8; ++mask) {
    const bool fd = mask & 4, fh = mask & 2, fw = mask & 1;
    const Tensor p = ops::flip_spatial(ops::softmax_channels(predict(ops::flip_spatial(patch, fd, fh, fw))), fd, fh, fw);
    if (acc.empty()) {
      acc.assign(p.data().begin(), p.data().end());
      shape = p.shape();
    } else {
      const auto pv = p.data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += pv[i];
    }
  }
  for (auto& a : acc) a /= Real(8);
  return Tensor(std::move(shape), std::move(acc));
}

Tensor patch_probabilities(const Predictor& predict, const Tensor& patch, bool tta) {
  if (tta) return flip_tta(predict, patch);
  NoGradGuard guard;
  return ops::softmax_channels(predict(patch)).detach();
}

std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t patch, Real overlap) {
  if (patch == 0 || extent < patch)
    throw ConfigError("sliding window: volume extent " + std::to_string(extent) + " is smaller than patch " +
                      std::to_string(patch));
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(Real(patch) * (1 - overlap))));
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + patch < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  return starts;
}

SlidingResult sliding_window_predict(const Predictor& predict, const Tensor& volume, const InferConfig& cfg) {
  cfg.validate();
  if (volume.rank() != 4) throw ShapeError("sliding window: expected [C, D, H, W], got " + shape_str(volume.shape()));
  const std::size_t C = volume.dim(0);
  const Int3 dims{volume.dim(1), volume.dim(2), volume.dim(3)};
  const Int3& p = cfg.patch;
  std::array<std::vector<std::size_t>, 3> starts;
  for (int a = 0; a < 3; ++a) starts[a] = tile_starts(dims[a], p[a], cfg.overlap);

  const Tensor g = gaussian_map(p, cfg.sigma_scale, cfg.weight_floor);
  const auto gv = g.data();
  const std::size_t V = dims[0] * dims[1] * dims[2], PV = p[0] * p[1] * p[2];
  std::vector<Real> weight(V, Real(0));
  std::vector<Real> acc;
  std::size_t K = 0;
  const auto src = volume.data();

  for (auto d0 : starts[0])
    for (auto h0 : starts[1])
      for (auto w0 : starts[2]) {
        std::vector<Real> tile(C * PV);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t d = 0; d < p[0]; ++d)
            for (std::size_t h = 0; h < p[1]; ++h)
              for (std::size_t w = 0; w < p[2]; ++w)
                tile[((c * p[0] + d) * p[1] + h) * p[2] + w] =
                    src[((c * dims[0] + d0 + d) * dims[1] + h0 + h) * dims[2] + w0 + w];
        const Tensor probs = patch_probabilities(predict, Tensor({1, C, p[0], p[1], p[2]}, std::move(tile)), cfg.tta);
        if (K == 0) {
          K = probs.dim(1);
          acc.assign(K * V, Real(0));
        }
        const auto pv = probs.data();
        for (std::size_t d = 0; d < p[0]; ++d)
          for (std::size_t h = 0; h < p[1]; ++h)
            for (std::size_t w = 0; w < p[2]; ++w) {
              const std::size_t local = (d * p[1] + h) * p[2] + w;
              const std::size_t global = ((d0 + d) * dims[1] + h0 + h) * dims[2] + w0 + w;
              weight[global] += gv[local];
              for (std::size_t k = 0; k < K; ++k) acc[k * V + global] += pv[k * PV + local] * gv[local];
            }
      }
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < V; ++i) acc[k * V + i] /= weight[i];
  SlidingResult r;
  r.probabilities = Tensor({K, dims[0], dims[1], dims[2]}, std::move(acc));
  r.labels = argmax_labels(ops::reshape(r.probabilities, {1, K, dims[0], dims[1], dims[2]}));
  return r;
}

}  // namespace mmunet
