#pragma once

#include <functional>
#include <vector>

#include "mmunet/config.hpp"
#include "mmunet/losses.hpp"
#include "mmunet/network.hpp"

namespace mmunet {

struct InferConfig {
  Int3 patch{32, 32, 32};
  Real overlap = Real(0.5);
  bool tta = true;
  Real sigma_scale = Real(0.125);
  Real weight_floor = Real(1e-3);

  void validate() const;
  /// Keys: patch (cubic) or patch_d/patch_h/patch_w, overlap, tta,
  /// sigma_scale, weight_floor.
  void read(KvReader& kv);
  KvMap to_kv() const;
};

/// Maps a [1, C, d, h, w] patch to [1, K, d, h, w] logits.
using Predictor = std::function<Tensor(const Tensor&)>;

/// Gradient-free forward pass of `model` (the model must outlive the predictor).
Predictor model_predictor(const Model& model);

/// exp(-0.5 * sum_a ((i_a - c_a) / sigma_a)^2) with c_a = (n_a - 1) / 2 and
/// sigma_a = n_a * sigma_scale, clamped below at `floor`. Shape [D, H, W].
Tensor gaussian_map(Int3 dims, Real sigma_scale = Real(0.125), Real floor = Real(1e-3));

/// Mean over the 8 axis-flip combinations of inverse-flipped softmax outputs.
Tensor flip_tta(const Predictor& predict, const Tensor& patch);

/// Softmax probabilities of one patch, with or without flip TTA.
Tensor patch_probabilities(const Predictor& predict, const Tensor& patch, bool tta);

/// Start offsets of tiles of size `patch` along an axis of size `extent`:
/// stride floor(patch * (1 - overlap)) (at least 1), last tile flush with the end.
std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t patch, Real overlap);

struct SlidingResult {
  Tensor probabilities;  // [K, D, H, W]
  LabelGrid labels;      // [1, D, H, W]
};

/// Gaussian-weighted sliding-window prediction over a [C, D, H, W] volume.
/// Tiles are accumulated in a fixed order, so results are deterministic.
SlidingResult sliding_window_predict(const Predictor& predict, const Tensor& volume, const InferConfig& cfg);

}  // namespace mmunet
