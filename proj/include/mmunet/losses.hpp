#pragma once

#include <cstdint>
#include <vector>

#include "mmunet/network.hpp"

namespace mmunet {

/// Integer class labels with shape [B, D, H, W].
struct LabelGrid {
  Shape shape;
  std::vector<std::uint8_t> v;

  LabelGrid() = default;
  LabelGrid(Shape s, std::uint8_t fill = 0) : shape(std::move(s)), v(shape_numel(shape), fill) {}
  std::size_t size() const { return v.size(); }
};

/// Soft Dice loss over foreground classes (batch-wide sums, smoothing `smooth`
/// in numerator and denominator, averaged over classes 1..K-1) plus the
/// voxel-mean cross entropy. logits: [B, K, D, H, W].
Tensor dice_ce_loss(const Tensor& logits, const LabelGrid& target, Real smooth = Real(1e-5));

/// Nearest-neighbour downsampling by an integer factor: out[i] = in[f * i].
LabelGrid downsample_labels(const LabelGrid& labels, std::size_t factor);

/// n weights halving with each head, normalized to sum 1 (n = 3 gives 4/7, 2/7, 1/7).
std::vector<Real> halving_weights(std::size_t n);

/// Weighted dice_ce_loss over the full-resolution logits and each auxiliary
/// head, with labels downsampled to every head's extent.
Tensor deep_supervised_loss(const ModelOutput& out, const LabelGrid& target, const std::vector<Real>& weights);

/// Per-class Dice 2|P∩G| / (|P| + |G|) for classes 0..K-1; 1 when both are empty.
std::vector<Real> dice_score(const LabelGrid& pred, const LabelGrid& gt, std::size_t classes);

/// Mean over classes 1..K-1 of a dice_score result.
Real mean_foreground(const std::vector<Real>& per_class);

/// Per-voxel argmax over axis 1 of [B, K, ...]; ties go to the lower class.
LabelGrid argmax_labels(const Tensor& scores);

}  // namespace mmunet
