#pragma once

#include <cstdint>
#include <vector>

#include "mmunet/config.hpp"
#include "mmunet/losses.hpp"

namespace mmunet {

/// Ellipsoid phantoms: classes 1..K-1 are random axis-aligned ellipsoids with
/// intensity mean k * class_gap on a zero-mean background, plus Gaussian noise.
struct SyntheticConfig {
  std::size_t count = 50;
  Int3 dims{32, 32, 32};
  std::size_t classes = 3;
  std::uint64_t seed = 0;
  std::size_t ellipsoids_per_class = 1;
  Real class_gap = Real(1);
  Real noise = Real(0.25);
  bool high_variance = false;  // noise raised to class_gap so intensities overlap
  Real val_fraction = Real(0.2);

  Real effective_noise() const { return high_variance ? class_gap : noise; }
  void validate() const;

  /// Keys: samples, dim (cubic) or dims_d/dims_h/dims_w, classes, data_seed,
  /// ellipsoids_per_class, class_gap, noise, high_variance, val_fraction.
  void read(KvReader& kv);
  KvMap to_kv() const;
};

struct Sample {
  Int3 dims{};
  std::vector<Real> image;           // D * H * W, single channel
  std::vector<std::uint8_t> labels;  // D * H * W
};

struct Dataset {
  SyntheticConfig cfg;
  std::vector<Sample> samples;

  /// The trailing val_fraction of samples (at least one) is validation.
  std::size_t train_count() const;
  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> val_indices() const;

  /// [n, 1, D, H, W] images and [n, D, H, W] labels for the given samples.
  Tensor images(const std::vector<std::size_t>& idx) const;
  LabelGrid labels(const std::vector<std::size_t>& idx) const;
};

/// Deterministic in cfg; each sample draws from its own (seed, index) stream.
Sample generate_sample(const SyntheticConfig& cfg, std::size_t index);
Dataset generate_dataset(const SyntheticConfig& cfg);

}  // namespace mmunet
