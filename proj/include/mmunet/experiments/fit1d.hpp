#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmunet/config.hpp"
#include "mmunet/tensor.hpp"

namespace mmunet::experiments {

// Fits a flattened 2D image with banks of static HiPPO systems. Each of the
// `channels` systems has fixed (A, B, delta); only the output rows C and a
// scalar bias are trained. A bank reads the sequence in its scan direction and
// predicts every value from the values before it, so a row start must be
// inferred from the end of the previous row unless a reverse bank is present.
struct Fit1dConfig {
  std::size_t height = 64;
  std::size_t width_px = 64;
  std::size_t channels = 16;
  std::size_t state = 64;
  std::size_t steps = 2000;
  Real lr = Real(1e-2);
  Real delta_min = Real(1e-3);
  Real delta_max = Real(1e-1);
  std::size_t boundary = 4;  // half-width of the row-boundary window
  std::uint64_t seed = 0;
  // Synthetic image: ramp along W in [-1, 1], one bright column, noise.
  Real column_gain = Real(4);
  Real noise = Real(0.5);

  void validate() const;
  /// Keys: height, width, channels, state_dim, steps, lr, delta_min,
  /// delta_max, boundary, seed, column_gain, noise.
  void read(KvReader& kv);
  KvMap to_kv() const;
};

enum class Fit1dMode { Forward, Reverse, Bi };
const char* fit1d_mode_name(Fit1dMode m);
Fit1dMode parse_fit1d_mode(const std::string& s);

/// Seeded H x W test image, row-major.
std::vector<Real> fit1d_image(const Fit1dConfig& cfg);

struct Fit1dResult {
  Fit1dMode mode = Fit1dMode::Forward;
  std::vector<Real> prediction;  // per position of the row-major image
  std::vector<Real> abs_error;
  Real boundary_error = 0;  // mean |error| within +-boundary of a row start
  Real interior_error = 0;  // mean |error| elsewhere
  Real final_loss = 0;
};

/// True for flattened positions within `half` of a row boundary (positions
/// r*W - half .. r*W + half - 1 for r = 1..H-1).
std::vector<bool> boundary_mask(std::size_t height, std::size_t width, std::size_t half);

/// Trains on `image` (height x width) under the given direction set.
/// Forward scans the row-major sequence front to back, Reverse back to front,
/// Bi gives half of the channels to each direction.
Fit1dResult fit1d(const std::vector<Real>& image, const Fit1dConfig& cfg, Fit1dMode mode);

/// Per-position CSV: position,row,col,target, then pred_/err_ columns per result.
std::string fit1d_positions_csv(const std::vector<Real>& image, const Fit1dConfig& cfg,
                                const std::vector<Fit1dResult>& results);

/// mode,boundary_error,interior_error,final_loss
std::string fit1d_summary_csv(const std::vector<Fit1dResult>& results);

}  // namespace mmunet::experiments
