#pragma once

#include <array>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "mmunet/tensor.hpp"

namespace mmunet {

/// An invertible voxel-to-sequence mapping over a D x H x W grid.
///
/// Axis orders name axes slowest to fastest: "DHW" scans W first, then H,
/// then D. A flipped order visits the same path backwards.
struct ScanOrder {
  enum class Kind { Axes, TwoD, Window3D, Zigzag, Inclined };

  Kind kind = Kind::Axes;
  std::array<int, 3> axes{0, 1, 2};  // 0 = D, 1 = H, 2 = W; slowest first
  bool flipped = false;
  std::size_t window = 2;  // Window3D edge length

  std::string name() const;
  bool operator==(const ScanOrder&) const = default;

  /// Accepts "DHW", "HWD", ..., "2d", "window:2", "zigzag", "inclined", and
  /// any of those wrapped as "flip(...)".
  static ScanOrder parse(std::string_view text);
};

ScanOrder flip(ScanOrder order);

/// The sixteen orders (a)-(p): six axis orders each with its flip, then the
/// 2D, 3D-window, zigzag and inclined scans.
std::vector<ScanOrder> all_orders();

/// A realized order for concrete extents.
struct RealizedOrder {
  std::vector<std::size_t> position;  // voxel linear index -> sequence position
  std::vector<std::size_t> voxel;     // sequence position -> voxel linear index
  std::size_t segment = 0;            // the recurrence restarts every `segment` positions
};

/// Cached realization; safe to call concurrently. Throws ConfigError when the
/// order cannot be realized (e.g. window extents not dividing the volume).
std::shared_ptr<const RealizedOrder> realize(const ScanOrder& order, Int3 dims);

/// out[..., pi(i)] = v[..., i] over the trailing D, H, W axes.
Tensor flatten(const Tensor& v, const ScanOrder& order);

/// Inverse of flatten: [..., L] back to [..., D, H, W].
Tensor unflatten(const Tensor& s, const ScanOrder& order, Int3 dims);

/// Number of consecutive sequence positions whose voxels are not face
/// neighbours (differ by more than one step in one coordinate).
std::size_t discontinuity_count(const ScanOrder& order, Int3 dims);

/// A named set of directions used by one MetaSSM unit.
struct OrderSet {
  std::string name;
  std::vector<ScanOrder> orders;

  std::string spec() const;  // round-trips through parse_order_set
};

/// Presets "B1".."B9" matching the MetaScan ablation rows.
OrderSet preset(std::string_view name);
std::vector<std::string> preset_names();

/// A preset name or a comma-separated list of order names.
OrderSet parse_order_set(std::string_view text);

}  // namespace mmunet
