#pragma once

#include <filesystem>

#include "mmunet/network.hpp"

namespace mmunet {

// Single-file model checkpoint:
//   "MMUW1" | u16 version | u32 n + n bytes of key=value model config (incl. seed)
//   | u32 entry count | entries (u16 name length, name, u8 rank, u32 dims[rank],
//   u64 element offset) | payload of little-endian f64 values.
// All integers little-endian.

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);

/// Rebuilds the model from the stored config and fills its parameters.
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mmunet
