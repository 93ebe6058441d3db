#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mmunet/losses.hpp"
#include "mmunet/synthetic.hpp"

namespace mmunet {

// Volume file: "MMUV1" | u8 dtype (0 = f32 image, 1 = u8 labels) | u32 D, H, W, C
// (little-endian) | payload in D, H, W, C order with C fastest.
struct VolumeFile {
  enum class Dtype : std::uint8_t { F32 = 0, U8 = 1 };

  Dtype dtype = Dtype::F32;
  Int3 dims{1, 1, 1};
  std::size_t channels = 1;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t element_count() const { return dims[0] * dims[1] * dims[2] * channels; }
};

void write_volume(const std::filesystem::path& path, const VolumeFile& v);
VolumeFile read_volume(const std::filesystem::path& path);

/// f32 volume -> [C, D, H, W] tensor, and back.
Tensor volume_to_tensor(const VolumeFile& v);
VolumeFile tensor_to_volume(const Tensor& t);

/// u8 volume (C = 1) -> [1, D, H, W] labels, and back.
LabelGrid volume_to_labels(const VolumeFile& v);
VolumeFile labels_to_volume(const LabelGrid& labels);

// Dataset directory: dataset.txt (generator config), images/NNNN.mmuv (f32),
// labels/NNNN.mmuv (u8) and class_counts.csv (sample, count_0..count_{K-1}).
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// sample,count_0,...,count_{K-1}
std::string class_counts_csv(const Dataset& data);

}  // namespace mmunet
