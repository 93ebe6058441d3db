#pragma once

#include <string>
#include <vector>

#include "mmunet/network.hpp"

namespace mmunet::experiments {

struct AttentionConfig {
  std::string block = "bottleneck";
  std::size_t order = 0;              // index into the unit's scan orders
  std::size_t max_length = 1024;      // refuse sequences longer than this
};

struct AttentionMaps {
  std::string block;
  std::string order;
  std::size_t length = 0;
  std::vector<ssm::Matrix> raw;       // one L x L operator per channel
  std::vector<Real> identity_error;   // max |M u - scan(u)| per channel
  Real upper_max = 0;                 // max |M[t, s]| over s > t, all channels
};

/// Attention operators of the first MetaSSM unit of `cfg.block` for a
/// [1, C, D, H, W] image, along one of its scan orders. Raises ConfigError
/// when the block has no SSM, the order index is out of range or L exceeds
/// max_length.
AttentionMaps block_attention(const Model& model, const Tensor& image, const AttentionConfig& cfg);

/// Each row divided by its largest magnitude (zero rows stay zero).
ssm::Matrix row_max_normalized(const ssm::Matrix& m);

/// L lines of L comma-separated values.
std::string matrix_csv(const ssm::Matrix& m);

/// channel,identity_error
std::string attention_summary_csv(const AttentionMaps& a);

}  // namespace mmunet::experiments
