#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmunet/config.hpp"
#include "mmunet/layers.hpp"
#include "mmunet/selective.hpp"

namespace mmunet {

enum class BlockVariant { PureConv, PureSsm, HybridOutside, HybridInside, SsmOnlyInside };

/// "pure_conv", "pure_ssm", "hybrid_outside", "hybrid_inside", "ssm_only_inside",
/// or the short labels M1..M5 in that order.
BlockVariant parse_variant(std::string_view text);
std::string variant_name(BlockVariant v);
bool variant_has_ssm(BlockVariant v);
bool variant_has_conv(BlockVariant v);

struct BlockConfig {
  BlockVariant variant = BlockVariant::PureConv;
  MetaSsmConfig ssm{preset("B2")};
};

struct ModelConfig {
  std::size_t stages = 3;
  std::size_t base_channels = 8;
  std::size_t in_channels = 1;
  std::size_t classes = 3;
  BlockConfig enc{BlockVariant::HybridInside};
  BlockConfig bottleneck{BlockVariant::HybridInside};
  BlockConfig dec{BlockVariant::PureConv};
  bool deep_supervision = true;

  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
  void validate() const;

  /// Keys: stages, base_channels, in_channels, classes, enc_block,
  /// bottleneck_block, dec_block, scan_orders, state_dim, share_pairs,
  /// deep_supervision. scan_orders/state_dim/share_pairs apply to every block.
  void read(KvReader& kv);
  KvMap to_kv() const;
};

/// Tap points exposed per block for variance analysis.
inline constexpr const char* kTapNames[] = {"after_conv1", "after_conv2", "inside_residual", "outside_residual"};

/// Collects detached intermediate tensors keyed "<block>.<tap>".
struct TapRecorder {
  std::map<std::string, Tensor> maps;
  bool keep_ssm_input = false;  // also record "<block>.ssm_input"
};

struct ForwardOptions {
  TapRecorder* taps = nullptr;
  bool ssm_identity = false;  // test hook: every MetaSSM unit becomes x -> x
};

/// One replaceable meta block operating at a fixed channel width.
class MetaBlock {
 public:
  MetaBlock() = default;
  MetaBlock(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t channels,
            const BlockConfig& cfg);

  Tensor operator()(const Tensor& x, const ForwardOptions& opt = {}) const;

  BlockVariant variant() const { return cfg_.variant; }
  const std::string& name() const { return name_; }
  /// The first MetaSSM unit (null for PureConv).
  const MetaSsm* first_ssm() const { return ssm1_ ? &*ssm1_ : nullptr; }

 private:
  Tensor run_ssm(const std::optional<MetaSsm>& unit, const Tensor& x, const ForwardOptions& opt) const;

  std::string name_;
  BlockConfig cfg_;
  std::optional<ConvUnit> conv1_, conv2_;
  std::optional<MetaSsm> ssm1_, ssm2_;
};

struct ModelOutput {
  Tensor logits;             // [B, K, D, H, W]
  std::vector<Tensor> aux;   // 1/2 then 1/4 resolution when deep supervision is on
};

/// U-shaped encoder/decoder: stem, (stages - 1) encoder stages, bottleneck,
/// mirrored decoder, per-voxel classifier and auxiliary heads.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  ModelOutput forward(const Tensor& x, const ForwardOptions& opt = {}) const;

  /// Detached copies of the requested taps for every block providing them.
  /// Unknown names, or names no block provides, raise ConfigError.
  std::map<std::string, Tensor> feature_taps(const Tensor& x, const std::vector<std::string>& points) const;

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// Block names in forward order: enc1.., bottleneck, dec<level>...
  std::vector<std::string> block_names() const;
  const MetaBlock& block(const std::string& name) const;

  /// Spatial extents must be divisible by 2^stages.
  void check_input(const Tensor& x) const;

 private:
  ModelConfig cfg_;
  std::uint64_t seed_;
  ParamSet params_;
  ConvUnit stem_;
  std::vector<ConvUnit> down_;      // down_[l - 1] enters level l
  std::vector<MetaBlock> enc_;      // levels 1 .. stages - 1
  MetaBlock bottleneck_;            // level stages
  std::vector<ConvTranspose3d> up_; // up_[l]: level l + 1 -> l
  std::vector<ConvUnit> entry_;     // entry_[l]: 2 C_l -> C_l after the skip concat
  std::vector<MetaBlock> dec_;      // dec_[l]
  ChannelLinear final_;
  std::vector<ChannelLinear> heads_;  // aux heads at levels 1 and 2
};

}  // namespace mmunet
