#pragma once

#include <string>
#include <vector>

#include "mmunet/layers.hpp"
#include "mmunet/scan_order.hpp"
#include "mmunet/ssm.hpp"

namespace mmunet {

/// Input-dependent diagonal SSM over [B, C, L] sequences.
///
/// delta_t = softplus(W_d u_t + b_d), B_t = W_b u_t + b_b, C_t = W_c u_t + b_c,
/// A = -exp(a_log) per (channel, state). Channels do not mix through the state.
class SelectiveSsm {
 public:
  SelectiveSsm() = default;
  SelectiveSsm(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t channels,
               std::size_t state);

  /// Ungated scan; the recurrence restarts every `segment` positions (0 = never).
  Tensor scan(const Tensor& u, std::size_t segment = 0) const;

  /// Per-step parameters for `u`, in the layouts ops::selective_scan takes.
  struct Projected {
    Tensor delta;  // [B, C, L]
    Tensor b;      // [B, N, L]
    Tensor c;      // [B, N, L]
    Tensor a;      // [C, N]
  };
  Projected project(const Tensor& u) const;

  std::size_t channels() const { return channels_; }
  std::size_t state() const { return state_; }

  ChannelLinear delta_proj;
  ChannelLinear b_proj;
  ChannelLinear c_proj;
  Tensor a_log;  // [C, N]

 private:
  std::size_t channels_ = 0;
  std::size_t state_ = 0;
};

/// scan(u) multiplied elementwise by `gate` (same shape as u).
Tensor gated_scan(const SelectiveSsm& ssm, const Tensor& gate, const Tensor& u, std::size_t segment = 0);

/// Lower-triangular L x L operator of one (batch, channel) lane of a selective
/// scan, so that y[b, ch, :] = M u[b, ch, :]. Entries across segment
/// boundaries are zero.
ssm::Matrix selective_attention(const Tensor& delta, const Tensor& b, const Tensor& c, const Tensor& a,
                                std::size_t batch, std::size_t channel, std::size_t segment = 0);

struct MetaSsmConfig {
  OrderSet orders;
  std::size_t state = 16;
  bool share_pairs = true;  // an order and its flip share one SelectiveSsm
};

/// Multi-direction SSM unit over [B, C, D, H, W] volumes: normalize, flatten
/// along each order, scan, unflatten, average, gate, project.
class MetaSsm {
 public:
  MetaSsm() = default;
  MetaSsm(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t channels,
          const MetaSsmConfig& cfg);

  Tensor operator()(const Tensor& x) const;

  /// Index into ssms() used by each order.
  const std::vector<std::size_t>& groups() const { return group_; }
  const std::vector<SelectiveSsm>& ssms() const { return ssm_; }
  const OrderSet& orders() const { return cfg_.orders; }
  const InstanceNorm& norm() const { return norm_; }

 private:
  MetaSsmConfig cfg_;
  InstanceNorm norm_;
  ChannelLinear gate_;
  ChannelLinear out_;
  std::vector<SelectiveSsm> ssm_;
  std::vector<std::size_t> group_;
};

}  // namespace mmunet
