#pragma once

#include <string>
#include <vector>

#include "mmunet/network.hpp"
#include "mmunet/synthetic.hpp"

namespace mmunet::experiments {

struct ChannelStats {
  std::string block;
  std::string tap;
  std::size_t channel = 0;
  std::size_t count = 0;
  Real mean = 0;
  Real variance = 0;  // population variance over all voxels of all samples
};

struct TapHistogram {
  std::string block;
  std::string tap;
  Real lo = 0, hi = 0;  // shared by every tap of the block
  std::vector<std::size_t> counts;
};

struct VarianceReport {
  std::vector<ChannelStats> channels;
  std::vector<TapHistogram> histograms;
  // Medians of per-channel variance over every block that exposes both taps.
  Real median_inside = 0;
  Real median_outside = 0;
};

/// Per-channel feature statistics at the given taps over the listed samples.
/// Raises ConfigError for taps no block of the model provides.
VarianceReport feature_variance(const Model& model, const Dataset& data, const std::vector<std::size_t>& samples,
                                const std::vector<std::string>& taps, std::size_t bins = 50);

/// block,tap,channel,count,mean,variance
std::string variance_csv(const VarianceReport& r);
/// block,tap,bin,lo,hi,count
std::string histogram_csv(const VarianceReport& r);
/// median_inside,median_outside
std::string variance_summary_csv(const VarianceReport& r);

Real median(std::vector<Real> v);

}  // namespace mmunet::experiments
