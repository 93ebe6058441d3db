#include "mmunet/experiments/variance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "mmunet/error.hpp"

namespace mmunet::experiments {

namespace {

// "<block>.<tap>" -> (block, tap); the tap name is the last component.
std::pair<std::string, std::string> split_key(const std::string& key) {
  const auto dot = key.rfind('.');
  return {key.substr(0, dot), key.substr(dot + 1)};
}

struct Running {
  std::size_t n = 0;
  Real mean = 0, m2 = 0;

  // Chan et al. merge of a batch summary into the running one.
  void merge(std::size_t nb, Real mb, Real m2b) {
    if (nb == 0) return;
    const std::size_t total = n + nb;
    const Real d = mb - mean;
    mean += d * Real(nb) / Real(total);
    m2 += m2b + d * d * Real(n) * Real(nb) / Real(total);
    n = total;
  }
};

}  // namespace

Real median(std::vector<Real> v) {
  if (v.empty()) return std::numeric_limits<Real>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2;
}

VarianceReport feature_variance(const Model& model, const Dataset& data, const std::vector<std::size_t>& samples,
                                const std::vector<std::string>& taps, std::size_t bins) {
  if (samples.empty()) throw ConfigError("variance: no samples selected");
  if (bins == 0) throw ConfigError("variance: bins must be positive");
  std::map<std::string, std::vector<Running>> stats;
  std::map<std::string, std::pair<Real, Real>> range;  // per block

  for (auto i : samples) {
    for (const auto& [key, t] : model.feature_taps(data.images({i}), taps)) {
      const std::size_t C = t.dim(1), V = t.numel() / C;  // batch of one
      auto& rs = stats[key];
      rs.resize(C);
      const auto v = t.data();
      auto& [lo, hi] = range.try_emplace(split_key(key).first, std::numeric_limits<Real>::infinity(),
                                         -std::numeric_limits<Real>::infinity())
                           .first->second;
      for (std::size_t c = 0; c < C; ++c) {
        const Real* x = v.data() + c * V;
        Real s = 0;
        for (std::size_t k = 0; k < V; ++k) {
          s += x[k];
          lo = std::min(lo, x[k]);
          hi = std::max(hi, x[k]);
        }
        const Real m = s / Real(V);
        Real m2 = 0;
        for (std::size_t k = 0; k < V; ++k) m2 += (x[k] - m) * (x[k] - m);
        rs[c].merge(V, m, m2);
      }
    }
  }

  VarianceReport r;
  std::map<std::string, std::map<std::string, std::vector<Real>>> per_block;
  for (const auto& [key, rs] : stats) {
    const auto [block, tap] = split_key(key);
    for (std::size_t c = 0; c < rs.size(); ++c) {
      ChannelStats s{block, tap, c, rs[c].n, rs[c].mean, rs[c].m2 / Real(rs[c].n)};
      per_block[block][tap].push_back(s.variance);
      r.channels.push_back(std::move(s));
    }
  }
  std::vector<Real> inside, outside;
  for (const auto& [block, t] : per_block) {
    const auto in = t.find("inside_residual"), out = t.find("outside_residual");
    if (in == t.end() || out == t.end()) continue;
    inside.insert(inside.end(), in->second.begin(), in->second.end());
    outside.insert(outside.end(), out->second.begin(), out->second.end());
  }
  r.median_inside = median(inside);
  r.median_outside = median(outside);

  // Second pass: value histograms on each block's pooled range.
  std::map<std::string, TapHistogram> hist;
  for (auto i : samples) {
    for (const auto& [key, t] : model.feature_taps(data.images({i}), taps)) {
      const auto [block, tap] = split_key(key);
      auto& h = hist[key];
      if (h.counts.empty()) {
        h.block = block;
        h.tap = tap;
        std::tie(h.lo, h.hi) = range.at(block);
        h.counts.assign(bins, 0);
      }
      const Real width = h.hi > h.lo ? (h.hi - h.lo) / Real(bins) : Real(1);
      for (Real x : t.data()) {
        const auto b = static_cast<std::size_t>(std::floor((x - h.lo) / width));
        ++h.counts[std::min(b, bins - 1)];
      }
    }
  }
  for (auto& [_, h] : hist) r.histograms.push_back(std::move(h));
  return r;
}

std::string variance_csv(const VarianceReport& r) {
  std::string out = "block,tap,channel,count,mean,variance\n";
  for (const auto& s : r.channels)
    out += s.block + "," + s.tap + "," + std::to_string(s.channel) + "," + std::to_string(s.count) + "," +
           format_real(s.mean, 10) + "," + format_real(s.variance, 10) + "\n";
  return out;
}

std::string histogram_csv(const VarianceReport& r) {
  std::string out = "block,tap,bin,lo,hi,count\n";
  for (const auto& h : r.histograms) {
    const Real width = h.hi > h.lo ? (h.hi - h.lo) / Real(h.counts.size()) : Real(1);
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      out += h.block + "," + h.tap + "," + std::to_string(b) + "," + format_real(h.lo + width * Real(b), 10) + "," +
             format_real(h.lo + width * Real(b + 1), 10) + "," + std::to_string(h.counts[b]) + "\n";
  }
  return out;
}

std::string variance_summary_csv(const VarianceReport& r) {
  return "median_inside,median_outside\n" + format_real(r.median_inside, 10) + "," + format_real(r.median_outside, 10) +
         "\n";
}

}  // namespace mmunet::experiments
