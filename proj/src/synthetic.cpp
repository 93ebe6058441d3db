#include "mmunet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mmunet/error.hpp"

namespace mmunet {

void SyntheticConfig::validate() const {
  if (count < 2) throw ConfigError("synthetic: need at least 2 samples");
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw ConfigError("synthetic: empty volume");
  if (classes < 2 || classes > 255) throw ConfigError("synthetic: classes must be in [2, 255]");
  if (ellipsoids_per_class < 1) throw ConfigError("synthetic: ellipsoids_per_class must be positive");
  if (!(noise >= 0) || !(class_gap > 0)) throw ConfigError("synthetic: bad intensity parameters");
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("synthetic: val_fraction must be in (0, 1)");
}

void SyntheticConfig::read(KvReader& kv) {
  kv.read("samples", count);
  std::size_t cube = 0;
  kv.read("dim", cube);
  if (cube) dims = {cube, cube, cube};
  kv.read("dims_d", dims[0]);
  kv.read("dims_h", dims[1]);
  kv.read("dims_w", dims[2]);
  kv.read("classes", classes);
  kv.read("data_seed", seed);
  kv.read("ellipsoids_per_class", ellipsoids_per_class);
  kv.read("class_gap", class_gap);
  kv.read("noise", noise);
  kv.read("high_variance", high_variance);
  kv.read("val_fraction", val_fraction);
  validate();
}

KvMap SyntheticConfig::to_kv() const {
  auto r = [](Real v) { return format_real(v); };
  return {{"samples", std::to_string(count)},
          {"dims_d", std::to_string(dims[0])},
          {"dims_h", std::to_string(dims[1])},
          {"dims_w", std::to_string(dims[2])},
          {"classes", std::to_string(classes)},
          {"data_seed", std::to_string(seed)},
          {"ellipsoids_per_class", std::to_string(ellipsoids_per_class)},
          {"class_gap", r(class_gap)},
          {"noise", r(noise)},
          {"high_variance", high_variance ? "true" : "false"},
          {"val_fraction", r(val_fraction)}};
}

Sample generate_sample(const SyntheticConfig& cfg, std::size_t index) {
  const auto [D, H, W] = cfg.dims;
  const std::size_t V = D * H * W;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::mt19937_64 eng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Sample s;
  s.dims = cfg.dims;
  s.labels.assign(V, 0);
  // Redraw the layout until every class shows up.
  for (int attempt = 0;; ++attempt) {
    std::fill(s.labels.begin(), s.labels.end(), 0);
    for (std::size_t k = 1; k < cfg.classes; ++k)
      for (std::size_t e = 0; e < cfg.ellipsoids_per_class; ++e) {
        double center[3], radius[3];
        for (int a = 0; a < 3; ++a) {
          const double ext = static_cast<double>(cfg.dims[a]);
          center[a] = ext * (0.25 + 0.5 * unit(eng));
          radius[a] = std::max(1.0, ext * (0.15 + 0.15 * unit(eng)));
        }
        for (std::size_t d = 0; d < D; ++d)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
              const double p[3] = {d + 0.5, h + 0.5, w + 0.5};
              double r2 = 0;
              for (int a = 0; a < 3; ++a) r2 += std::pow((p[a] - center[a]) / radius[a], 2);
              if (r2 <= 1.0) s.labels[(d * H + h) * W + w] = static_cast<std::uint8_t>(k);
            }
      }
    std::vector<bool> seen(cfg.classes, false);
    for (auto l : s.labels) seen[l] = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) break;
    if (attempt > 1000) throw ConfigError("synthetic: cannot place every class in the volume");
  }
  std::normal_distribution<double> noise(0.0, static_cast<double>(cfg.effective_noise()));
  s.image.resize(V);
  for (std::size_t i = 0; i < V; ++i)
    s.image[i] = static_cast<Real>(static_cast<double>(s.labels[i]) * static_cast<double>(cfg.class_gap) + noise(eng));
  return s;
}

Dataset generate_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.cfg = cfg;
  ds.samples.resize(cfg.count);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < cfg.count; ++i) ds.samples[i] = generate_sample(cfg, i);
  return ds;
}

std::size_t Dataset::train_count() const {
  const auto n = samples.size();
  const auto val = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(Real(n) * cfg.val_fraction)), 1, n - 1);
  return n - val;
}

std::vector<std::size_t> Dataset::train_indices() const {
  std::vector<std::size_t> idx(train_count());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

std::vector<std::size_t> Dataset::val_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = train_count(); i < samples.size(); ++i) idx.push_back(i);
  return idx;
}

Tensor Dataset::images(const std::vector<std::size_t>& idx) const {
  if (idx.empty()) throw ConfigError("dataset: empty selection");
  const Int3 d = samples.at(idx[0]).dims;
  const std::size_t V = d[0] * d[1] * d[2];
  std::vector<Real> out;
  out.reserve(idx.size() * V);
  for (auto i : idx) {
    const auto& s = samples.at(i);
    if (s.dims != d) throw ShapeError("dataset: samples differ in extent");
    out.insert(out.end(), s.image.begin(), s.image.end());
  }
  return Tensor({idx.size(), 1, d[0], d[1], d[2]}, std::move(out));
}

LabelGrid Dataset::labels(const std::vector<std::size_t>& idx) const {
  if (idx.empty()) throw ConfigError("dataset: empty selection");
  const Int3 d = samples.at(idx[0]).dims;
  LabelGrid out({idx.size(), d[0], d[1], d[2]});
  std::size_t o = 0;
  for (auto i : idx) {
    const auto& s = samples.at(i);
    if (s.dims != d) throw ShapeError("dataset: samples differ in extent");
    std::copy(s.labels.begin(), s.labels.end(), out.v.begin() + static_cast<std::ptrdiff_t>(o));
    o += s.labels.size();
  }
  return out;
}

}  // namespace mmunet
