#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmunet/tensor.hpp"

namespace mmunet {

/// Ordered, named collection of trainable leaves. Names are unique and the
/// order is the registration order, which fixes checkpoint layout.
class ParamSet {
 public:
  Tensor add(const std::string& name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  Tensor find(const std::string& name) const;  // undefined when absent
  std::size_t element_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

/// Deterministic initializer: every parameter draws from its own generator
/// seeded by (seed, name), so adding a parameter never shifts the others.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : seed_(seed) {}

  std::vector<Real> normal(const std::string& name, std::size_t count, Real stddev) const;
  std::vector<Real> uniform(const std::string& name, std::size_t count, Real lo, Real hi) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

std::uint64_t fnv1a(std::string_view text);

// Layers hold parameter handles only; the ParamSet owns the registry.

struct ChannelLinear {
  Tensor w;  // [out, in]
  Tensor b;  // [out] or undefined

  ChannelLinear() = default;
  ChannelLinear(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t in, std::size_t out,
                bool bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct Conv3d {
  Tensor w;  // [out, in, k, k, k]
  Tensor b;  // [out] or undefined
  Int3 stride{1, 1, 1};
  Int3 pad{0, 0, 0};

  Conv3d() = default;
  Conv3d(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride, std::size_t pad, bool bias);
  Tensor operator()(const Tensor& x) const;
};

struct ConvTranspose3d {
  Tensor w;  // [in, out, k, k, k]
  Tensor b;
  Int3 stride{2, 2, 2};

  ConvTranspose3d() = default;
  ConvTranspose3d(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t in, std::size_t out,
                  std::size_t kernel, std::size_t stride, bool bias);
  Tensor operator()(const Tensor& x) const;
};

struct InstanceNorm {
  Tensor gamma;
  Tensor beta;
  Real eps = Real(1e-5);

  InstanceNorm() = default;
  InstanceNorm(ParamSet& ps, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x) const;
};

/// conv -> instance norm -> leaky ReLU. The conv has no bias since the norm
/// would cancel it.
struct ConvUnit {
  Conv3d conv;
  InstanceNorm norm;

  ConvUnit() = default;
  ConvUnit(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t in, std::size_t out,
           std::size_t kernel = 3, std::size_t stride = 1);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace mmunet
