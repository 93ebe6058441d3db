#include "mmunet/layers.hpp"

#include <cmath>
#include <random>

#include "mmunet/error.hpp"
#include "mmunet/ops.hpp"

namespace mmunet {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

Tensor ParamSet::add(const std::string& name, Tensor t) {
  for (const auto& [n, _] : items_)
    if (n == name) throw ConfigError("duplicate parameter name '" + name + "'");
  t.set_requires_grad(true);
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamSet::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  return {};
}

std::size_t ParamSet::element_count() const {
  std::size_t total = 0;
  for (const auto& [_, t] : items_) total += t.numel();
  return total;
}

void ParamSet::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

namespace {
std::mt19937_64 make_engine(std::uint64_t seed, const std::string& name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(name)), static_cast<std::uint32_t>(fnv1a(name) >> 32)};
  return std::mt19937_64(seq);
}
}  // namespace

std::vector<Real> Initializer::normal(const std::string& name, std::size_t count, Real stddev) const {
  auto eng = make_engine(seed_, name);
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  std::vector<Real> out(count);
  for (auto& v : out) v = static_cast<Real>(dist(eng));
  return out;
}

std::vector<Real> Initializer::uniform(const std::string& name, std::size_t count, Real lo, Real hi) const {
  auto eng = make_engine(seed_, name);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<Real> out(count);
  for (auto& v : out) v = static_cast<Real>(dist(eng));
  return out;
}

ChannelLinear::ChannelLinear(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t in,
                             std::size_t out, bool bias) {
  const Real std = std::sqrt(Real(2) / Real(in));
  w = ps.add(name + ".w", Tensor({out, in}, init.normal(name + ".w", out * in, std)));
  if (bias) b = ps.add(name + ".b", Tensor({out}, Real(0)));
}

Tensor ChannelLinear::operator()(const Tensor& x) const { return ops::channel_linear(x, w, b); }

Conv3d::Conv3d(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel, std::size_t stride_, std::size_t pad_, bool bias)
    : stride{stride_, stride_, stride_}, pad{pad_, pad_, pad_} {
  const std::size_t fan_in = in * kernel * kernel * kernel;
  const Real std = std::sqrt(Real(2) / Real(fan_in));
  w = ps.add(name + ".w", Tensor({out, in, kernel, kernel, kernel}, init.normal(name + ".w", out * fan_in, std)));
  if (bias) b = ps.add(name + ".b", Tensor({out}, Real(0)));
}

Tensor Conv3d::operator()(const Tensor& x) const { return ops::conv3d(x, w, b, stride, pad); }

ConvTranspose3d::ConvTranspose3d(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t in,
                                 std::size_t out, std::size_t kernel, std::size_t stride_, bool bias)
    : stride{stride_, stride_, stride_} {
  const std::size_t kv = kernel * kernel * kernel;
  // Each output voxel sees in * kv / stride^3 contributions.
  const Real fan_in = Real(in * kv) / Real(stride_ * stride_ * stride_);
  const Real std = std::sqrt(Real(2) / fan_in);
  w = ps.add(name + ".w", Tensor({in, out, kernel, kernel, kernel}, init.normal(name + ".w", in * out * kv, std)));
  if (bias) b = ps.add(name + ".b", Tensor({out}, Real(0)));
}

Tensor ConvTranspose3d::operator()(const Tensor& x) const { return ops::conv_transpose3d(x, w, b, stride); }

InstanceNorm::InstanceNorm(ParamSet& ps, const std::string& name, std::size_t channels) {
  gamma = ps.add(name + ".gamma", Tensor({channels}, Real(1)));
  beta = ps.add(name + ".beta", Tensor({channels}, Real(0)));
}

Tensor InstanceNorm::operator()(const Tensor& x) const { return ops::instance_norm(x, gamma, beta, eps); }

ConvUnit::ConvUnit(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t in, std::size_t out,
                   std::size_t kernel, std::size_t stride)
    : conv(ps, init, name + ".conv", in, out, kernel, stride, stride == 1 ? kernel / 2 : 0, false),
      norm(ps, name + ".norm", out) {}

Tensor ConvUnit::operator()(const Tensor& x) const { return ops::leaky_relu(norm(conv(x))); }

}  // namespace mmunet
