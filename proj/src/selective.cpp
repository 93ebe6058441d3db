#include "mmunet/selective.hpp"

#include <cmath>

#include "mmunet/error.hpp"
#include "mmunet/ops.hpp"

namespace mmunet {

SelectiveSsm::SelectiveSsm(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t channels,
                           std::size_t state)
    : delta_proj(ps, init, name + ".delta_proj", channels, channels),
      b_proj(ps, init, name + ".b_proj", channels, state),
      c_proj(ps, init, name + ".c_proj", channels, state),
      channels_(channels),
      state_(state) {
  if (channels == 0 || state == 0) throw ConfigError("selective ssm: channels and state must be positive");
  // Small input dependence at start; the bias places softplus at a
  // log-uniform step in [1e-3, 1e-1].
  auto w = delta_proj.w.mutable_data();
  for (auto& v : w) v *= Real(0.1);
  const auto u = init.uniform(name + ".delta0", channels, std::log(Real(1e-3)), std::log(Real(1e-1)));
  auto bias = delta_proj.b.mutable_data();
  for (std::size_t i = 0; i < channels; ++i) bias[i] = std::log(std::expm1(std::exp(u[i])));

  std::vector<Real> al(channels * state);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t n = 0; n < state; ++n) al[ch * state + n] = std::log(Real(n + 1));
  a_log = ps.add(name + ".a_log", Tensor({channels, state}, std::move(al)));
}

SelectiveSsm::Projected SelectiveSsm::project(const Tensor& u) const {
  if (u.rank() != 3 || u.dim(1) != channels_)
    throw ShapeError("selective ssm: expected [B, " + std::to_string(channels_) + ", L], got " +
                     shape_str(u.shape()));
  return {ops::softplus(delta_proj(u)), b_proj(u), c_proj(u), ops::neg(ops::exp(a_log))};
}

Tensor SelectiveSsm::scan(const Tensor& u, std::size_t segment) const {
  const auto p = project(u);
  return ops::selective_scan(u, p.delta, p.b, p.c, p.a, segment);
}

Tensor gated_scan(const SelectiveSsm& ssm, const Tensor& gate, const Tensor& u, std::size_t segment) {
  return ops::mul(ssm.scan(u, segment), gate);
}

ssm::Matrix selective_attention(const Tensor& delta, const Tensor& b, const Tensor& c, const Tensor& a,
                                std::size_t batch, std::size_t channel, std::size_t segment) {
  const std::size_t C = delta.dim(1), L = delta.dim(2), N = a.dim(1);
  if (batch >= delta.dim(0) || channel >= C) throw ShapeError("selective_attention: lane out of range");
  if (segment == 0) segment = L;
  const auto dv = delta.data().subspan((batch * C + channel) * L, L);
  const auto bv = b.data().subspan(batch * N * L, N * L);
  const auto cv = c.data().subspan(batch * N * L, N * L);
  const auto av = a.data().subspan(channel * N, N);

  std::vector<Real> cum(L);
  Real run = 0;
  for (std::size_t t = 0; t < L; ++t) cum[t] = (run += dv[t]);

  const auto l = static_cast<Eigen::Index>(L);
  ssm::Matrix m = ssm::Matrix::Zero(l, l);
  for (std::size_t t = 0; t < L; ++t) {
    const std::size_t start = t - t % segment;
    for (std::size_t s = start; s <= t; ++s) {
      const Real span = cum[t] - cum[s];
      Real v = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const Real an = av[n];
        const Real coef = an == Real(0) ? dv[s] : std::expm1(dv[s] * an) / an;
        v += cv[n * L + t] * std::exp(an * span) * coef * bv[n * L + s];
      }
      m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(s)) = v;
    }
  }
  return m;
}

MetaSsm::MetaSsm(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t channels,
                 const MetaSsmConfig& cfg)
    : cfg_(cfg),
      norm_(ps, name + ".norm", channels),
      gate_(ps, init, name + ".gate", channels, channels),
      out_(ps, init, name + ".out", channels, channels) {
  if (cfg.orders.orders.empty()) throw ConfigError("metassm: empty order set");
  const auto& orders = cfg.orders.orders;
  for (std::size_t i = 0; i < orders.size(); ++i) {
    std::size_t g = ssm_.size();
    if (cfg.share_pairs)
      for (std::size_t j = 0; j < i; ++j)
        if (orders[j] == flip(orders[i])) g = group_[j];
    if (g == ssm_.size()) ssm_.emplace_back(ps, init, name + ".dir" + std::to_string(g), channels, cfg.state);
    group_.push_back(g);
  }
}

Tensor MetaSsm::operator()(const Tensor& x) const {
  if (x.rank() != 5) throw ShapeError("metassm: expected [B, C, D, H, W], got " + shape_str(x.shape()));
  const Int3 dims{x.dim(2), x.dim(3), x.dim(4)};
  const std::size_t L = dims[0] * dims[1] * dims[2];
  const Tensor xn = norm_(x);
  const Tensor z = ops::silu(gate_(xn));
  Tensor acc;
  const auto& orders = cfg_.orders.orders;
  for (std::size_t i = 0; i < orders.size(); ++i) {
    const auto realized = realize(orders[i], dims);
    const std::size_t segment = realized->segment == L ? 0 : realized->segment;
    const Tensor y = unflatten(ssm_[group_[i]].scan(flatten(xn, orders[i]), segment), orders[i], dims);
    acc = acc.defined() ? ops::add(acc, y) : y;
  }
  if (orders.size() > 1) acc = ops::scale(acc, Real(1) / Real(orders.size()));
  return out_(ops::mul(acc, z));
}

}  // namespace mmunet
