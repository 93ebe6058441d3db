#include "mmunet/experiments/attention.hpp"

#include <algorithm>
#include <cmath>

#include "mmunet/error.hpp"

namespace mmunet::experiments {

AttentionMaps block_attention(const Model& model, const Tensor& image, const AttentionConfig& cfg) {
  if (image.rank() != 5 || image.dim(0) != 1)
    throw ShapeError("attention: expected a [1, C, D, H, W] image, got " + shape_str(image.shape()));
  const MetaBlock& blk = model.block(cfg.block);
  const MetaSsm* unit = blk.first_ssm();
  if (!unit) throw ConfigError("attention: block " + cfg.block + " (" + variant_name(blk.variant()) + ") has no SSM");
  const auto& orders = unit->orders().orders;
  if (cfg.order >= orders.size())
    throw ConfigError("attention: order index " + std::to_string(cfg.order) + " out of range; block has " +
                      std::to_string(orders.size()) + " orders");

  TapRecorder rec;
  rec.keep_ssm_input = true;
  NoGradGuard guard;
  ForwardOptions opt;
  opt.taps = &rec;
  model.forward(image, opt);
  const Tensor& x = rec.maps.at(cfg.block + ".ssm_input");
  const Int3 dims{x.dim(2), x.dim(3), x.dim(4)};
  const std::size_t L = dims[0] * dims[1] * dims[2];
  if (L > cfg.max_length)
    throw ConfigError("attention: sequence length " + std::to_string(L) + " exceeds max_length " +
                      std::to_string(cfg.max_length));

  const ScanOrder& order = orders[cfg.order];
  const auto realized = realize(order, dims);
  const std::size_t segment = realized->segment == L ? 0 : realized->segment;
  const SelectiveSsm& ssm = unit->ssms()[unit->groups()[cfg.order]];
  const Tensor u = flatten(unit->norm()(x), order);
  const auto p = ssm.project(u);
  const Tensor y = ssm.scan(u, segment);

  AttentionMaps out;
  out.block = cfg.block;
  out.order = order.name();
  out.length = L;
  const std::size_t C = u.dim(1);
  const auto uv = u.data(), yv = y.data();
  for (std::size_t ch = 0; ch < C; ++ch) {
    ssm::Matrix m = selective_attention(p.delta, p.b, p.c, p.a, 0, ch, segment);
    const Eigen::Map<const ssm::Vector> uc(uv.data() + ch * L, static_cast<Eigen::Index>(L));
    const Eigen::Map<const ssm::Vector> yc(yv.data() + ch * L, static_cast<Eigen::Index>(L));
    out.identity_error.push_back((m * uc - yc).cwiseAbs().maxCoeff());
    for (Eigen::Index t = 0; t < m.rows(); ++t)
      for (Eigen::Index s = t + 1; s < m.cols(); ++s) out.upper_max = std::max(out.upper_max, std::abs(m(t, s)));
    out.raw.push_back(std::move(m));
  }
  return out;
}

ssm::Matrix row_max_normalized(const ssm::Matrix& m) {
  ssm::Matrix r = m;
  for (Eigen::Index t = 0; t < r.rows(); ++t) {
    const Real mx = r.row(t).cwiseAbs().maxCoeff();
    if (mx > 0) r.row(t) /= mx;
  }
  return r;
}

std::string matrix_csv(const ssm::Matrix& m) {
  std::string out;
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    for (Eigen::Index s = 0; s < m.cols(); ++s) {
      if (s) out += ',';
      out += format_real(m(t, s), 10);
    }
    out += '\n';
  }
  return out;
}

std::string attention_summary_csv(const AttentionMaps& a) {
  std::string out = "channel,identity_error\n";
  for (std::size_t c = 0; c < a.identity_error.size(); ++c)
    out += std::to_string(c) + "," + format_real(a.identity_error[c], 6) + "\n";
  return out;
}

}  // namespace mmunet::experiments
