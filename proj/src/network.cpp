#include "mmunet/network.hpp"

#include <algorithm>

#include "mmunet/error.hpp"
#include "mmunet/ops.hpp"

namespace mmunet {

namespace {
constexpr std::pair<const char*, BlockVariant> kVariants[] = {
    {"pure_conv", BlockVariant::PureConv},
    {"pure_ssm", BlockVariant::PureSsm},
    {"hybrid_outside", BlockVariant::HybridOutside},
    {"hybrid_inside", BlockVariant::HybridInside},
    {"ssm_only_inside", BlockVariant::SsmOnlyInside},
};
}  // namespace

BlockVariant parse_variant(std::string_view text) {
  if (text.size() == 2 && (text[0] == 'M' || text[0] == 'm') && text[1] >= '1' && text[1] <= '5')
    return kVariants[text[1] - '1'].second;
  for (const auto& [n, v] : kVariants)
    if (text == n) return v;
  throw ConfigError("unknown block variant '" + std::string(text) + "'");
}

std::string variant_name(BlockVariant v) {
  for (const auto& [n, x] : kVariants)
    if (x == v) return n;
  return "?";
}

bool variant_has_ssm(BlockVariant v) { return v != BlockVariant::PureConv; }
bool variant_has_conv(BlockVariant v) {
  return v == BlockVariant::PureConv || v == BlockVariant::HybridOutside || v == BlockVariant::HybridInside;
}

void ModelConfig::validate() const {
  if (stages < 2) throw ConfigError("model: stages must be at least 2");
  if (base_channels < 1 || in_channels < 1) throw ConfigError("model: channel counts must be positive");
  if (classes < 2) throw ConfigError("model: need at least 2 classes");
  for (const auto* b : {&enc, &bottleneck, &dec}) {
    if (b->ssm.orders.orders.empty()) throw ConfigError("model: empty scan order set");
    if (b->ssm.state < 1) throw ConfigError("model: state_dim must be positive");
  }
}

void ModelConfig::read(KvReader& kv) {
  kv.read("stages", stages);
  kv.read("base_channels", base_channels);
  kv.read("in_channels", in_channels);
  kv.read("classes", classes);
  std::string v;
  if (kv.has("enc_block")) kv.read("enc_block", v), enc.variant = parse_variant(v);
  if (kv.has("bottleneck_block")) kv.read("bottleneck_block", v), bottleneck.variant = parse_variant(v);
  if (kv.has("dec_block")) kv.read("dec_block", v), dec.variant = parse_variant(v);
  if (kv.has("scan_orders")) {
    kv.read("scan_orders", v);
    const auto set = parse_order_set(v);
    enc.ssm.orders = bottleneck.ssm.orders = dec.ssm.orders = set;
  }
  std::size_t state = enc.ssm.state;
  kv.read("state_dim", state);
  enc.ssm.state = bottleneck.ssm.state = dec.ssm.state = state;
  bool share = enc.ssm.share_pairs;
  kv.read("share_pairs", share);
  enc.ssm.share_pairs = bottleneck.ssm.share_pairs = dec.ssm.share_pairs = share;
  kv.read("deep_supervision", deep_supervision);
  validate();
}

KvMap ModelConfig::to_kv() const {
  const auto& orders = enc.ssm.orders;
  return {
      {"stages", std::to_string(stages)},
      {"base_channels", std::to_string(base_channels)},
      {"in_channels", std::to_string(in_channels)},
      {"classes", std::to_string(classes)},
      {"enc_block", variant_name(enc.variant)},
      {"bottleneck_block", variant_name(bottleneck.variant)},
      {"dec_block", variant_name(dec.variant)},
      {"scan_orders", orders.name.size() == 2 && orders.name[0] == 'B' ? orders.name : orders.spec()},
      {"state_dim", std::to_string(enc.ssm.state)},
      {"share_pairs", enc.ssm.share_pairs ? "true" : "false"},
      {"deep_supervision", deep_supervision ? "true" : "false"},
  };
}

MetaBlock::MetaBlock(ParamSet& ps, const Initializer& init, const std::string& name, std::size_t channels,
                     const BlockConfig& cfg)
    : name_(name), cfg_(cfg) {
  if (variant_has_conv(cfg.variant)) {
    conv1_.emplace(ps, init, name + ".conv1", channels, channels);
    conv2_.emplace(ps, init, name + ".conv2", channels, channels);
  }
  if (variant_has_ssm(cfg.variant)) ssm1_.emplace(ps, init, name + ".ssm1", channels, cfg.ssm);
  if (cfg.variant == BlockVariant::PureSsm) ssm2_.emplace(ps, init, name + ".ssm2", channels, cfg.ssm);
}

Tensor MetaBlock::run_ssm(const std::optional<MetaSsm>& unit, const Tensor& x, const ForwardOptions& opt) const {
  if (opt.taps && opt.taps->keep_ssm_input && &unit == &ssm1_) opt.taps->maps[name_ + ".ssm_input"] = x.detach();
  return opt.ssm_identity ? x : (*unit)(x);
}

Tensor MetaBlock::operator()(const Tensor& x, const ForwardOptions& opt) const {
  auto tap = [&](const char* point, const Tensor& t) {
    if (opt.taps) opt.taps->maps[name_ + "." + point] = t.detach();
  };
  Tensor branch, out;
  switch (cfg_.variant) {
    case BlockVariant::PureConv:
    case BlockVariant::HybridOutside:
    case BlockVariant::HybridInside: {
      const Tensor a1 = (*conv1_)(x);
      tap("after_conv1", a1);
      const Tensor a2 = (*conv2_)(a1);
      tap("after_conv2", a2);
      tap("inside_residual", a2);
      if (cfg_.variant == BlockVariant::HybridInside) {
        out = ops::add(x, run_ssm(ssm1_, a2, opt));
        tap("outside_residual", out);
      } else {
        out = ops::add(x, a2);
        tap("outside_residual", out);
        if (cfg_.variant == BlockVariant::HybridOutside) out = run_ssm(ssm1_, out, opt);
      }
      break;
    }
    case BlockVariant::PureSsm:
      branch = run_ssm(ssm2_, run_ssm(ssm1_, x, opt), opt);
      tap("inside_residual", branch);
      out = ops::add(x, branch);
      tap("outside_residual", out);
      break;
    case BlockVariant::SsmOnlyInside:
      tap("inside_residual", x);
      out = ops::add(x, run_ssm(ssm1_, x, opt));
      tap("outside_residual", out);
      break;
  }
  return out;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  const Initializer init(seed);
  const std::size_t S = cfg_.stages;
  stem_ = ConvUnit(params_, init, "stem", cfg_.in_channels, cfg_.channels_at(0));
  for (std::size_t l = 1; l < S; ++l) {
    const std::string n = "enc" + std::to_string(l);
    down_.emplace_back(params_, init, n + ".down", cfg_.channels_at(l - 1), cfg_.channels_at(l), 2, 2);
    enc_.emplace_back(params_, init, n, cfg_.channels_at(l), cfg_.enc);
  }
  down_.emplace_back(params_, init, "bottleneck.down", cfg_.channels_at(S - 1), cfg_.channels_at(S), 2, 2);
  bottleneck_ = MetaBlock(params_, init, "bottleneck", cfg_.channels_at(S), cfg_.bottleneck);
  up_.resize(S);
  entry_.resize(S);
  dec_.resize(S);
  for (std::size_t l = S; l-- > 0;) {
    const std::string n = "dec" + std::to_string(l);
    const std::size_t c = cfg_.channels_at(l);
    up_[l] = ConvTranspose3d(params_, init, n + ".up", cfg_.channels_at(l + 1), c, 2, 2, false);
    entry_[l] = ConvUnit(params_, init, n + ".entry", 2 * c, c, 1, 1);
    dec_[l] = MetaBlock(params_, init, n, c, cfg_.dec);
  }
  final_ = ChannelLinear(params_, init, "final", cfg_.channels_at(0), cfg_.classes);
  if (cfg_.deep_supervision)
    for (std::size_t l : {1, 2})
      heads_.emplace_back(params_, init, "head" + std::to_string(l), cfg_.channels_at(l), cfg_.classes);
}

void Model::check_input(const Tensor& x) const {
  if (x.rank() != 5 || x.dim(1) != cfg_.in_channels)
    throw ShapeError("model: expected [B, " + std::to_string(cfg_.in_channels) + ", D, H, W], got " +
                     shape_str(x.shape()));
  const std::size_t m = std::size_t(1) << cfg_.stages;
  for (std::size_t i = 2; i < 5; ++i)
    if (x.dim(i) % m != 0)
      throw ConfigError("model: spatial extents " + shape_str(x.shape()) + " must be divisible by " +
                        std::to_string(m));
}

ModelOutput Model::forward(const Tensor& x, const ForwardOptions& opt) const {
  check_input(x);
  const std::size_t S = cfg_.stages;
  std::vector<Tensor> skips{stem_(x)};
  Tensor h = skips[0];
  for (std::size_t l = 1; l < S; ++l) {
    h = enc_[l - 1](down_[l - 1](h), opt);
    skips.push_back(h);
  }
  h = bottleneck_(down_[S - 1](h), opt);
  std::vector<Tensor> level_out(S + 1);
  level_out[S] = h;
  for (std::size_t l = S; l-- > 0;) {
    h = entry_[l](ops::concat_channels(up_[l](h), skips[l]));
    h = dec_[l](h, opt);
    level_out[l] = h;
  }
  ModelOutput out;
  out.logits = final_(h);
  for (std::size_t i = 0; i < heads_.size(); ++i) out.aux.push_back(heads_[i](level_out[i + 1]));
  return out;
}

std::map<std::string, Tensor> Model::feature_taps(const Tensor& x, const std::vector<std::string>& points) const {
  for (const auto& p : points)
    if (std::find_if(std::begin(kTapNames), std::end(kTapNames), [&](const char* t) { return p == t; }) ==
        std::end(kTapNames))
      throw ConfigError("unknown tap '" + p + "'");
  TapRecorder rec;
  {
    NoGradGuard guard;
    ForwardOptions opt;
    opt.taps = &rec;
    forward(x, opt);
  }
  std::map<std::string, Tensor> out;
  for (const auto& p : points) {
    bool found = false;
    for (const auto& [key, t] : rec.maps) {
      if (key.size() > p.size() && key.compare(key.size() - p.size(), p.size(), p) == 0 &&
          key[key.size() - p.size() - 1] == '.') {
        out[key] = t;
        found = true;
      }
    }
    if (!found) throw ConfigError("tap '" + p + "' is not provided by any block of this model");
  }
  return out;
}

std::vector<std::string> Model::block_names() const {
  std::vector<std::string> names;
  for (const auto& b : enc_) names.push_back(b.name());
  names.push_back(bottleneck_.name());
  for (std::size_t l = cfg_.stages; l-- > 0;) names.push_back(dec_[l].name());
  return names;
}

const MetaBlock& Model::block(const std::string& name) const {
  for (const auto& b : enc_)
    if (b.name() == name) return b;
  if (bottleneck_.name() == name) return bottleneck_;
  for (const auto& b : dec_)
    if (b.name() == name) return b;
  throw ConfigError("unknown block '" + name + "'");
}

}  // namespace mmunet
