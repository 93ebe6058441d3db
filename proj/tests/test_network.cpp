#include <doctest.h>

#include "helpers.hpp"
#include "mmunet/error.hpp"
#include "mmunet/losses.hpp"
#include "mmunet/network.hpp"
#include "mmunet/ops.hpp"

using namespace mmunet;
using test::random_tensor;

namespace {

constexpr BlockVariant kAll[] = {BlockVariant::PureConv, BlockVariant::PureSsm, BlockVariant::HybridOutside,
                                 BlockVariant::HybridInside, BlockVariant::SsmOnlyInside};

ModelConfig small_config(BlockVariant enc, BlockVariant bottleneck, BlockVariant dec) {
  ModelConfig c;
  c.stages = 2;
  c.base_channels = 4;
  c.enc.variant = enc;
  c.bottleneck.variant = bottleneck;
  c.dec.variant = dec;
  c.enc.ssm.state = c.bottleneck.ssm.state = c.dec.ssm.state = 4;
  return c;
}

ModelConfig uniform_config(BlockVariant v) { return small_config(v, v, v); }

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("variant names and labels") {
    for (auto v : kAll) CHECK(parse_variant(variant_name(v)) == v);
    CHECK(parse_variant("M4") == BlockVariant::HybridInside);
    CHECK_THROWS_AS(parse_variant("hybrid"), ConfigError);
  }

  TEST_CASE("default configuration places hybrid-inside blocks in encoder and bottleneck") {
    const ModelConfig c;
    CHECK(c.enc.variant == BlockVariant::HybridInside);
    CHECK(c.bottleneck.variant == BlockVariant::HybridInside);
    CHECK(c.dec.variant == BlockVariant::PureConv);
    CHECK(c.deep_supervision);
  }

  TEST_CASE("config round-trips through key=value") {
    ModelConfig c = small_config(BlockVariant::PureSsm, BlockVariant::HybridOutside, BlockVariant::SsmOnlyInside);
    c.enc.ssm.orders = c.bottleneck.ssm.orders = c.dec.ssm.orders = preset("B7");
    const KvMap kv = c.to_kv();
    KvReader r(kv);
    ModelConfig back;
    back.read(r);
    r.reject_unused();
    CHECK(back.to_kv() == kv);
    const KvMap bad{{"stagez", "3"}};
    KvReader rb(bad);
    ModelConfig ignored;
    ignored.read(rb);
    CHECK_THROWS_AS(rb.reject_unused(), ConfigError);
  }

  TEST_CASE("output shapes and auxiliary heads") {
    for (bool ds : {true, false}) {
      ModelConfig c = uniform_config(BlockVariant::HybridInside);
      c.stages = 3;
      c.deep_supervision = ds;
      const Model m(c, 1);
      const ModelOutput out = m.forward(random_tensor({2, 1, 8, 16, 8}, 2));
      CHECK(out.logits.shape() == Shape{2, 3, 8, 16, 8});
      REQUIRE(out.aux.size() == (ds ? 2u : 0u));
      if (ds) {
        CHECK(out.aux[0].shape() == Shape{2, 3, 4, 8, 4});
        CHECK(out.aux[1].shape() == Shape{2, 3, 2, 4, 2});
      }
    }
  }

  TEST_CASE("indivisible input extents are rejected") {
    const Model m(uniform_config(BlockVariant::PureConv), 1);
    CHECK_THROWS_AS(m.forward(random_tensor({1, 1, 8, 6, 8}, 3)), ConfigError);
    CHECK_THROWS_AS(m.forward(random_tensor({1, 2, 8, 8, 8}, 3)), ShapeError);
  }

  TEST_CASE("zero input through a zero final layer gives uniform probabilities") {
    Model m(uniform_config(BlockVariant::HybridInside), 4);
    for (const char* n : {"final.w", "final.b"})
      for (auto& v : m.params().find(n).mutable_data()) v = 0;
    const Tensor p = ops::softmax_channels(m.forward(Tensor({1, 1, 4, 4, 4}, Real(0))).logits);
    for (Real v : p.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));
  }

  TEST_CASE("parameter initialization is deterministic and name-keyed") {
    const Model a(uniform_config(BlockVariant::PureConv), 7);
    const Model b(uniform_config(BlockVariant::HybridInside), 7);
    const Model c(uniform_config(BlockVariant::PureConv), 8);
    CHECK(b.params().element_count() >= a.params().element_count());
    bool differs = false;
    for (const auto& [name, t] : a.params().items()) {
      const Tensor u = b.params().find(name);
      REQUIRE(u.defined());
      CHECK(test::max_abs_diff(t.data(), u.data()) == 0.0);
      differs |= test::max_abs_diff(t.data(), c.params().find(name).data()) > 0;
    }
    CHECK(differs);
  }

  TEST_CASE("hybrid blocks with an identity SSM reduce to pure convolution") {
    const Tensor x = random_tensor({1, 1, 8, 8, 8}, 9);
    const Model conv(uniform_config(BlockVariant::PureConv), 10);
    const auto ref = conv.forward(x).logits;
    for (auto v : {BlockVariant::HybridInside, BlockVariant::HybridOutside}) {
      const Model hybrid(uniform_config(v), 10);
      ForwardOptions opt;
      opt.ssm_identity = true;
      CHECK(test::max_abs_diff(hybrid.forward(x, opt).logits.data(), ref.data()) == 0.0);
      CHECK(test::max_abs_diff(hybrid.forward(x).logits.data(), ref.data()) > 1e-6);
    }
  }

  TEST_CASE("a block with zeroed body parameters reduces to its residual path") {
    for (auto v : kAll) {
      ParamSet ps;
      BlockConfig cfg{v};
      cfg.ssm.state = 4;
      const MetaBlock block(ps, Initializer(11), "blk", 4, cfg);
      for (const auto& [name, t] : ps.items()) {
        Tensor p = t;
        for (auto& e : p.mutable_data()) e = 0;
      }
      const Tensor x = random_tensor({1, 4, 4, 4, 4}, 12);
      CAPTURE(variant_name(v));
      const Tensor y = block(x);
      if (v == BlockVariant::HybridOutside)  // no residual around the SSM
        CHECK(test::max_abs_diff(y.data(), Tensor(x.shape(), Real(0)).data()) == 0.0);
      else
        CHECK(test::max_abs_diff(y.data(), x.data()) < 1e-15);
    }
  }

  TEST_CASE("every parameter receives gradient in every variant") {
    for (auto v : kAll) {
      Model m(uniform_config(v), 13);
      LabelGrid y({2, 8, 8, 8});
      const Tensor x = random_tensor({2, 1, 8, 8, 8}, 14);
      for (std::size_t i = 0; i < y.size(); ++i) y.v[i] = static_cast<std::uint8_t>((i * 7 + i / 13) % 3);
      deep_supervised_loss(m.forward(x), y, halving_weights(3)).backward();
      for (const auto& [name, t] : m.params().items()) {
        CAPTURE(name);
        REQUIRE(t.has_grad());
        bool nonzero = false;
        for (Real g : t.grad()) nonzero |= g != 0;
        CHECK(nonzero);
      }
    }
  }

  TEST_CASE("feature taps") {
    const Model m(uniform_config(BlockVariant::HybridInside), 15);
    const Tensor x = random_tensor({1, 1, 8, 8, 8}, 16);
    TapRecorder rec;
    rec.keep_ssm_input = true;
    ForwardOptions opt;
    opt.taps = &rec;
    m.forward(x, opt);
    const auto taps = m.feature_taps(x, {"inside_residual", "outside_residual", "after_conv1", "after_conv2"});
    for (const auto& b : m.block_names()) {
      const std::size_t level = starts_with(b, "enc") ? 1 : starts_with(b, "bottleneck") ? 2 : std::stoul(b.substr(3));
      const std::size_t e = 8 >> level;
      for (const char* t : kTapNames) CHECK(taps.at(b + "." + t).shape() == Shape{1, std::size_t(4) << level, e, e, e});
      CHECK(test::max_abs_diff(taps.at(b + ".inside_residual").data(), rec.maps.at(b + ".ssm_input").data()) == 0.0);
    }
    for (auto v : kAll) {
      ParamSet ps;
      const MetaBlock block(ps, Initializer(17), "blk", 2, BlockConfig{v});
      TapRecorder r;
      ForwardOptions o;
      o.taps = &r;
      const Tensor out = block(random_tensor({1, 2, 4, 4, 4}, 18), o);
      if (v != BlockVariant::HybridOutside)
        CHECK(test::max_abs_diff(r.maps.at("blk.outside_residual").data(), out.data()) == 0.0);
    }
    CHECK_THROWS_AS(m.feature_taps(x, {"middle"}), ConfigError);
    const Model conv(uniform_config(BlockVariant::SsmOnlyInside), 15);
    CHECK_THROWS_AS(conv.feature_taps(x, {"after_conv1"}), ConfigError);
  }

  TEST_CASE("block names in forward order") {
    const Model m(uniform_config(BlockVariant::PureConv), 1);
    CHECK(m.block_names() == std::vector<std::string>{"enc1", "bottleneck", "dec1", "dec0"});
    CHECK(m.block("dec0").name() == "dec0");
    CHECK(m.block("enc1").first_ssm() == nullptr);
    CHECK_THROWS_AS(m.block("dec7"), ConfigError);
  }
}
