#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "mmunet/error.hpp"
#include "mmunet/ops.hpp"
#include "mmunet/scan_order.hpp"
#include "mmunet/selective.hpp"

using namespace mmunet;
using test::random_tensor;

namespace {

Tensor coded_volume() {
  std::vector<Real> v(8);
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) v[4 * d + 2 * h + w] = Real(4 * d + 2 * h + w);
  return Tensor({2, 2, 2}, v);
}

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

bool realizable(const ScanOrder& o, Int3 dims) {
  return o.kind != ScanOrder::Kind::Window3D ||
         (dims[0] % o.window == 0 && dims[1] % o.window == 0 && dims[2] % o.window == 0);
}

}  // namespace

TEST_SUITE("scan-orders") {
  TEST_CASE("flatten by hand on a 2x2x2 volume") {
    const Tensor v = coded_volume();
    CHECK(values(flatten(v, ScanOrder::parse("DHW"))) == std::vector<Real>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(values(flatten(v, ScanOrder::parse("flip(DHW)"))) == std::vector<Real>{7, 6, 5, 4, 3, 2, 1, 0});
    CHECK(values(flatten(v, ScanOrder::parse("HWD"))) == std::vector<Real>{0, 4, 1, 5, 2, 6, 3, 7});
  }

  TEST_CASE("unflatten inverts DHW by hand") {
    const Tensor s({8}, {0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(values(unflatten(s, ScanOrder::parse("DHW"), {2, 2, 2})) == values(coded_volume()));
    CHECK_THROWS_AS(unflatten(s, ScanOrder::parse("DHW"), {2, 2, 3}), ShapeError);
  }

  TEST_CASE("sixteen orders with distinct names that parse back") {
    const auto orders = all_orders();
    REQUIRE(orders.size() == 16);
    for (std::size_t i = 0; i < orders.size(); ++i) {
      CHECK(ScanOrder::parse(orders[i].name()) == orders[i]);
      for (std::size_t j = 0; j < i; ++j) CHECK_FALSE(orders[i] == orders[j]);
    }
    CHECK_THROWS_AS(ScanOrder::parse("DHX"), ConfigError);
  }

  TEST_CASE("every order is a bijection on every grid up to 4x4x4") {
    for (const auto& o : all_orders())
      for (std::size_t d = 1; d <= 4; ++d)
        for (std::size_t h = 1; h <= 4; ++h)
          for (std::size_t w = 1; w <= 4; ++w) {
            const Int3 dims{d, h, w};
            if (!realizable(o, dims)) {
              CHECK_THROWS_AS(realize(o, dims), ConfigError);
              continue;
            }
            const auto r = realize(o, dims);
            const std::size_t L = d * h * w;
            REQUIRE(r->position.size() == L);
            std::vector<bool> seen(L, false);
            for (std::size_t i = 0; i < L; ++i) {
              REQUIRE(r->position[i] < L);
              CHECK_FALSE(seen[r->position[i]]);
              seen[r->position[i]] = true;
              CHECK(r->voxel[r->position[i]] == i);
            }
            const auto rf = realize(flip(o), dims);
            for (std::size_t i = 0; i < L; ++i) CHECK(rf->position[i] == L - 1 - r->position[i]);
          }
  }

  TEST_CASE("round trip on random 3x4x5 volumes and zigzag on 4x4x4") {
    const Tensor v = random_tensor({2, 3, 3, 4, 5}, 1);
    for (const auto& o : all_orders()) {
      if (!realizable(o, {3, 4, 5})) continue;
      CHECK(values(unflatten(flatten(v, o), o, {3, 4, 5})) == values(v));
    }
    const Tensor z = random_tensor({1, 4, 4, 4}, 2);
    const auto zz = ScanOrder::parse("zigzag");
    CHECK(values(unflatten(flatten(z, zz), zz, {4, 4, 4})) == values(z));
  }

  TEST_CASE("flip reverses the flattened sequence") {
    const Tensor v = random_tensor({1, 2, 3, 4}, 3);
    for (const auto& o : all_orders()) {
      if (o.flipped || !realizable(o, {2, 3, 4})) continue;
      auto a = values(flatten(v, o));
      std::reverse(a.begin(), a.end());
      CHECK(values(flatten(v, flip(o))) == a);
    }
  }

  TEST_CASE("zigzag visits face neighbours only; windows add discontinuities") {
    for (std::size_t d = 1; d <= 4; ++d)
      for (std::size_t h = 1; h <= 4; ++h)
        for (std::size_t w = 1; w <= 4; ++w) CHECK(discontinuity_count(ScanOrder::parse("zigzag"), {d, h, w}) == 0);
    CHECK(discontinuity_count(ScanOrder::parse("window:2"), {8, 8, 8}) >
          discontinuity_count(ScanOrder::parse("DHW"), {8, 8, 8}));
  }

  TEST_CASE("2D scan restarts per slice") {
    CHECK(realize(ScanOrder::parse("2d"), {3, 4, 5})->segment == 20);
    CHECK(realize(ScanOrder::parse("DHW"), {3, 4, 5})->segment == 60);
  }

  TEST_CASE("presets follow the table rows") {
    const auto b1 = preset("B1");
    REQUIRE(b1.orders.size() == 1);
    CHECK(b1.orders[0] == ScanOrder::parse("DHW"));
    CHECK_FALSE(b1.orders[0].flipped);
    const auto b2 = preset("B2");
    REQUIRE(b2.orders.size() == 2);
    CHECK(b2.orders[1] == flip(b2.orders[0]));
    CHECK(preset("B3").orders.size() == 3);
    CHECK(preset("B4").orders.size() == 6);
    CHECK(preset("B5").orders.size() == 12);
    for (const char* name : {"B6", "B7", "B8", "B9"}) {
      const auto s = preset(name);
      REQUIRE(s.orders.size() == 2);
      CHECK(s.orders[1] == flip(s.orders[0]));
    }
    CHECK(preset_names().size() == 9);
    CHECK_THROWS_AS(preset("B10"), ConfigError);
    for (const auto& n : preset_names()) CHECK(parse_order_set(preset(n).spec()).orders == preset(n).orders);
  }
}

TEST_SUITE("metassm") {
  TEST_CASE("single DHW direction on a line equals the composed scan") {
    ParamSet ps;
    const MetaSsm m(ps, Initializer(4), "m", 2, MetaSsmConfig{parse_order_set("DHW"), 4, true});
    const Tensor x = random_tensor({1, 2, 1, 1, 7}, 5);
    const Tensor got = m(x);
    // The same pipeline applied by hand to the raw [1, C, L] sequence.
    const Tensor seq = ops::reshape(m.norm()(x), {1, 2, 7});
    const Tensor gate_w = ps.find("m.gate.w"), gate_b = ps.find("m.gate.b");
    const Tensor out_w = ps.find("m.out.w"), out_b = ps.find("m.out.b");
    const Tensor z = ops::silu(ops::channel_linear(seq, gate_w, gate_b));
    const Tensor y = ops::channel_linear(ops::mul(m.ssms()[0].scan(seq), z), out_w, out_b);
    CHECK(test::max_abs_diff(got.data(), y.data()) < 1e-13);
  }

  TEST_CASE("BiScan commutes with reversing the whole sequence") {
    ParamSet ps;
    const MetaSsm m(ps, Initializer(6), "m", 3, MetaSsmConfig{preset("B2"), 4, true});
    REQUIRE(m.ssms().size() == 1);
    const Tensor x = random_tensor({1, 3, 2, 3, 4}, 7);
    const Tensor a = ops::flip_spatial(m(x), true, true, true);
    const Tensor b = m(ops::flip_spatial(x, true, true, true));
    CHECK(test::max_abs_diff(a.data(), b.data()) < 1e-12);
  }

  TEST_CASE("output shape equals input shape for every order") {
    for (const auto& o : all_orders()) {
      const Int3 dims = realizable(o, {2, 3, 4}) ? Int3{2, 3, 4} : Int3{2, 4, 4};
      ParamSet ps;
      const MetaSsm m(ps, Initializer(8), "m", 2, MetaSsmConfig{OrderSet{o.name(), {o}}, 3, true});
      const Tensor x = random_tensor({1, 2, dims[0], dims[1], dims[2]}, 9);
      CHECK(m(x).shape() == x.shape());
    }
  }
}
