#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mmunet/error.hpp"
#include "mmunet/inference.hpp"
#include "mmunet/ops.hpp"

using namespace mmunet;
using test::max_abs_diff;
using test::random_tensor;

namespace {

// Translation-equivariant but not flip-equivariant: an asymmetric 3x3x3 conv.
Predictor conv_predictor(std::size_t classes, std::uint64_t seed) {
  const Tensor w = random_tensor({classes, 1, 3, 3, 3}, seed);
  return [w](const Tensor& x) { return ops::conv3d(x, w, Tensor(), {1, 1, 1}, {1, 1, 1}); };
}

// Logits depend on the position inside the patch, so overlapping tiles disagree.
Predictor positional_predictor() {
  return [](const Tensor& x) {
    const std::size_t D = x.dim(2), H = x.dim(3), W = x.dim(4), V = D * H * W;
    std::vector<Real> z(2 * V);
    for (std::size_t i = 0; i < V; ++i) {
      z[i] = x.data()[i];
      z[V + i] = Real(0.3) * Real(i % W);
    }
    return Tensor({1, 2, D, H, W}, z);
  };
}

Real gauss1(std::size_t i, std::size_t n, Real scale) {
  const Real z = (Real(i) - (Real(n) - 1) / 2) / (Real(n) * scale);
  return std::exp(Real(-0.5) * z * z);
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("gaussian map shape, symmetry and values") {
    const Tensor g = gaussian_map({8, 8, 8}, 0.125);
    CHECK(g.shape() == Shape{8, 8, 8});
    const auto v = g.data();
    const Real peak = *std::max_element(v.begin(), v.end());
    const Real adj = std::exp(-0.5 * 0.25);
    // Voxels 3 and 4 sit half a voxel from the centre of an even extent.
    CHECK(v[(4 * 8 + 4) * 8 + 4] == doctest::Approx(adj * adj * adj).epsilon(1e-14));
    CHECK(v[(3 * 8 + 4) * 8 + 3] == doctest::Approx(peak).epsilon(1e-14));
    CHECK(v[(4 * 8 + 4) * 8 + 5] == doctest::Approx(adj * adj * std::exp(-0.5 * 1.5 * 1.5)).epsilon(1e-14));
    const Tensor odd = gaussian_map({5, 7, 3}, 0.125);
    const auto o = odd.data();
    CHECK(*std::max_element(o.begin(), o.end()) == o[(2 * 7 + 3) * 3 + 1]);
    CHECK(o[(2 * 7 + 3) * 3 + 1] == 1.0);
    const Tensor g4 = ops::reshape(g, {1, 1, 8, 8, 8});
    for (int m = 1; m < 8; ++m)
      CHECK(max_abs_diff(ops::flip_spatial(g4, m & 4, m & 2, m & 1).data(), g4.data()) == 0.0);
    const Tensor narrow = gaussian_map({16, 16, 16}, 0.05);
    for (Real x : narrow.data()) CHECK(x >= 1e-3);
    const Tensor s = gaussian_map({6, 1, 1}, 0.5, 1e-9);
    for (std::size_t i = 0; i < 6; ++i) CHECK(s.data()[i] == doctest::Approx(gauss1(i, 6, 0.5)).epsilon(1e-14));
  }

  TEST_CASE("flip TTA") {
    const Tensor x = random_tensor({1, 1, 4, 6, 4}, 1);
    const Predictor constant = [](const Tensor& t) {
      return Tensor({1, 3, t.dim(2), t.dim(3), t.dim(4)}, Real(0.7));
    };
    CHECK(max_abs_diff(flip_tta(constant, x).data(), patch_probabilities(constant, x, false).data()) < 1e-15);

    const Predictor p = conv_predictor(3, 2);
    const Tensor probs = flip_tta(p, x);
    const std::size_t V = 4 * 6 * 4;
    for (std::size_t i = 0; i < V; ++i)
      CHECK(probs.data()[i] + probs.data()[V + i] + probs.data()[2 * V + i] == doctest::Approx(1.0).epsilon(1e-9));
    for (int a = 0; a < 3; ++a) {
      const bool fd = a == 0, fh = a == 1, fw = a == 2;
      const Tensor lhs = flip_tta(p, ops::flip_spatial(x, fd, fh, fw));
      const Tensor rhs = ops::flip_spatial(probs, fd, fh, fw);
      CHECK(max_abs_diff(lhs.data(), rhs.data()) < 1e-14);
    }
  }

  TEST_CASE("tile starts") {
    CHECK(tile_starts(12, 8, 0.5) == std::vector<std::size_t>{0, 4});
    CHECK(tile_starts(8, 8, 0.5) == std::vector<std::size_t>{0});
    CHECK(tile_starts(20, 8, 0.5) == std::vector<std::size_t>{0, 4, 8, 12});
    CHECK(tile_starts(16, 8, 0) == std::vector<std::size_t>{0, 8});
    CHECK_THROWS_AS(tile_starts(6, 8, 0.5), ConfigError);
  }

  TEST_CASE("a volume equal to one patch reduces to TTA and argmax") {
    const Tensor x = random_tensor({1, 4, 4, 4}, 3);
    const Predictor p = conv_predictor(2, 4);
    InferConfig cfg;
    cfg.patch = {4, 4, 4};
    const SlidingResult r = sliding_window_predict(p, x, cfg);
    const Tensor tta = flip_tta(p, ops::reshape(x, {1, 1, 4, 4, 4}));
    CHECK(max_abs_diff(r.probabilities.data(), tta.data()) < 1e-14);
    CHECK(r.labels.v == argmax_labels(tta).v);
  }

  TEST_CASE("constant probabilities tie-break to class 0") {
    const Predictor flat = [](const Tensor& t) { return Tensor({1, 3, t.dim(2), t.dim(3), t.dim(4)}, Real(0)); };
    InferConfig cfg;
    cfg.patch = {4, 4, 4};
    const SlidingResult r = sliding_window_predict(flat, random_tensor({1, 8, 6, 4}, 5), cfg);
    for (auto l : r.labels.v) CHECK(l == 0);
  }

  TEST_CASE("two overlapping tiles match a hand-weighted average") {
    const Tensor x = random_tensor({1, 2, 2, 6}, 6);
    InferConfig cfg;
    cfg.patch = {2, 2, 4};
    cfg.overlap = 0.5;
    cfg.tta = false;
    const Predictor p = positional_predictor();
    const SlidingResult r = sliding_window_predict(p, x, cfg);
    // Tiles start at w = 0 and w = 2; along D and H one tile covers everything.
    const Tensor g = gaussian_map(cfg.patch, cfg.sigma_scale, cfg.weight_floor);
    for (std::size_t d = 0; d < 2; ++d)
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t w = 0; w < 6; ++w) {
          Real num = 0, den = 0;
          for (std::size_t w0 : {0, 2}) {
            if (w < w0 || w >= w0 + 4) continue;
            const std::size_t lw = w - w0;
            const Real z0 = x.data()[(d * 2 + h) * 6 + w], z1 = Real(0.3) * Real(lw);
            const Real p1 = 1 / (1 + std::exp(z0 - z1));
            const Real wt = g.data()[(d * 2 + h) * 4 + lw];
            num += wt * p1;
            den += wt;
          }
          CHECK(r.probabilities.data()[24 + (d * 2 + h) * 6 + w] == doctest::Approx(num / den).epsilon(1e-13));
        }
  }

  TEST_CASE("non-overlapping tiles are independent") {
    const Tensor x = random_tensor({1, 4, 4, 8}, 7);
    InferConfig cfg;
    cfg.patch = {4, 4, 4};
    cfg.overlap = 0;
    cfg.tta = false;
    const Predictor p = conv_predictor(2, 8);
    const SlidingResult r = sliding_window_predict(p, x, cfg);
    for (std::size_t w0 : {0, 4}) {
      std::vector<Real> tile(64);
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t w = 0; w < 4; ++w) tile[i * 4 + w] = x.data()[i * 8 + w0 + w];
      const Tensor q = patch_probabilities(p, Tensor({1, 1, 4, 4, 4}, tile), false);
      for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < 16; ++i)
          for (std::size_t w = 0; w < 4; ++w)
            CHECK(r.probabilities.data()[k * 128 + i * 8 + w0 + w] ==
                  doctest::Approx(q.data()[k * 64 + i * 4 + w]).epsilon(1e-14));
    }
  }

  TEST_CASE("volumes smaller than the patch are rejected") {
    InferConfig cfg;
    cfg.patch = {4, 4, 4};
    CHECK_THROWS_AS(sliding_window_predict(conv_predictor(2, 9), random_tensor({1, 4, 2, 4}, 10), cfg), ConfigError);
  }

  TEST_CASE("model predictor end to end") {
    ModelConfig c;
    c.stages = 2;
    c.base_channels = 2;
    const Model m(c, 11);
    InferConfig cfg;
    cfg.patch = {4, 4, 4};
    cfg.tta = false;
    const SlidingResult r = sliding_window_predict(model_predictor(m), random_tensor({1, 4, 4, 8}, 12), cfg);
    CHECK(r.probabilities.shape() == Shape{3, 4, 4, 8});
    CHECK(r.labels.shape == Shape{1, 4, 4, 8});
  }
}
