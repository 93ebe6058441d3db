#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "mmunet/checkpoint.hpp"
#include "mmunet/cli.hpp"
#include "mmunet/error.hpp"
#include "mmunet/experiments/ablation.hpp"
#include "mmunet/experiments/attention.hpp"
#include "mmunet/experiments/fit1d.hpp"
#include "mmunet/experiments/manifest.hpp"
#include "mmunet/experiments/variance.hpp"
#include "mmunet/volume_io.hpp"

using namespace mmunet;
namespace fs = std::filesystem;
using experiments::read_text;
using test::random_tensor;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::current_path() / "test_scratch" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(std::vector<std::string> args, std::string* log = nullptr) {
  std::ostringstream out;
  const int rc = run_cli(args, out);
  if (log) *log = out.str();
  return rc;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

ModelConfig small_model(BlockVariant v = BlockVariant::HybridInside) {
  ModelConfig c;
  c.stages = 2;
  c.base_channels = 4;
  c.enc.variant = c.bottleneck.variant = v;
  c.enc.ssm.state = c.bottleneck.ssm.state = 4;
  return c;
}

Dataset small_dataset() {
  SyntheticConfig c;
  c.count = 4;
  c.dims = {8, 8, 8};
  return generate_dataset(c);
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("volume files round-trip and reject corruption") {
    const fs::path dir = scratch("volume");
    VolumeFile f;
    f.dims = {2, 3, 4};
    f.channels = 2;
    f.f32 = {};
    for (int i = 0; i < 48; ++i) f.f32.push_back(float(i) * 0.25f - 3);
    write_volume(dir / "a.mmuv", f);
    const VolumeFile g = read_volume(dir / "a.mmuv");
    CHECK(g.dims == f.dims);
    CHECK(g.channels == 2);
    CHECK(g.f32 == f.f32);

    const Tensor t = volume_to_tensor(g);
    CHECK(t.shape() == Shape{2, 2, 3, 4});
    CHECK(t.at(24) == doctest::Approx(f.f32[1]));  // channel 1 of voxel 0
    CHECK(tensor_to_volume(t).f32 == f.f32);

    LabelGrid l({1, 2, 2, 2});
    l.v = {0, 1, 2, 1, 0, 0, 2, 2};
    write_volume(dir / "l.mmuv", labels_to_volume(l));
    CHECK(volume_to_labels(read_volume(dir / "l.mmuv")).v == l.v);

    std::string bytes = read_text(dir / "a.mmuv");
    experiments::write_text(dir / "short.mmuv", bytes.substr(0, bytes.size() - 1));
    CHECK_THROWS_AS(read_volume(dir / "short.mmuv"), IoError);
    bytes[0] = 'X';
    experiments::write_text(dir / "bad.mmuv", bytes);
    CHECK_THROWS_AS(read_volume(dir / "bad.mmuv"), IoError);
    CHECK_THROWS_AS(read_volume(dir / "missing.mmuv"), IoError);
  }

  TEST_CASE("dataset directories round-trip") {
    const fs::path dir = scratch("dataset");
    const Dataset d = small_dataset();
    write_dataset(dir, d);
    const Dataset e = read_dataset(dir);
    REQUIRE(e.samples.size() == d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      CHECK(e.samples[i].labels == d.samples[i].labels);
      for (std::size_t j = 0; j < d.samples[i].image.size(); ++j)
        CHECK(e.samples[i].image[j] == Real(float(d.samples[i].image[j])));
    }
    // Recount labels from the files against class_counts.csv.
    std::istringstream counts(read_text(dir / "class_counts.csv"));
    std::string line;
    std::getline(counts, line);
    for (std::size_t i = 0; std::getline(counts, line); ++i) {
      const auto lab = read_volume(dir / "labels" / (std::string(i < 10 ? "000" : "00") + std::to_string(i) + ".mmuv"));
      const auto cells = split_csv_line(line);
      for (std::size_t k = 0; k < 3; ++k)
        CHECK(std::stoul(cells[1 + k]) == std::size_t(std::count(lab.u8.begin(), lab.u8.end(), std::uint8_t(k))));
    }
    VolumeFile bad = read_volume(dir / "labels/0001.mmuv");
    bad.u8[5] = 7;
    write_volume(dir / "labels/0001.mmuv", bad);
    CHECK_THROWS_AS(read_dataset(dir), IoError);
  }

  TEST_CASE("checkpoints restore the model exactly") {
    const fs::path dir = scratch("checkpoint");
    const Model m(small_model(), 5);
    save_checkpoint(m, dir / "a.mmuw");
    save_checkpoint(m, dir / "b.mmuw");
    CHECK(read_text(dir / "a.mmuw") == read_text(dir / "b.mmuw"));
    const Model r = load_checkpoint(dir / "a.mmuw");
    CHECK(r.seed() == 5);
    CHECK(r.config().to_kv() == m.config().to_kv());
    const Tensor x = random_tensor({1, 1, 8, 8, 8}, 6);
    NoGradGuard guard;
    CHECK(test::max_abs_diff(r.forward(x).logits.data(), m.forward(x).logits.data()) == 0.0);
    std::string bytes = read_text(dir / "a.mmuw");
    experiments::write_text(dir / "c.mmuw", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(dir / "c.mmuw"), IoError);
  }

  TEST_CASE("manifests contain no time-dependent fields") {
    experiments::Manifest m{"train", 3, {{"a", "1"}}};
    const auto text = experiments::format_manifest(m);
    CHECK(text == experiments::format_manifest(m));
    CHECK(text.find("command = train") != std::string::npos);
    CHECK(text.find("seed = 3") != std::string::npos);
    CHECK(text.find("source_version = ") != std::string::npos);
  }
}

TEST_SUITE("experiments") {
  TEST_CASE("fit1d on a constant image is near exact for every order") {
    experiments::Fit1dConfig c;
    c.height = c.width_px = 8;
    c.channels = 2;
    c.state = 8;
    c.steps = 5000;  // the bias alone represents the image; Adam gets there slowly
    const std::vector<Real> image(64, Real(0.75));
    for (auto m : {experiments::Fit1dMode::Forward, experiments::Fit1dMode::Reverse, experiments::Fit1dMode::Bi}) {
      const auto r = experiments::fit1d(image, c, m);
      CHECK(r.boundary_error < 1e-3);
      CHECK(r.interior_error < 1e-3);
    }
  }

  TEST_CASE("fit1d boundary windows and CSV shape") {
    const auto mask = experiments::boundary_mask(3, 5, 1);
    // Rows start at 5 and 10; the window is [r W - 1, r W].
    CHECK(mask == std::vector<bool>{0, 0, 0, 0, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0});
    experiments::Fit1dConfig c;
    c.height = 4;
    c.width_px = 6;
    c.channels = 2;
    c.state = 4;
    c.steps = 5;
    c.boundary = 1;
    const auto image = experiments::fit1d_image(c);
    CHECK(image == experiments::fit1d_image(c));
    const auto r = experiments::fit1d(image, c, experiments::Fit1dMode::Bi);
    const auto csv = experiments::fit1d_positions_csv(image, c, {r});
    CHECK(line_count(csv) == 1 + 24);
    CHECK_THROWS_AS(experiments::fit1d(std::vector<Real>(5), c, experiments::Fit1dMode::Forward), ShapeError);
    c.channels = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("variance taps: identity body keeps input statistics") {
    Model m(small_model(BlockVariant::SsmOnlyInside), 7);
    for (const auto& [name, t] : m.params().items())
      if (name.find(".ssm1.") != std::string::npos) {
        Tensor p = t;
        for (auto& v : p.mutable_data()) v = 0;
      }
    const Dataset d = small_dataset();
    const auto rep = experiments::feature_variance(m, d, {0, 1}, {"inside_residual", "outside_residual"});
    std::map<std::pair<std::string, std::size_t>, Real> inside, outside;
    for (const auto& s : rep.channels)
      (s.tap == "inside_residual" ? inside : outside)[{s.block, s.channel}] = s.variance;
    REQUIRE(inside.size() == outside.size());
    std::size_t compared = 0;
    for (const auto& [k, v] : inside)
      if (k.first == "enc1" || k.first == "bottleneck") {
        CHECK(v == doctest::Approx(outside.at(k)).epsilon(1e-12));
        ++compared;
      }
    CHECK(compared == 8 + 16);
    // Rows: taps x channels over enc1 (8), bottleneck (16), dec1 (8) and dec0 (4).
    CHECK(line_count(experiments::variance_csv(rep)) == 1 + 2 * (8 + 16 + 8 + 4));
    CHECK_THROWS_AS(experiments::feature_variance(m, d, {0}, {"no_such_tap"}), ConfigError);
  }

  TEST_CASE("attention maps reproduce the block scan") {
    const Model m(small_model(), 8);
    const Dataset d = small_dataset();
    experiments::AttentionConfig cfg;
    cfg.block = "enc1";
    const auto maps = experiments::block_attention(m, d.images({0}), cfg);
    CHECK(maps.raw.size() == 8);
    CHECK(maps.length == 64);
    CHECK(maps.upper_max == 0.0);
    for (Real e : maps.identity_error) CHECK(e < 1e-8);
    const auto n = experiments::row_max_normalized(maps.raw[0]);
    for (Eigen::Index t = 0; t < n.rows(); ++t) CHECK(n.row(t).cwiseAbs().maxCoeff() == doctest::Approx(1.0));
    cfg.block = "dec0";
    CHECK_THROWS_AS(experiments::block_attention(m, d.images({0}), cfg), ConfigError);
    cfg.block = "bottleneck";
    cfg.order = 2;
    CHECK_THROWS_AS(experiments::block_attention(m, d.images({0}), cfg), ConfigError);
  }

  TEST_CASE("ablation tables list every configuration") {
    const auto scan = experiments::scan_ablation_specs(ModelConfig{});
    REQUIRE(scan.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) CHECK(scan[i].label == "B" + std::to_string(i + 1));
    CHECK(scan[1].model.enc.ssm.orders.orders.size() == 2);
    const auto arch = experiments::arch_ablation_specs(ModelConfig{});
    CHECK(arch.size() == 7);
    bool swin = false, vm = false, dec = false;
    for (const auto& s : arch) {
      swin |= s.model.enc.variant == BlockVariant::PureSsm && s.model.dec.variant == BlockVariant::PureConv;
      vm |= s.model.enc.variant == BlockVariant::PureSsm && s.model.dec.variant == BlockVariant::PureSsm;
      dec |= s.model.enc.variant == BlockVariant::PureConv && s.model.dec.variant == BlockVariant::PureSsm;
    }
    CHECK(swin);
    CHECK(vm);
    CHECK(dec);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("exit codes") {
    const fs::path dir = scratch("cli_codes");
    std::string log;
    CHECK(cli({"--help"}, &log) == kExitOk);
    CHECK(log.find("gen-data") != std::string::npos);
    CHECK(cli({"frobnicate"}) == kExitConfig);
    CHECK(cli({"gen-data", "--out", (dir / "d").string(), "--samplez", "3"}) == kExitConfig);
    CHECK(cli({"gen-data", "--out", (dir / "d").string(), "--samples", "many"}) == kExitConfig);
    CHECK(cli({"train", "--data", (dir / "nothing").string(), "--out", (dir / "t").string()}) == kExitFailure);

    const fs::path cfg = dir / "gen.txt";
    experiments::write_text(cfg, "samples = 3\ndim = 8\n# comment\nbogus = 1\n");
    CHECK(cli({"gen-data", "--out", (dir / "d").string(), "--config", cfg.string()}, &log) == kExitConfig);
    CHECK(log.find("bogus") != std::string::npos);
  }

  TEST_CASE("flags override the config file and MMU_SEED overrides both") {
    const fs::path dir = scratch("cli_seed");
    const fs::path cfg = dir / "gen.txt";
    experiments::write_text(cfg, "samples = 3\ndim = 8\ndata_seed = 4\n");
    REQUIRE(cli({"gen-data", "--out", (dir / "a").string(), "--config", cfg.string(), "--samples", "2"}) == kExitOk);
    const auto manifest = read_text(dir / "a" / "manifest.txt");
    CHECK(manifest.find("samples = 2") != std::string::npos);
    CHECK(manifest.find("data_seed = 4") != std::string::npos);
    ::setenv("MMU_SEED", "9", 1);
    const int rc = cli({"gen-data", "--out", (dir / "b").string(), "--config", cfg.string()});
    ::unsetenv("MMU_SEED");
    REQUIRE(rc == kExitOk);
    CHECK(read_text(dir / "b" / "manifest.txt").find("data_seed = 9") != std::string::npos);
  }

  TEST_CASE("end-to-end commands") {
    const fs::path dir = scratch("cli_run");
    const std::string data = (dir / "data").string(), run = (dir / "run").string();
    REQUIRE(cli({"gen-data", "--out", data, "--samples", "3", "--dim", "8"}) == kExitOk);
    REQUIRE(cli({"train", "--data", data, "--out", run, "--stages", "2", "--base_channels", "2", "--state_dim", "2",
                 "--max_epoch", "1", "--iters_per_epoch", "1", "--batch_size", "1"}) == kExitOk);
    CHECK(line_count(read_text(dir / "run" / "train_log.csv")) == 2);
    CHECK(fs::exists(dir / "run" / "timing.txt"));
    CHECK(read_text(dir / "run" / "manifest.txt").find("timing") == std::string::npos);

    const std::string ckpt = (dir / "run" / "model.mmuw").string(), image = (dir / "data/images/0000.mmuv").string();
    CHECK(cli({"infer", "--checkpoint", ckpt, "--image", image, "--out", (dir / "inf").string(), "--patch", "6"}) ==
          kExitConfig);
    REQUIRE(cli({"infer", "--checkpoint", ckpt, "--image", image, "--out", (dir / "inf").string(), "--patch", "4",
                 "--tta", "false"}) == kExitOk);
    CHECK(read_volume(dir / "inf" / "labels.mmuv").dims == Int3{8, 8, 8});
    CHECK(read_volume(dir / "inf" / "probabilities.mmuv").channels == 3);

    REQUIRE(cli({"attn", "--checkpoint", ckpt, "--data", data, "--out", (dir / "attn").string(), "--block", "0"}) ==
            kExitOk);
    CHECK(fs::exists(dir / "attn" / "raw" / "channel_03.csv"));
    CHECK_FALSE(fs::exists(dir / "attn" / "raw" / "channel_04.csv"));
    CHECK(line_count(read_text(dir / "attn" / "raw" / "channel_00.csv")) == 64);
    CHECK(cli({"attn", "--checkpoint", ckpt, "--data", data, "--out", (dir / "attn2").string(), "--block", "dec0"}) ==
          kExitConfig);

    REQUIRE(cli({"variance", "--checkpoint", ckpt, "--data", data, "--out", (dir / "var").string()}) == kExitOk);
    CHECK(line_count(read_text(dir / "var" / "summary.csv")) == 2);

    CHECK(cli({"fit1d", "--out", (dir / "fit").string(), "--height", "4", "--width", "4", "--channels", "2",
               "--state_dim", "4", "--steps", "3", "--boundary", "1"}) == kExitOk);
    CHECK(line_count(read_text(dir / "fit" / "positions.csv")) == 17);
    CHECK(cli({"fit1d", "--out", (dir / "fit3d").string(), "--image", image}) == kExitConfig);
  }

  TEST_CASE("divergence exits with the numerical failure code") {
    const fs::path dir = scratch("cli_nan");
    Dataset d = small_dataset();
    for (auto& s : d.samples) s.image[3] = std::numeric_limits<Real>::quiet_NaN();
    write_dataset(dir / "data", d);
    std::string log;
    CHECK(cli({"train", "--data", (dir / "data").string(), "--out", (dir / "run").string(), "--stages", "2",
               "--base_channels", "2", "--max_epoch", "1", "--iters_per_epoch", "1"},
              &log) == kExitNumerical);
    CHECK(fs::exists(dir / "run" / "model.mmuw"));
  }
}
