#include "mmunet/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>

#include <CLI11.hpp>

#include "mmunet/checkpoint.hpp"
#include "mmunet/error.hpp"
#include "mmunet/experiments/ablation.hpp"
#include "mmunet/experiments/attention.hpp"
#include "mmunet/experiments/fit1d.hpp"
#include "mmunet/experiments/manifest.hpp"
#include "mmunet/experiments/variance.hpp"
#include "mmunet/inference.hpp"
#include "mmunet/training.hpp"
#include "mmunet/volume_io.hpp"

namespace mmunet {

namespace fs = std::filesystem;
using experiments::Manifest;
using experiments::write_manifest;
using experiments::write_text;

namespace {

// Config keys of a command: every key is both a line of the optional
// --config file and a --<key> flag; flags win over the file.
class ConfigFlags {
 public:
  ConfigFlags(CLI::App* cmd, std::vector<KvMap> sections, std::vector<std::string> extra = {}) {
    cmd->add_option("--config", file_, "key=value config file");
    std::set<std::string> keys;
    for (const auto& s : sections)
      for (const auto& [k, v] : s) keys.insert(k);
    for (const auto& k : extra) keys.insert(k);
    for (const auto& k : keys) cmd->add_option("--" + k, flags_[k], "config key " + k);
  }

  /// File values overridden by flags, then `seed_key` by MMU_SEED if set.
  KvMap merged(const std::string& seed_key = "seed") const {
    KvMap kv = file_.empty() ? KvMap{} : read_kv_file(file_);
    for (const auto& [k, v] : flags_)
      if (!v.empty()) kv[k] = v;
    if (const char* env = std::getenv("MMU_SEED"); env && *env) kv[seed_key] = env;
    return kv;
  }

 private:
  std::string file_;
  std::map<std::string, std::string> flags_;
};

KvMap join(std::initializer_list<KvMap> parts) {
  KvMap out;
  for (const auto& p : parts) out.insert(p.begin(), p.end());
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_timing(const fs::path& out, double seconds) {
  write_text(out / "timing.txt", "seconds=" + format_real(seconds, 6) + "\n");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (at <= s.size()) {
    const auto comma = s.find(',', at);
    const auto item = s.substr(at, comma == std::string::npos ? std::string::npos : comma - at);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  return out;
}

std::string two_digit(std::size_t i) {
  return (i < 10 ? "0" : "") + std::to_string(i);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& log) {
  CLI::App app{"mmu: volumetric SSM/CNN segmentation toolkit"};
  app.require_subcommand(1);
  std::function<void()> action;
  const auto t0 = std::chrono::steady_clock::now();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset directory");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  ConfigFlags gen_flags(gen, {SyntheticConfig{}.to_kv()}, {"dim"});
  gen->callback([&] {
    action = [&] {
      const KvMap kv = gen_flags.merged("data_seed");
      KvReader r(kv);
      SyntheticConfig cfg;
      cfg.read(r);
      r.reject_unused();
      const Dataset data = generate_dataset(cfg);
      write_dataset(gen_out, data);
      write_manifest(gen_out, {"gen-data", cfg.seed, cfg.to_kv()});
      write_timing(gen_out, seconds_since(t0));
      log << "wrote " << data.samples.size() << " samples to " << gen_out << "\n";
    };
  });

  // train
  auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
  std::string tr_data, tr_out;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  ConfigFlags tr_flags(tr, {ModelConfig{}.to_kv(), TrainConfig{}.to_kv()});
  tr->callback([&] {
    action = [&] {
      const KvMap kv = tr_flags.merged();
      KvReader r(kv);
      ModelConfig mc;
      mc.read(r);
      TrainConfig tc;
      tc.read(r);
      r.reject_unused();
      const Dataset data = read_dataset(tr_data);
      Model model(mc, tc.seed);
      std::vector<EpochLog> done;
      try {
        train(model, data, tc, [&](const EpochLog& e) {
          done.push_back(e);
          log << "epoch " << e.epoch << " lr " << format_real(e.lr, 4) << " loss " << format_real(e.train_loss, 5)
              << " val dice " << format_real(e.val_dice_mean, 4) << "\n";
        });
      } catch (const NumericalError&) {
        // Keep what completed: the log so far and the rolled-back parameters.
        write_text(fs::path(tr_out) / "train_log.csv", format_train_log(done, mc.classes));
        save_checkpoint(model, fs::path(tr_out) / "model.mmuw");
        throw;
      }
      write_text(fs::path(tr_out) / "train_log.csv", format_train_log(done, mc.classes));
      save_checkpoint(model, fs::path(tr_out) / "model.mmuw");
      write_manifest(tr_out, {"train", tc.seed, join({mc.to_kv(), tc.to_kv(), {{"data", tr_data}}})});
      write_timing(tr_out, seconds_since(t0));
    };
  });

  // infer
  auto* inf = app.add_subcommand("infer", "sliding-window prediction of one image volume");
  std::string inf_ckpt, inf_image, inf_out;
  inf->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required();
  inf->add_option("--image", inf_image, "f32 image volume")->required();
  inf->add_option("--out", inf_out, "output directory")->required();
  ConfigFlags inf_flags(inf, {InferConfig{}.to_kv()}, {"patch"});
  inf->callback([&] {
    action = [&] {
      const KvMap kv = inf_flags.merged();
      KvReader r(kv);
      InferConfig ic;
      ic.read(r);
      r.reject_unused();
      const Model model = load_checkpoint(inf_ckpt);
      const std::size_t div = std::size_t(1) << model.config().stages;
      for (std::size_t a = 0; a < 3; ++a)
        if (ic.patch[a] % div != 0)
          throw ConfigError("infer: patch extents must be divisible by " + std::to_string(div));
      const Tensor volume = volume_to_tensor(read_volume(inf_image));
      const SlidingResult res = sliding_window_predict(model_predictor(model), volume, ic);
      write_volume(fs::path(inf_out) / "labels.mmuv", labels_to_volume(res.labels));
      write_volume(fs::path(inf_out) / "probabilities.mmuv", tensor_to_volume(res.probabilities));
      write_manifest(inf_out, {"infer", model.seed(),
                               join({ic.to_kv(), {{"checkpoint", inf_ckpt}, {"image", inf_image}}})});
      write_timing(inf_out, seconds_since(t0));
    };
  });

  // fit1d
  auto* fit = app.add_subcommand("fit1d", "fit a flattened 2D image with static HiPPO systems");
  std::string fit_image, fit_orders = "forward,reverse,bi", fit_out;
  fit->add_option("--image", fit_image, "2D f32 image volume (D = 1); synthetic when omitted");
  fit->add_option("--orders", fit_orders, "comma-separated subset of forward, reverse, bi");
  fit->add_option("--out", fit_out, "output directory")->required();
  ConfigFlags fit_flags(fit, {experiments::Fit1dConfig{}.to_kv()});
  fit->callback([&] {
    action = [&] {
      const KvMap kv = fit_flags.merged();
      KvReader r(kv);
      experiments::Fit1dConfig fc;
      fc.read(r);
      r.reject_unused();
      std::vector<Real> image;
      if (fit_image.empty()) {
        image = experiments::fit1d_image(fc);
      } else {
        const VolumeFile v = read_volume(fit_image);
        if (v.dtype != VolumeFile::Dtype::F32 || v.dims[0] != 1 || v.channels != 1)
          throw ConfigError("fit1d: expected a single-channel f32 volume with D = 1");
        fc.height = v.dims[1];
        fc.width_px = v.dims[2];
        fc.validate();
        image.assign(v.f32.begin(), v.f32.end());
      }
      std::vector<experiments::Fit1dResult> results;
      for (const auto& m : split_list(fit_orders)) {
        results.push_back(experiments::fit1d(image, fc, experiments::parse_fit1d_mode(m)));
        log << m << ": boundary " << format_real(results.back().boundary_error, 5) << " interior "
            << format_real(results.back().interior_error, 5) << "\n";
      }
      if (results.empty()) throw ConfigError("fit1d: no orders given");
      write_text(fs::path(fit_out) / "positions.csv", experiments::fit1d_positions_csv(image, fc, results));
      write_text(fs::path(fit_out) / "summary.csv", experiments::fit1d_summary_csv(results));
      write_manifest(fit_out, {"fit1d", fc.seed,
                               join({fc.to_kv(), {{"orders", fit_orders}, {"image", fit_image}}})});
      write_timing(fit_out, seconds_since(t0));
    };
  });

  // variance
  auto* var = app.add_subcommand("variance", "feature variance inside and outside residual connections");
  std::string var_ckpt, var_data, var_out, var_taps = "after_conv1,after_conv2,inside_residual,outside_residual";
  std::size_t var_bins = 50;
  var->add_option("--checkpoint", var_ckpt, "model checkpoint")->required();
  var->add_option("--data", var_data, "dataset directory")->required();
  var->add_option("--taps", var_taps, "comma-separated tap names");
  var->add_option("--bins", var_bins, "histogram bins");
  var->add_option("--out", var_out, "output directory")->required();
  var->callback([&] {
    action = [&] {
      const Model model = load_checkpoint(var_ckpt);
      const Dataset data = read_dataset(var_data);
      std::vector<std::size_t> all(data.samples.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const auto rep = experiments::feature_variance(model, data, all, split_list(var_taps), var_bins);
      write_text(fs::path(var_out) / "variance.csv", experiments::variance_csv(rep));
      write_text(fs::path(var_out) / "histogram.csv", experiments::histogram_csv(rep));
      write_text(fs::path(var_out) / "summary.csv", experiments::variance_summary_csv(rep));
      write_manifest(var_out, {"variance", model.seed(),
                               {{"checkpoint", var_ckpt}, {"data", var_data}, {"taps", var_taps},
                                {"bins", std::to_string(var_bins)}}});
      write_timing(var_out, seconds_since(t0));
      log << "median variance inside " << format_real(rep.median_inside, 5) << " outside "
          << format_real(rep.median_outside, 5) << "\n";
    };
  });

  // ablations
  auto add_ablation = [&](const std::string& name, const std::string& help, bool scan) {
    auto* cmd = app.add_subcommand(name, help);
    auto data = std::make_shared<std::string>(), out = std::make_shared<std::string>();
    cmd->add_option("--data", *data, "dataset directory")->required();
    cmd->add_option("--out", *out, "output directory")->required();
    auto flags = std::make_shared<ConfigFlags>(cmd, std::vector<KvMap>{ModelConfig{}.to_kv(), TrainConfig{}.to_kv()});
    cmd->callback([&, name, scan, data, out, flags] {
      action = [&, name, scan, data, out, flags] {
        const KvMap kv = flags->merged();
        KvReader r(kv);
        ModelConfig mc;
        mc.read(r);
        TrainConfig tc;
        tc.read(r);
        r.reject_unused();
        const Dataset ds = read_dataset(*data);
        const auto specs = scan ? experiments::scan_ablation_specs(mc) : experiments::arch_ablation_specs(mc);
        const auto rows = experiments::run_ablation(specs, ds, tc, [&](const experiments::AblationRow& row) {
          log << row.spec.label << ": val dice " << format_real(row.val_dice_mean, 4) << " ("
              << format_real(row.seconds, 4) << " s)\n";
        });
        write_text(fs::path(*out) / "table.csv", experiments::ablation_csv(rows));
        write_text(fs::path(*out) / "timing.csv", experiments::ablation_timing_csv(rows));
        write_manifest(*out, {name, tc.seed, join({mc.to_kv(), tc.to_kv(), {{"data", *data}}})});
      };
    });
  };
  add_ablation("ablate-scan", "train the B1..B9 scan-order configurations", true);
  add_ablation("ablate-arch", "train the block-placement configurations", false);

  // attn
  auto* at = app.add_subcommand("attn", "per-channel attention operators of one SSM block");
  std::string at_ckpt, at_data, at_out, at_block = "bottleneck";
  std::size_t at_sample = 0;
  experiments::AttentionConfig at_cfg;
  at->add_option("--checkpoint", at_ckpt, "model checkpoint")->required();
  at->add_option("--data", at_data, "dataset directory")->required();
  at->add_option("--sample", at_sample, "sample index");
  at->add_option("--block", at_block, "block name or index in forward order");
  at->add_option("--order", at_cfg.order, "scan order index within the block");
  at->add_option("--max_length", at_cfg.max_length, "largest sequence length accepted");
  at->add_option("--out", at_out, "output directory")->required();
  at->callback([&] {
    action = [&] {
      const Model model = load_checkpoint(at_ckpt);
      const Dataset data = read_dataset(at_data);
      if (at_sample >= data.samples.size())
        throw ConfigError("attn: sample " + std::to_string(at_sample) + " out of range");
      at_cfg.block = at_block;
      if (!at_block.empty() && std::all_of(at_block.begin(), at_block.end(), ::isdigit)) {
        const auto names = model.block_names();
        const auto idx = std::stoul(at_block);
        if (idx >= names.size()) throw ConfigError("attn: block index " + at_block + " out of range");
        at_cfg.block = names[idx];
      }
      const auto maps = experiments::block_attention(model, data.images({at_sample}), at_cfg);
      for (std::size_t c = 0; c < maps.raw.size(); ++c) {
        write_text(fs::path(at_out) / "raw" / ("channel_" + two_digit(c) + ".csv"), experiments::matrix_csv(maps.raw[c]));
        write_text(fs::path(at_out) / "normalized" / ("channel_" + two_digit(c) + ".csv"),
                   experiments::matrix_csv(experiments::row_max_normalized(maps.raw[c])));
      }
      write_text(fs::path(at_out) / "summary.csv", experiments::attention_summary_csv(maps));
      write_manifest(at_out, {"attn", model.seed(),
                              {{"checkpoint", at_ckpt}, {"data", at_data}, {"sample", std::to_string(at_sample)},
                               {"block", at_cfg.block}, {"order", std::to_string(at_cfg.order)},
                               {"order_name", maps.order}, {"max_length", std::to_string(at_cfg.max_length)}}});
      write_timing(at_out, seconds_since(t0));
      log << maps.raw.size() << " channels, L = " << maps.length << "\n";
    };
  });

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    log << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    log << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    action();
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    log << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace mmunet
