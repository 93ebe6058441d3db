#include "mmunet/training.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "mmunet/error.hpp"
#include "mmunet/losses.hpp"
#include "mmunet/optim.hpp"

namespace mmunet {

void TrainConfig::validate() const {
  if (!(init_lr >= 0)) throw ConfigError("train: init_lr must be non-negative");
  if (max_epoch < 1 || iters_per_epoch < 1 || batch_size < 1)
    throw ConfigError("train: max_epoch, iters_per_epoch and batch_size must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be non-negative");
  if (ds_weights.empty()) throw ConfigError("train: ds_weights is empty");
  Real total = 0;
  for (Real w : ds_weights) {
    if (!(w > 0)) throw ConfigError("train: ds_weights must be positive");
    total += w;
  }
  if (std::abs(total - 1) > Real(1e-12)) throw ConfigError("train: ds_weights must sum to 1");
}

void TrainConfig::read(KvReader& kv) {
  kv.read("init_lr", init_lr);
  kv.read("max_epoch", max_epoch);
  kv.read("iters_per_epoch", iters_per_epoch);
  kv.read("momentum", momentum);
  kv.read("weight_decay", weight_decay);
  kv.read("batch_size", batch_size);
  kv.read("seed", seed);
  if (kv.has("ds_weights")) {
    std::string text;
    kv.read("ds_weights", text);
    std::vector<Real> w;
    std::stringstream ss(text);
    std::string item;
    Real total = 0;
    while (std::getline(ss, item, ',')) {
      try {
        w.push_back(static_cast<Real>(std::stod(item)));
      } catch (const std::exception&) {
        throw ConfigError("train: bad ds_weights entry '" + item + "'");
      }
      total += w.back();
    }
    if (!(total > 0)) throw ConfigError("train: ds_weights must have a positive sum");
    for (auto& x : w) x /= total;
    ds_weights = w;
  }
  validate();
}

KvMap TrainConfig::to_kv() const {
  std::string w;
  for (std::size_t i = 0; i < ds_weights.size(); ++i) w += (i ? "," : "") + format_real(ds_weights[i]);
  return {{"init_lr", format_real(init_lr)},
          {"max_epoch", std::to_string(max_epoch)},
          {"iters_per_epoch", std::to_string(iters_per_epoch)},
          {"momentum", format_real(momentum)},
          {"weight_decay", format_real(weight_decay)},
          {"batch_size", std::to_string(batch_size)},
          {"seed", std::to_string(seed)},
          {"ds_weights", w}};
}

std::string format_train_log(const std::vector<EpochLog>& log, std::size_t classes) {
  std::string out = "epoch,lr,train_loss,val_dice_mean";
  for (std::size_t k = 0; k < classes; ++k) out += ",dice_" + std::to_string(k);
  out += "\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + "," + format_real(e.lr, 10) + "," + format_real(e.train_loss, 10) + "," +
           format_real(e.val_dice_mean, 10);
    for (Real d : e.val_dice) out += "," + format_real(d, 10);
    out += "\n";
  }
  return out;
}

std::vector<Real> evaluate_dice(const Model& model, const Dataset& data, const std::vector<std::size_t>& idx) {
  const std::size_t K = model.config().classes;
  std::vector<Real> mean(K, Real(0));
  if (idx.empty()) return mean;
  NoGradGuard guard;
  for (auto i : idx) {
    const auto pred = argmax_labels(model.forward(data.images({i})).logits);
    const auto d = dice_score(pred, data.labels({i}), K);
    for (std::size_t k = 0; k < K; ++k) mean[k] += d[k];
  }
  for (auto& m : mean) m /= Real(idx.size());
  return mean;
}

std::vector<EpochLog> train(Model& model, const Dataset& data, const TrainConfig& cfg,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (data.samples.empty()) throw ConfigError("train: empty dataset");
  if (data.cfg.classes != model.config().classes)
    throw ConfigError("train: dataset has " + std::to_string(data.cfg.classes) + " classes, model " +
                      std::to_string(model.config().classes));
  std::vector<Real> weights = model.config().deep_supervision ? cfg.ds_weights : std::vector<Real>{Real(1)};
  if (model.config().deep_supervision && weights.size() != 3)
    throw ConfigError("train: deep supervision needs 3 ds_weights");

  const auto train_idx = data.train_indices();
  const auto val_idx = data.val_indices();
  std::mt19937_64 eng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);
  Sgd opt(model.params());

  std::vector<EpochLog> log;
  std::vector<std::vector<Real>> good;
  for (std::size_t epoch = 0; epoch < cfg.max_epoch; ++epoch) {
    good.clear();
    for (const auto& [_, t] : model.params().items()) good.emplace_back(t.data().begin(), t.data().end());

    const Real lr = poly_lr(epoch, cfg.max_epoch, cfg.init_lr);
    Real loss_sum = 0;
    for (std::size_t it = 0; it < cfg.iters_per_epoch; ++it) {
      std::vector<std::size_t> batch(cfg.batch_size);
      for (auto& b : batch) b = train_idx[pick(eng)];
      model.params().zero_grad();
      const Tensor loss = deep_supervised_loss(model.forward(data.images(batch)), data.labels(batch), weights);
      const Real v = loss.item();
      if (!std::isfinite(v)) {
        std::size_t p = 0;
        for (const auto& item : model.params().items()) {
          Tensor t = item.second;
          auto dst = t.mutable_data();
          std::copy(good[p].begin(), good[p].end(), dst.begin());
          ++p;
        }
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", iteration " +
                             std::to_string(it) + "; parameters restored to the previous epoch");
      }
      loss.backward();
      opt.step(lr, cfg.momentum, cfg.weight_decay);
      loss_sum += v;
    }
    EpochLog e;
    e.epoch = epoch;
    e.lr = lr;
    e.train_loss = loss_sum / Real(cfg.iters_per_epoch);
    e.val_dice = evaluate_dice(model, data, val_idx);
    e.val_dice_mean = mean_foreground(e.val_dice);
    log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return log;
}

}  // namespace mmunet
