#include "mmunet/experiments/fit1d.hpp"

#include <cmath>
#include <random>

#include "mmunet/error.hpp"
#include "mmunet/ops.hpp"
#include "mmunet/optim.hpp"
#include "mmunet/ssm.hpp"

namespace mmunet::experiments {

void Fit1dConfig::validate() const {
  if (height < 2 || width_px < 2) throw ConfigError("fit1d: image must be at least 2 x 2");
  if (channels < 2 || state == 0 || steps == 0)
    throw ConfigError("fit1d: channels must be at least 2, state_dim and steps positive");
  if (!(lr > 0)) throw ConfigError("fit1d: lr must be positive");
  if (!(delta_min > 0 && delta_min <= delta_max)) throw ConfigError("fit1d: need 0 < delta_min <= delta_max");
  if (2 * boundary > width_px) throw ConfigError("fit1d: boundary window wider than a row");
  if (!(noise >= 0)) throw ConfigError("fit1d: noise must be non-negative");
}

void Fit1dConfig::read(KvReader& kv) {
  kv.read("height", height);
  kv.read("width", width_px);
  kv.read("channels", channels);
  kv.read("state_dim", state);
  kv.read("steps", steps);
  kv.read("lr", lr);
  kv.read("delta_min", delta_min);
  kv.read("delta_max", delta_max);
  kv.read("boundary", boundary);
  kv.read("seed", seed);
  kv.read("column_gain", column_gain);
  kv.read("noise", noise);
  validate();
}

KvMap Fit1dConfig::to_kv() const {
  return {{"height", std::to_string(height)},        {"width", std::to_string(width_px)},
          {"channels", std::to_string(channels)},    {"state_dim", std::to_string(state)},
          {"steps", std::to_string(steps)},          {"lr", format_real(lr)},
          {"delta_min", format_real(delta_min)},     {"delta_max", format_real(delta_max)},
          {"boundary", std::to_string(boundary)},    {"seed", std::to_string(seed)},
          {"column_gain", format_real(column_gain)}, {"noise", format_real(noise)}};
}

const char* fit1d_mode_name(Fit1dMode m) {
  switch (m) {
    case Fit1dMode::Forward: return "forward";
    case Fit1dMode::Reverse: return "reverse";
    case Fit1dMode::Bi: return "bi";
  }
  return "?";
}

Fit1dMode parse_fit1d_mode(const std::string& s) {
  if (s == "forward") return Fit1dMode::Forward;
  if (s == "reverse") return Fit1dMode::Reverse;
  if (s == "bi") return Fit1dMode::Bi;
  throw ConfigError("fit1d: unknown order set '" + s + "' (expected forward, reverse or bi)");
}

std::vector<Real> fit1d_image(const Fit1dConfig& cfg) {
  cfg.validate();
  std::seed_seq seq{cfg.seed, std::uint64_t(0xf171d)};
  std::mt19937_64 eng(seq);
  const std::size_t H = cfg.height, W = cfg.width_px;
  const std::size_t column = std::uniform_int_distribution<std::size_t>(0, W - 1)(eng);
  std::normal_distribution<Real> noise(0, 1);
  std::vector<Real> img(H * W);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      Real v = 2 * Real(c) / Real(W - 1) - 1;
      if (c == column) v += cfg.column_gain;
      img[r * W + c] = v + cfg.noise * noise(eng);
    }
  return img;
}

std::vector<bool> boundary_mask(std::size_t height, std::size_t width, std::size_t half) {
  std::vector<bool> m(height * width, false);
  for (std::size_t r = 1; r < height; ++r)
    for (std::size_t p = r * width - half; p < r * width + half; ++p) m[p] = true;
  return m;
}

namespace {

// States of `count` channels reading x up to, not including, t:
// rows[j * N + n][t] = h_t[n] with h_0 = 0 and h_t = A_bar h_{t-1} + B_bar x[t-1].
void bank_features(const Fit1dConfig& cfg, std::uint64_t stream, std::size_t count, const std::vector<Real>& x,
                   Real* out) {
  const std::size_t N = cfg.state, L = x.size();
  std::seed_seq seq{cfg.seed, stream};
  std::mt19937_64 eng(seq);
  std::uniform_real_distribution<Real> u(std::log(cfg.delta_min), std::log(cfg.delta_max));
  ssm::SsmParams p;
  p.a = ssm::hippo_legs(N);
  p.b.resize(static_cast<Eigen::Index>(N));
  for (std::size_t n = 0; n < N; ++n) p.b[static_cast<Eigen::Index>(n)] = std::sqrt(Real(2 * n + 1));
  p.c = ssm::Vector::Zero(static_cast<Eigen::Index>(N));
  for (std::size_t j = 0; j < count; ++j) {
    p.delta = std::exp(u(eng));
    const ssm::DiscreteSsm d = ssm::zoh_discretize(p);
    ssm::Vector h = ssm::Vector::Zero(static_cast<Eigen::Index>(N));
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t n = 0; n < N; ++n) out[(j * N + n) * L + t] = h[static_cast<Eigen::Index>(n)];
      h = d.a_bar * h + d.b_bar * x[t];
    }
  }
}

}  // namespace

Fit1dResult fit1d(const std::vector<Real>& image, const Fit1dConfig& cfg, Fit1dMode mode) {
  cfg.validate();
  const std::size_t L = cfg.height * cfg.width_px;
  if (image.size() != L)
    throw ShapeError("fit1d: image has " + std::to_string(image.size()) + " values, expected " + std::to_string(L));
  // Bi splits the channels between the two directions, so every mode fits
  // the same number of coefficients.
  const bool fwd = mode != Fit1dMode::Reverse, rev = mode != Fit1dMode::Forward;
  const std::size_t n_fwd = !fwd ? 0 : rev ? cfg.channels / 2 : cfg.channels;
  const std::size_t n_rev = cfg.channels - n_fwd;
  const std::size_t total = cfg.channels * cfg.state;

  std::vector<Real> features(total * L);
  const std::size_t at = n_fwd * cfg.state * L;
  if (fwd) bank_features(cfg, 1, n_fwd, image, features.data());
  if (rev) {
    const std::size_t rows = n_rev * cfg.state;
    // A reverse bank reads the sequence back to front; its responses are
    // flipped back onto image positions.
    std::vector<Real> flipped(image.rbegin(), image.rend());
    std::vector<Real> tmp(rows * L);
    bank_features(cfg, 2, n_rev, flipped, tmp.data());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < L; ++t) features[at + r * L + t] = tmp[r * L + (L - 1 - t)];
  }

  const Tensor f({1, total, L}, std::move(features));
  const Tensor target({1, 1, L}, image);
  Tensor c({1, total}, Real(0), true);
  Tensor bias({1}, Real(0), true);
  Adam opt({c, bias});
  Real loss_v = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    c.zero_grad();
    bias.zero_grad();
    const Tensor diff = ops::sub(ops::channel_linear(f, c, bias), target);
    const Tensor loss = ops::mean(ops::mul(diff, diff));
    loss_v = loss.item();
    if (!std::isfinite(loss_v)) throw NumericalError("fit1d: loss became non-finite at step " + std::to_string(step));
    loss.backward();
    opt.step(cfg.lr);
  }

  Fit1dResult r;
  r.mode = mode;
  {
    NoGradGuard guard;
    const Tensor y = ops::channel_linear(f, c, bias);
    r.prediction.assign(y.data().begin(), y.data().end());
    const Tensor diff = ops::sub(y, target);
    r.final_loss = ops::mean(ops::mul(diff, diff)).item();
  }
  r.abs_error.resize(L);
  const auto mask = boundary_mask(cfg.height, cfg.width_px, cfg.boundary);
  Real sb = 0, si = 0;
  std::size_t nb = 0, ni = 0;
  for (std::size_t p = 0; p < L; ++p) {
    r.abs_error[p] = std::abs(r.prediction[p] - image[p]);
    if (mask[p]) {
      sb += r.abs_error[p];
      ++nb;
    } else {
      si += r.abs_error[p];
      ++ni;
    }
  }
  r.boundary_error = nb ? sb / Real(nb) : Real(0);
  r.interior_error = ni ? si / Real(ni) : Real(0);
  return r;
}

std::string fit1d_positions_csv(const std::vector<Real>& image, const Fit1dConfig& cfg,
                                const std::vector<Fit1dResult>& results) {
  std::string out = "position,row,col,target";
  for (const auto& r : results) {
    const std::string m = fit1d_mode_name(r.mode);
    out += ",pred_" + m + ",err_" + m;
  }
  out += "\n";
  for (std::size_t p = 0; p < image.size(); ++p) {
    out += std::to_string(p) + "," + std::to_string(p / cfg.width_px) + "," + std::to_string(p % cfg.width_px) + "," +
           format_real(image[p], 10);
    for (const auto& r : results) out += "," + format_real(r.prediction[p], 10) + "," + format_real(r.abs_error[p], 10);
    out += "\n";
  }
  return out;
}

std::string fit1d_summary_csv(const std::vector<Fit1dResult>& results) {
  std::string out = "mode,boundary_error,interior_error,final_loss\n";
  for (const auto& r : results)
    out += std::string(fit1d_mode_name(r.mode)) + "," + format_real(r.boundary_error, 10) + "," +
           format_real(r.interior_error, 10) + "," + format_real(r.final_loss, 10) + "\n";
  return out;
}

}  // namespace mmunet::experiments
