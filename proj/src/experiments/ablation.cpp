#include "mmunet/experiments/ablation.hpp"

#include <chrono>

#include "mmunet/losses.hpp"

namespace mmunet::experiments {

namespace {

ModelConfig with_orders(ModelConfig m, const OrderSet& orders) {
  for (BlockConfig* b : {&m.enc, &m.bottleneck, &m.dec}) b->ssm.orders = orders;
  return m;
}

ModelConfig with_blocks(ModelConfig m, BlockVariant enc, BlockVariant bottleneck, BlockVariant dec) {
  m.enc.variant = enc;
  m.bottleneck.variant = bottleneck;
  m.dec.variant = dec;
  return m;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

std::vector<AblationSpec> scan_ablation_specs(const ModelConfig& base) {
  static const char* const kDescriptions[] = {
      "DHW",
      "DHW + flip(DHW)",
      "DHW + flip(DHW) + HWD",
      "three axis orders with their flips",
      "all six axis orders with their flips",
      "2D scan with DHW + flip(DHW)",
      "3D window scan with DHW + flip(DHW)",
      "zigzag scan with DHW + flip(DHW)",
      "inclined scan with DHW + flip(DHW)"};
  static const char* const kReference[] = {"0.902", "0.910", "0.898", "0.908", "0.907",
                                       "0.900", "0.902", "0.909", "0.901"};
  std::vector<AblationSpec> specs;
  const auto names = preset_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    specs.push_back({names[i], kDescriptions[i], kReference[i], with_orders(base, preset(names[i]))});
  return specs;
}

std::vector<AblationSpec> arch_ablation_specs(const ModelConfig& base) {
  using V = BlockVariant;
  return {
      {"nnUNet-like", "convolutional blocks everywhere", "", with_blocks(base, V::PureConv, V::PureConv, V::PureConv)},
      {"SwinUMamba-like", "pure SSM encoder and bottleneck", "+1.9% over the convolutional baseline",
       with_blocks(base, V::PureSsm, V::PureSsm, V::PureConv)},
      {"VM-UNet-like", "pure SSM blocks everywhere", "+1.8% over the convolutional baseline",
       with_blocks(base, V::PureSsm, V::PureSsm, V::PureSsm)},
      {"decoder+bottleneck SSM", "pure SSM bottleneck and decoder", "0.894",
       with_blocks(base, V::PureConv, V::PureSsm, V::PureSsm)},
      {"hybrid outside", "SSM after the residual sum in encoder and bottleneck", "",
       with_blocks(base, V::HybridOutside, V::HybridOutside, V::PureConv)},
      {"hybrid inside (MM-UNet)", "SSM inside the residual branch in encoder and bottleneck",
       "+0.5% over hybrid outside", with_blocks(base, V::HybridInside, V::HybridInside, V::PureConv)},
      {"SSM only inside", "residual SSM without convolutions in encoder and bottleneck", "",
       with_blocks(base, V::SsmOnlyInside, V::SsmOnlyInside, V::PureConv)},
  };
}

std::vector<AblationRow> run_ablation(const std::vector<AblationSpec>& specs, const Dataset& data,
                                      const TrainConfig& train,
                                      const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (const auto& spec : specs) {
    const auto t0 = std::chrono::steady_clock::now();
    Model model(spec.model, train.seed);
    const auto log = mmunet::train(model, data, train);
    AblationRow r;
    r.spec = spec;
    r.val_dice = log.back().val_dice;
    r.val_dice_mean = log.back().val_dice_mean;
    r.final_train_loss = log.back().train_loss;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_row) on_row(r);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "label,description,enc,bottleneck,dec,scan_orders,val_dice_mean";
  const std::size_t K = rows.empty() ? 0 : rows.front().val_dice.size();
  for (std::size_t k = 0; k < K; ++k) out += ",dice_" + std::to_string(k);
  out += ",final_train_loss,reference\n";
  for (const auto& r : rows) {
    const auto& m = r.spec.model;
    out += csv_field(r.spec.label) + "," + csv_field(r.spec.description) + "," + variant_name(m.enc.variant) + "," +
           variant_name(m.bottleneck.variant) + "," + variant_name(m.dec.variant) + "," +
           csv_field(m.enc.ssm.orders.name) + "," + format_real(r.val_dice_mean, 10);
    for (Real d : r.val_dice) out += "," + format_real(d, 10);
    out += "," + format_real(r.final_train_loss, 10) + "," + csv_field(r.spec.reference) + "\n";
  }
  return out;
}

std::string ablation_timing_csv(const std::vector<AblationRow>& rows) {
  std::string out = "label,seconds\n";
  for (const auto& r : rows) out += csv_field(r.spec.label) + "," + format_real(r.seconds, 6) + "\n";
  return out;
}

}  // namespace mmunet::experiments
