#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmunet/network.hpp"
#include "mmunet/synthetic.hpp"
#include "mmunet/training.hpp"

namespace mmunet::experiments {

/// One configuration of an ablation table.
struct AblationSpec {
  std::string label;        // B1..B9 or an architecture name
  std::string description;
  std::string reference;    // published value or note, empty if none
  ModelConfig model;
};

struct AblationRow {
  AblationSpec spec;
  std::vector<Real> val_dice;  // per class, class 0 included
  Real val_dice_mean = 0;      // mean over foreground classes
  Real final_train_loss = 0;
  double seconds = 0;          // wall clock, kept out of the deterministic table
};

/// B1..B9: the base model with every SSM unit using the preset's orders.
std::vector<AblationSpec> scan_ablation_specs(const ModelConfig& base);

/// Named encoder / bottleneck / decoder block placements.
std::vector<AblationSpec> arch_ablation_specs(const ModelConfig& base);

/// Trains every spec from the same seed and budget, in order.
std::vector<AblationRow> run_ablation(const std::vector<AblationSpec>& specs, const Dataset& data,
                                      const TrainConfig& train,
                                      const std::function<void(const AblationRow&)>& on_row = {});

/// label,description,enc,bottleneck,dec,scan_orders,val_dice_mean,dice_k...,final_train_loss,reference
std::string ablation_csv(const std::vector<AblationRow>& rows);
/// label,seconds
std::string ablation_timing_csv(const std::vector<AblationRow>& rows);

}  // namespace mmunet::experiments
