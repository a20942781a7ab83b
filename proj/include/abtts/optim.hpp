#pragma once

// Ranger: rectified Adam inner steps wrapped in Lookahead slow weights, plus
// the warmup / exponential-decay learning-rate schedule.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "abtts/archive.hpp"
#include "abtts/nn.hpp"

namespace abtts::optim {

struct OptimizerConfig {
  int lookahead_k = 6;
  double lookahead_alpha = 0.5;
  double epsilon = 1e-5;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double sma_threshold = 5.0;  // below this the step is plain momentum SGD
  double peak_lr = 1e-3;
  int warmup_steps = 4000;
  double decay_rate = std::pow(0.5, 1.0 / 20000.0);
};

struct ParamState {
  std::vector<double> m, v, slow;
};

struct RangerState {
  long step = 0;
  std::map<std::string, ParamState> params;

  /// Adds "opt.*" tensors describing this state to `out` for checkpointing.
  void export_to(nn::ParamList& out) const;
  static RangerState import_from(const Archive& archive);
};

/// One inner step on every parameter's current gradient. Parameters without
/// a gradient buffer count as having zero gradient.
void ranger_step(const nn::ParamList& params, RangerState& state, const OptimizerConfig& cfg, double lr);

/// Linear warmup to peak_lr, then peak_lr * decay_rate^(step - warmup).
double lr_at(long step, const OptimizerConfig& cfg);

/// Scales all gradients so their global L2 norm is at most max_norm; returns
/// the norm before scaling.
double clip_grad_norm(const nn::ParamList& params, double max_norm);

}  // namespace abtts::optim
