#include "abtts/optim.hpp"

#include <algorithm>

#include "abtts/error.hpp"

namespace abtts::optim {

void ranger_step(const nn::ParamList& params, RangerState& state, const OptimizerConfig& cfg, double lr) {
  if (cfg.lookahead_k < 1 || !(cfg.lookahead_alpha > 0 && cfg.lookahead_alpha <= 1))
    throw ConfigError("lookahead needs k >= 1 and 0 < alpha <= 1");
  for (const auto& [name, p] : params)
    for (double g : p.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + name);

  const long t = ++state.step;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double b2t = std::pow(b2, static_cast<double>(t));
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
  const bool adaptive = rho_t > cfg.sma_threshold;
  const double rect =
      adaptive ? std::sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t)) : 0.0;
  const double bc2 = 1.0 - b2t;
  const bool sync = t % cfg.lookahead_k == 0;

  for (const auto& [name, p] : params) {
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& s = state.params[name];
    if (s.m.empty()) {
      s.m.assign(data.size(), 0.0);
      s.v.assign(data.size(), 0.0);
      s.slow.assign(data.begin(), data.end());
    }
    if (s.m.size() != data.size()) throw ConfigError("optimizer state for " + name + " has the wrong size");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      s.m[i] = b1 * s.m[i] + (1 - b1) * g;
      s.v[i] = b2 * s.v[i] + (1 - b2) * g * g;
      const double mhat = s.m[i] / bc1;
      if (adaptive)
        data[i] -= lr * rect * mhat / (std::sqrt(s.v[i] / bc2) + cfg.epsilon);
      else
        data[i] -= lr * mhat;
    }
    if (sync) {
      for (std::size_t i = 0; i < data.size(); ++i) {
        s.slow[i] += cfg.lookahead_alpha * (data[i] - s.slow[i]);
        data[i] = s.slow[i];
      }
    }
  }
}

double lr_at(long step, const OptimizerConfig& cfg) {
  if (cfg.warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (step <= cfg.warmup_steps) return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
  return cfg.peak_lr * std::pow(cfg.decay_rate, static_cast<double>(step - cfg.warmup_steps));
}

double clip_grad_norm(const nn::ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [name, p] : params) {
      Tensor t = p;
      for (double& g : t.mutable_grad()) g *= s;
    }
  }
  return norm;
}

void RangerState::export_to(nn::ParamList& out) const {
  out.emplace_back("opt.step", Tensor::scalar(static_cast<double>(step)));
  for (const auto& [name, s] : params) {
    const int n = static_cast<int>(s.m.size());
    out.emplace_back("opt.m." + name, Tensor::from({n}, s.m));
    out.emplace_back("opt.v." + name, Tensor::from({n}, s.v));
    out.emplace_back("opt.slow." + name, Tensor::from({n}, s.slow));
  }
}

RangerState RangerState::import_from(const Archive& archive) {
  RangerState st;
  if (!archive.has("opt.step")) return st;
  st.step = static_cast<long>(archive.at("opt.step").item());
  const std::string pm = "opt.m.";
  for (const auto& [key, t] : archive.tensors) {
    if (key.rfind(pm, 0) != 0) continue;
    const std::string name = key.substr(pm.size());
    auto& s = st.params[name];
    s.m = t.values();
    s.v = archive.at("opt.v." + name).values();
    s.slow = archive.at("opt.slow." + name).values();
  }
  return st;
}

}  // namespace abtts::optim
