#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "defo/protocols/state.hpp"

namespace defo {

inline constexpr std::size_t kAllowedShots[] = {1, 2, 4, 8, 16};

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  double momentum = 0.9;
  double weight_decay = 0.01;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  std::optional<std::size_t> shots;
  bool augmentation = false;
  bool cosine_schedule = false;

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (batch_size == 0) out.push_back("train.batch_size must be positive");
    if (!(learning_rate >= 0.0)) out.push_back("train.learning_rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) out.push_back("train.momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) out.push_back("train.weight_decay must be non-negative");
    if (epochs == 0) out.push_back("train.epochs must be positive");
    if (shots) {
      bool ok = false;
      for (auto s : kAllowedShots) ok = ok || s == *shots;
      if (!ok) out.push_back("train.shots must be one of 1, 2, 4, 8, 16");
    }
    return out;
  }

  /// Learning rate at `step` of `total` steps.
  double rate_at(std::size_t step, std::size_t total) const {
    if (!cosine_schedule || total == 0) return learning_rate;
    return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * double(step) / double(total)));
  }
};

/// Momentum buffers keyed by parameter name. Frozen entries stay zero.
struct OptimizerState {
  std::map<std::string, Tensor> velocity;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// v ← μ·v + g + λ·p; p ← p − lr·v, on trainable entries only.
inline void sgd_step(std::vector<ParamRef>& params, OptimizerState& state, const TrainConfig& cfg,
                     double lr) {
  for (auto& p : params) {
    Tensor& t = *p.tensor;
    if (t.grad.size() != t.size()) throw numeric_error("sgd_step: no gradient for " + p.name);
    auto [it, fresh] = state.velocity.try_emplace(p.name, Tensor(t.shape()));
    Tensor& v = it->second;
    if (v.shape() != t.shape()) {
      throw dimension_error("sgd_step: velocity for " + p.name + " has shape " +
                            shape_str(v.shape()));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!p.mask.empty() && !p.mask[i]) continue;
      v[i] = cfg.momentum * v[i] + t.grad[i] + cfg.weight_decay * t[i];
      t[i] -= lr * v[i];
    }
  }
}

inline void sgd_step(std::vector<ParamRef>& params, OptimizerState& state, const TrainConfig& cfg) {
  sgd_step(params, state, cfg, cfg.learning_rate);
}

}  // namespace defo
