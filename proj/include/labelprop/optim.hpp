#pragma once

#include <cmath>
#include <string>

#include "labelprop/param_store.hpp"

namespace labelprop {

struct OptimizerConfig {
  enum class Kind { Adam, Sgd };
  Kind kind = Kind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw InvalidConfigError("learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw InvalidConfigError("adam betas must be in [0,1)");
  }
};

inline void check_grads_finite(const ParamStore& store) {
  for (const auto& t : store.entries()) {
    for (double g : t.grad) {
      if (!std::isfinite(g))
        throw NonFiniteValueError("non-finite gradient in " + t.name);
    }
  }
}

inline void sgd_step(ParamStore& store, double lr) {
  if (!(lr > 0.0)) throw InvalidConfigError("learning rate must be > 0");
  check_grads_finite(store);
  for (auto& t : store.entries()) {
    for (int i = 0; i < t.size(); ++i) t.value[i] -= lr * t.grad[i];
  }
}

// Bias-corrected Adam; `t` is the 1-based step count. Moment buffers live in
// the store so an update sequence is a deterministic function of
// (initial store, gradient sequence, config).
inline void adam_step(ParamStore& store, double lr, double beta1, double beta2,
                      double eps, long t) {
  if (!(lr > 0.0)) throw InvalidConfigError("learning rate must be > 0");
  if (t < 1) throw InvalidConfigError("adam step index must be >= 1");
  check_grads_finite(store);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& tensor : store.entries()) {
    if (tensor.adam_m.empty()) {
      tensor.adam_m.assign(tensor.size(), 0.0);
      tensor.adam_v.assign(tensor.size(), 0.0);
    }
    for (int i = 0; i < tensor.size(); ++i) {
      const double g = tensor.grad[i];
      tensor.adam_m[i] = beta1 * tensor.adam_m[i] + (1.0 - beta1) * g;
      tensor.adam_v[i] = beta2 * tensor.adam_v[i] + (1.0 - beta2) * g * g;
      const double mhat = tensor.adam_m[i] / bc1;
      const double vhat = tensor.adam_v[i] / bc2;
      tensor.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

inline void adam_step(ParamStore& store, const OptimizerConfig& cfg, long t) {
  adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, t);
}

inline void optimizer_step(ParamStore& store, const OptimizerConfig& cfg, long t) {
  if (cfg.kind == OptimizerConfig::Kind::Sgd) {
    sgd_step(store, cfg.lr);
  } else {
    adam_step(store, cfg, t);
  }
}

}  // namespace labelprop
