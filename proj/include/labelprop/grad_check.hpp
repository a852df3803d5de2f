#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "labelprop/param_store.hpp"

namespace labelprop {

struct GradCheckConfig {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-7;
  // Probe every coordinate up to this many, then a deterministic random
  // subsample of this size (spec floor for large stores is 200).
  int max_probes = 400;
  std::uint64_t probe_seed = 0;
};

struct ParamCheck {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int probes = 0;
  bool pass = true;
};

// A differentiable objective: returns the scalar value; when want_grad is
// set it must also populate store gradients (overwriting, not accumulating).
using LossFn = std::function<double(ParamStore&, bool want_grad)>;

// Central finite differences against the analytic gradient. A coordinate
// fails when |analytic - numeric| exceeds abs_floor AND the relative error
// |a - n| / max(|a|, |n|) exceeds rel_tol.
inline GradCheckReport finite_diff_check(const LossFn& f, ParamStore& store,
                                         const GradCheckConfig& cfg = {}) {
  if (!(cfg.step > 0.0)) throw InvalidConfigError("finite difference step must be > 0");

  const double base = f(store, true);
  require_finite(base, "finite_diff_check objective");
  std::vector<std::vector<double>> analytic;
  analytic.reserve(store.entries().size());
  for (const auto& t : store.entries()) analytic.push_back(t.grad);

  // Flat coordinate index -> (tensor, offset).
  struct Coord {
    int tensor;
    int offset;
  };
  std::vector<Coord> coords;
  coords.reserve(store.total_size());
  for (int ti = 0; ti < static_cast<int>(store.entries().size()); ++ti) {
    for (int o = 0; o < store.entries()[ti].size(); ++o) coords.push_back({ti, o});
  }
  if (static_cast<int>(coords.size()) > cfg.max_probes) {
    Rng rng(cfg.probe_seed);
    // Partial Fisher-Yates: the first max_probes entries become the sample.
    for (int i = 0; i < cfg.max_probes; ++i) {
      const std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(cfg.max_probes);
  }

  GradCheckReport report;
  report.params.resize(store.entries().size());
  for (std::size_t ti = 0; ti < store.entries().size(); ++ti) {
    report.params[ti].name = store.entries()[ti].name;
  }

  for (const auto& c : coords) {
    Tensor& t = store.entries()[c.tensor];
    const double saved = t.value[c.offset];
    t.value[c.offset] = saved + cfg.step;
    const double up = f(store, false);
    t.value[c.offset] = saved - cfg.step;
    const double down = f(store, false);
    t.value[c.offset] = saved;
    require_finite(up, "finite_diff_check probe");
    require_finite(down, "finite_diff_check probe");

    const double numeric = (up - down) / (2.0 * cfg.step);
    const double a = analytic[c.tensor][c.offset];
    const double abs_err = std::fabs(a - numeric);
    const double denom = std::max(std::fabs(a), std::fabs(numeric));
    const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;

    ParamCheck& pc = report.params[c.tensor];
    pc.max_abs_err = std::max(pc.max_abs_err, abs_err);
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    if (abs_err > cfg.abs_floor) {
      pc.max_rel_err = std::max(pc.max_rel_err, rel_err);
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
      if (rel_err > cfg.rel_tol) pc.pass = false;
    }
    ++report.probes;
  }

  report.pass = true;
  for (const auto& pc : report.params) report.pass = report.pass && pc.pass;

  // Restore the analytic gradients the probes clobbered.
  for (std::size_t ti = 0; ti < store.entries().size(); ++ti) {
    store.entries()[ti].grad = analytic[ti];
  }
  return report;
}

}  // namespace labelprop
