#pragma once

#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "labelprop/common.hpp"
#include "labelprop/linalg.hpp"

namespace labelprop {

enum class InitKind { Zeros, Uniform, ScaledUniform };

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  InitKind init = InitKind::Zeros;
  double lo = 0.0;  // Uniform only
  double hi = 0.0;
};

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> adam_m;  // allocated on first adam step
  std::vector<double> adam_v;

  int size() const {
    int s = 1;
    for (int d : shape) s *= d;
    return s;
  }
  int rows() const { return shape.size() == 1 ? 1 : shape[0]; }
  int cols() const { return shape.size() == 1 ? shape[0] : shape[1]; }

  MatView mat() { return {value.data(), rows(), cols()}; }
  CMatView mat() const { return {value.data(), rows(), cols()}; }
  MatView grad_mat() { return {grad.data(), rows(), cols()}; }
};

// Named parameter tensors with parallel gradient buffers. Entry order is
// creation order, and every consumer (initialization, optimizer steps,
// serialization, gradient checks) walks entries in that order, which is
// what makes training runs bit-reproducible for a fixed seed.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed) : rng_seed_(seed) {}

  std::uint64_t rng_seed() const { return rng_seed_; }

  Tensor& add(const TensorSpec& spec, Rng& rng) {
    if (index_.count(spec.name)) throw DuplicateNameError(spec.name);
    Tensor t;
    t.name = spec.name;
    t.shape = spec.shape;
    for (int d : t.shape) {
      if (d < 1) throw InvalidConfigError("non-positive tensor dim in " + spec.name);
    }
    const int n = t.size();
    t.value.assign(n, 0.0);
    t.grad.assign(n, 0.0);
    switch (spec.init) {
      case InitKind::Zeros:
        break;
      case InitKind::Uniform:
        for (double& x : t.value) x = rng.uniform(spec.lo, spec.hi);
        break;
      case InitKind::ScaledUniform: {
        // Glorot-style bound from the trailing matrix dims.
        const int fan_out = t.shape.size() >= 2 ? t.shape[t.shape.size() - 2] : t.shape[0];
        const int fan_in = t.shape.back();
        const double c = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& x : t.value) x = rng.uniform(-c, c);
        break;
      }
    }
    index_.emplace(spec.name, static_cast<int>(entries_.size()));
    entries_.push_back(std::move(t));
    return entries_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UnknownLabelError("parameter " + name);
    return entries_[it->second];
  }
  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UnknownLabelError("parameter " + name);
    return entries_[it->second];
  }

  std::vector<Tensor>& entries() { return entries_; }
  const std::vector<Tensor>& entries() const { return entries_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& t : entries_) n += static_cast<std::size_t>(t.size());
    return n;
  }

  void zero_grad() {
    for (auto& t : entries_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
  }

  void check_values_finite() const {
    for (const auto& t : entries_) {
      for (double x : t.value) {
        if (!std::isfinite(x))
          throw NonFiniteValueError("non-finite parameter value in " + t.name);
      }
    }
  }

  bool values_equal(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != o.entries_[i].name) return false;
      if (entries_[i].shape != o.entries_[i].shape) return false;
      if (entries_[i].value != o.entries_[i].value) return false;
    }
    return true;
  }

 private:
  std::uint64_t rng_seed_ = 0;
  std::vector<Tensor> entries_;
  std::unordered_map<std::string, int> index_;
};

inline ParamStore init_params(const std::vector<TensorSpec>& specs, std::uint64_t seed) {
  ParamStore store(seed);
  Rng rng(seed);
  for (const auto& s : specs) store.add(s, rng);
  return store;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON listing every entry (name, shape, row-major
// values) plus a caller-supplied hyperparameter block. nlohmann/json emits
// shortest-exact decimals, so the JSON path round-trips doubles bit-exactly.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const ParamStore& store,
                                         const nlohmann::json& hyper) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& t : store.entries()) {
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"values", t.value}});
  }
  return {{"format_version", kCheckpointVersion},
          {"rng_seed", store.rng_seed()},
          {"hyper", hyper},
          {"entries", entries}};
}

inline ParamStore checkpoint_from_json(const nlohmann::json& j,
                                       nlohmann::json* hyper_out = nullptr) {
  if (j.at("format_version").get<int>() != kCheckpointVersion)
    throw ParseError("unsupported checkpoint format_version");
  ParamStore store(j.at("rng_seed").get<std::uint64_t>());
  Rng rng(0);
  for (const auto& je : j.at("entries")) {
    TensorSpec spec;
    spec.name = je.at("name").get<std::string>();
    spec.shape = je.at("shape").get<std::vector<int>>();
    spec.init = InitKind::Zeros;
    Tensor& t = store.add(spec, rng);
    auto values = je.at("values").get<std::vector<double>>();
    if (static_cast<int>(values.size()) != t.size())
      throw DimensionMismatchError("checkpoint entry size mismatch for " + spec.name);
    t.value = std::move(values);
  }
  store.check_values_finite();
  if (hyper_out) *hyper_out = j.at("hyper");
  return store;
}

inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const nlohmann::json& hyper) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << checkpoint_to_json(store, hyper).dump(2) << '\n';
}

inline ParamStore load_checkpoint(const std::string& path,
                                  nlohmann::json* hyper_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError("bad checkpoint json in " + path + ": " + e.what());
  }
  return checkpoint_from_json(j, hyper_out);
}

}  // namespace labelprop
