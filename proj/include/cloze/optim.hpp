#pragma once

// Named parameter registry plus AdamW with decoupled weight decay and a
// cosine-annealed learning-rate schedule.

#include <unordered_map>

#include "cloze/tensor.hpp"

namespace cloze {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw IoError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back(Parameter{name, t, false});
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("unknown parameter: " + name);
    return params_[it->second];
  }

  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("unknown parameter: " + name);
    return params_[it->second];
  }

  // Freezes every parameter whose name starts with `prefix`; returns count.
  int freeze_prefix(const std::string& prefix, bool frozen = true) {
    int hit = 0;
    for (auto& p : params_)
      if (p.name.rfind(prefix, 0) == 0) {
        p.frozen = frozen;
        ++hit;
      }
    return hit;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  size_t size() const { return params_.size(); }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  int64_t numel() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
};

inline double cosine_anneal(double lr_max, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return lr_max;
  double t = double(std::min(step, total_steps)) / double(total_steps);
  return 0.5 * lr_max * (1.0 + std::cos(t * 3.14159265358979323846));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  // One update over every unfrozen parameter. Throws MissingGradError if an
  // unfrozen parameter was never reached by backward().
  void step(ParameterStore& store, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (auto& p : store.params()) {
      if (p.frozen) continue;
      if (!p.tensor.has_grad())
        throw MissingGradError("AdamW: parameter '" + p.name + "' has no gradient");
      auto& slot = moments_[p.name];
      auto& w = p.tensor.values();
      auto& g = p.tensor.grad();
      if (slot.m.empty()) {
        slot.m.assign(w.size(), 0.0f);
        slot.v.assign(w.size(), 0.0f);
      }
      for (size_t i = 0; i < w.size(); ++i) {
        double gi = g[i];
        slot.m[i] = float(cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * gi);
        slot.v[i] = float(cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * gi * gi);
        double mhat = slot.m[i] / bc1;
        double vhat = slot.v[i] / bc2;
        double upd = mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i];
        w[i] = float(w[i] - lr * upd);
      }
    }
  }

  int64_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  struct Slot {
    std::vector<float> m, v;
  };
  AdamWConfig cfg_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Slot> moments_;
};

}  // namespace cloze
