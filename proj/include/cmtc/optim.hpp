#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cmtc/nn.hpp"

namespace cmtc {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Learning-rate schedule: lr is multiplied by decay_factor at every
  // decay_interval epoch boundary. decay_interval == 0 disables the schedule.
  double decay_factor = 1.0;
  std::int64_t decay_interval = 0;
};

/// Adam with bias correction over a fixed parameter list. Parameter tensors
/// are replaced (not mutated) on each step; gradients are read from the
/// tensors' grad slots, a missing grad counts as zero.
template <typename T>
class Adam {
 public:
  Adam() = default;

  Adam(nn::ParamMap<T> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    slots_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto n = static_cast<std::size_t>(params_[i].tensor->numel());
      slots_[i].m.assign(n, T(0));
      slots_[i].v.assign(n, T(0));
    }
  }

  const nn::ParamMap<T>& params() const { return params_; }
  std::int64_t step_count() const { return step_; }
  std::int64_t epoch() const { return epoch_; }
  const AdamConfig& config() const { return cfg_; }

  void set_epoch(std::int64_t e) { epoch_ = e; }

  double effective_lr() const {
    double lr = cfg_.lr;
    if (cfg_.decay_interval > 0) {
      const auto boundaries = epoch_ / cfg_.decay_interval;
      for (std::int64_t i = 0; i < boundaries; ++i) lr *= cfg_.decay_factor;
    }
    return lr;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

  /// Applies one update. Rejects the whole step if any gradient is not
  /// finite, leaving parameters and moments untouched.
  void step() {
    for (const auto& p : params_) {
      for (const T g : p.tensor->grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw ValueError("adam_step: non-finite gradient in '" + p.path + "' at step " +
                           std::to_string(step_ + 1));
        }
      }
    }
    ++step_;
    const double lr = effective_lr();
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& t = *params_[i].tensor;
      auto& slot = slots_[i];
      const auto g = t.grad();
      const auto x = t.values();
      std::vector<T> nx(x.begin(), x.end());
      const T b1 = static_cast<T>(cfg_.beta1);
      const T b2 = static_cast<T>(cfg_.beta2);
      for (std::size_t k = 0; k < nx.size(); ++k) {
        const T gk = g.empty() ? T(0) : g[k];
        slot.m[k] = b1 * slot.m[k] + (T(1) - b1) * gk;
        slot.v[k] = b2 * slot.v[k] + (T(1) - b2) * gk * gk;
        const double mhat = static_cast<double>(slot.m[k]) / bc1;
        const double vhat = static_cast<double>(slot.v[k]) / bc2;
        nx[k] = static_cast<T>(static_cast<double>(nx[k]) -
                               lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
      Tensor<T> fresh = Tensor<T>::from(t.shape(), std::move(nx));
      fresh.set_requires_grad(true);
      t = fresh;
    }
  }

  /// Moment buffers and the step counter, for checkpointing.
  void collect_state(const std::string& prefix, nn::BufferMap<T>& out) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.push_back({prefix + ".m." + params_[i].path, &slots_[i].m});
      out.push_back({prefix + ".v." + params_[i].path, &slots_[i].v});
    }
  }

  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  struct Slot {
    std::vector<T> m, v;
  };

  nn::ParamMap<T> params_;
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  std::int64_t step_ = 0;
  std::int64_t epoch_ = 0;
};

}  // namespace cmtc
