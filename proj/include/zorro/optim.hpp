#pragma once

#include <cmath>
#include <map>
#include <string>

#include "zorro/array.hpp"
#include "zorro/common.hpp"
#include "zorro/params.hpp"

namespace zorro {

// Linear warmup to lr_max, then cosine decay to lr_min over the remaining
// steps. step is 0-based; lr(t) = lr_max * (t+1)/warmup during warmup.
struct CosineSchedule {
  double lr_max = 1e-3;
  double lr_min = 0.0;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  double at(std::size_t step) const {
    if (step < warmup_steps)
      return lr_max * static_cast<double>(step + 1) /
             static_cast<double>(warmup_steps);
    const std::size_t span = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(span);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * progress));
  }
};

// Adam with optional additive L2 (g += wd * p before the moment updates).
// Moment state is exposed for checkpointing so a resumed run continues
// bit-identically.
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void step(ParamStore& params, const std::map<std::string, Array>& grads,
            double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      Array& p = params.at(name);
      require(p.same_shape(g), "adam: grad for ", name, " is ", shape_str(g),
              ", param is ", shape_str(p));
      Slot& s = state_[name];
      if (s.m.numel() == 0) {
        s.m = Array::zeros(p.shape);
        s.v = Array::zeros(p.shape);
      }
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double gi = g.data[i] + weight_decay * p.data[i];
        s.m.data[i] = beta1 * s.m.data[i] + (1.0 - beta1) * gi;
        s.v.data[i] = beta2 * s.v.data[i] + (1.0 - beta2) * gi * gi;
        const double mhat = s.m.data[i] / bc1;
        const double vhat = s.v.data[i] / bc2;
        p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

  std::map<std::string, Array> export_state() const {
    std::map<std::string, Array> out;
    for (const auto& [name, s] : state_) {
      out["opt.m." + name] = s.m;
      out["opt.v." + name] = s.v;
    }
    out["opt.t"] = Array::scalar(static_cast<double>(t_));
    return out;
  }

  void import_state(const std::map<std::string, Array>& st) {
    state_.clear();
    t_ = 0;
    for (const auto& [name, a] : st) {
      if (name == "opt.t") {
        t_ = static_cast<std::size_t>(a.data.at(0));
      } else if (name.rfind("opt.m.", 0) == 0) {
        state_[name.substr(6)].m = a;
      } else if (name.rfind("opt.v.", 0) == 0) {
        state_[name.substr(6)].v = a;
      } else {
        fail("adam: unrecognized optimizer state entry: ", name);
      }
    }
  }

 private:
  struct Slot {
    Array m, v;
  };
  std::map<std::string, Slot> state_;
  std::size_t t_ = 0;
};

// SGD with classical momentum: v = mu * v + g; p -= lr * v.
class SgdMomentum {
 public:
  double momentum = 0.9;
  double weight_decay = 0.0;

  void step(ParamStore& params, const std::map<std::string, Array>& grads,
            double lr) {
    for (const auto& [name, g] : grads) {
      Array& p = params.at(name);
      require(p.same_shape(g), "sgd: grad for ", name, " is ", shape_str(g),
              ", param is ", shape_str(p));
      Array& v = velocity_[name];
      if (v.numel() == 0) v = Array::zeros(p.shape);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double gi = g.data[i] + weight_decay * p.data[i];
        v.data[i] = momentum * v.data[i] + gi;
        p.data[i] -= lr * v.data[i];
      }
    }
  }

  std::map<std::string, Array> export_state() const {
    std::map<std::string, Array> out;
    for (const auto& [name, v] : velocity_) out["opt.vel." + name] = v;
    return out;
  }

  void import_state(const std::map<std::string, Array>& st) {
    velocity_.clear();
    for (const auto& [name, a] : st) {
      if (name.rfind("opt.vel.", 0) == 0) {
        velocity_[name.substr(8)] = a;
      } else {
        fail("sgd: unrecognized optimizer state entry: ", name);
      }
    }
  }

 private:
  std::map<std::string, Array> velocity_;
};

}  // namespace zorro
