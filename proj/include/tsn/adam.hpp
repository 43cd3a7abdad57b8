#pragma once

#include <cmath>
#include <vector>

#include "tsn/tensor.hpp"

namespace tsn {

// Adam over a fixed slot list. One instance per training session; moment
// buffers start at zero.
class Adam {
 public:
  struct Slot {
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
  };

  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add_slot(Tensor* value, Tensor* grad) {
    require(value->numel() == grad->numel(), "adam: value/grad shape mismatch");
    slots_.push_back({value, grad});
    m_.emplace_back(value->data.size(), 0.0);
    v_.emplace_back(value->data.size(), 0.0);
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t s = 0; s < slots_.size(); ++s) {
      double* w = slots_[s].value->ptr();
      const double* g = slots_[s].grad->ptr();
      double* m = m_[s].data();
      double* v = v_[s].data();
      const size_t n = m_[s].size();
      for (size_t i = 0; i < n; ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Slot> slots_;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace tsn
