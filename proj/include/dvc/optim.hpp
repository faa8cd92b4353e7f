#pragma once

#include <unordered_map>

#include "dvc/autodiff.hpp"

namespace dvc {

/// Adaptive-moment optimizer over every parameter of a ParamSet.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ad::ParamSet& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long long steps() const { return t_; }

 private:
  struct Moments {
    ad::Mat m;
    ad::Mat v;
  };
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::unordered_map<const ad::Parameter*, Moments> state_;
};

}  // namespace dvc
