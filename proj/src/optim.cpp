#include "dvc/optim.hpp"

#include <cmath>

namespace dvc {

void Adam::step(ad::ParamSet& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& p : params) {
    auto& st = state_[p.get()];
    if (st.m.size() == 0) {
      st.m = ad::Mat::Zero(p->value.rows(), p->value.cols());
      st.v = ad::Mat::Zero(p->value.rows(), p->value.cols());
    }
    st.m = beta1_ * st.m + (1.0 - beta1_) * p->grad;
    st.v = beta2_ * st.v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= lr_ * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + eps_);
  }
}

}  // namespace dvc
