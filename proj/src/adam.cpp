#include "elfvc/adam.hpp"

#include <cmath>

namespace elfvc {

Adam::Adam(std::vector<Var> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Var& p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape));
    v_.push_back(Tensor::zeros(p->value.shape));
  }
}

bool Adam::step(std::string* error) {
  // Validate first so a poisoned gradient cannot half-apply an update.
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i]->has_grad) continue;
    if (!params_[i]->grad.all_finite()) {
      if (error)
        *error = "non-finite gradient on parameter " + std::to_string(i) +
                 " (step rejected)";
      return false;
    }
  }
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    const int64_t n = p->value.numel();
    const double* g = p->has_grad ? p->grad.data.data() : nullptr;
    double* m = m_[i].data.data();
    double* v = v_[i].data.data();
    double* w = p->value.data.data();
    for (int64_t j = 0; j < n; ++j) {
      double gj = g ? g[j] : 0.0;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return true;
}

}  // namespace elfvc
