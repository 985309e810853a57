#pragma once

// Adam with bias correction.  A step first validates every gradient; any
// non-finite entry rejects the whole step and leaves parameters, moments and
// the step counter untouched.

#include <string>
#include <vector>

#include "elfvc/autodiff.hpp"

namespace elfvc {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg);

  // Applies one update from the gradients currently stored on the params.
  // Returns false (and fills *error) on non-finite gradients.
  bool step(std::string* error = nullptr);

  int64_t step_count() const { return step_; }
  AdamConfig& config() { return cfg_; }
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  int64_t step_ = 0;
};

}  // namespace elfvc
