#pragma once

#include <cstdint>
#include <vector>

#include "emochat/tensor.hpp"

namespace emochat {

struct AdamConfig {
  Real lr = Real(3e-4);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

// Adam with bias correction. step() validates every gradient before touching
// any parameter: a non-finite gradient aborts the whole step and names the
// offending parameter. Gradients are zeroed after a successful step.
class Adam {
 public:
  Adam(ParamRefs params, AdamConfig cfg);

  void step();
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    std::string name;
    Tensor* param;
    std::vector<Real> m, v;
  };
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace emochat
