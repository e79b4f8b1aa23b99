#include "emochat/optim.hpp"

#include <cmath>

namespace emochat {

Adam::Adam(ParamRefs params, AdamConfig cfg) : cfg_(cfg) {
  slots_.reserve(params.size());
  for (auto& [name, tensor] : params) {
    Slot s;
    s.name = name;
    s.param = tensor;
    s.m.assign(tensor->numel(), Real(0));
    s.v.assign(tensor->numel(), Real(0));
    slots_.push_back(std::move(s));
  }
}

void Adam::step() {
  for (const Slot& s : slots_) {
    if (!s.param->has_grad()) continue;
    for (Real g : s.param->grad())
      if (!std::isfinite(g))
        fail("optimizer_step: non-finite gradient in parameter '" + s.name +
             "', step aborted");
  }
  ++t_;
  const Real bc1 = Real(1) - std::pow(cfg_.beta1, Real(t_));
  const Real bc2 = Real(1) - std::pow(cfg_.beta2, Real(t_));
  for (Slot& s : slots_) {
    if (!s.param->has_grad()) continue;
    const auto& g = s.param->grad();
    Real* p = s.param->data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (Real(1) - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (Real(1) - cfg_.beta2) * g[i] * g[i];
      const Real mhat = s.m[i] / bc1;
      const Real vhat = s.v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (Slot& s : slots_) s.param->zero_grad();
}

}  // namespace emochat
