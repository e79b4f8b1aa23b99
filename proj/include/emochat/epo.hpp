#pragma once

#include <string>
#include <vector>

#include "emochat/counter.hpp"
#include "emochat/lm.hpp"
#include "emochat/optim.hpp"

namespace emochat {

struct EpoConfig {
  Real beta = Real(2.0);       // reward scale
  Real gamma = Real(0.5);      // target reward margin
  Real lambda_ar = Real(1.0);  // weight of the autoregressive loss
  Real lr = Real(1e-5);
  int batch = 16;
  int epochs = 3;
  int min_steps = 200;
  std::uint64_t seed = 5;
  // Abort when the AR loss rises this factor above its pre-training value.
  Real divergence_factor = Real(1.5);

  void validate() const;
};

// -ln(sigmoid(margin)); scalar form shared with the tensor path.
double bt_loss(double margin);

// Length-normalized reward: (beta/|y|) sum_i log p(y_i | x, y_<i). Always
// <= 0 for beta > 0.
Tensor epo_reward(LmModel& lm, const MixedInput& prompt,
                  const std::vector<int>& y, Real beta);

// -log sigmoid(r(x,y_a) - r(x,y_i) - gamma), differentiable in the model.
Tensor epo_loss(LmModel& lm, const MixedInput& prompt,
                const std::vector<int>& y_a, const std::vector<int>& y_i,
                Real beta, Real gamma);

// A preference pair with its prompt already resolved (memories computed).
struct EpoItem {
  MixedInput prompt;
  std::vector<int> y_a;
  std::vector<int> y_i;
};

struct EpoStepMetrics {
  double epo_loss = 0;
  double ar_loss = 0;
  double margin_mean = 0;  // mean r_a - r_i
  double win_frac = 0;     // fraction with r_a > r_i + gamma
};

// total = mean(epo_loss) + lambda_ar * mean(lm_loss on y_a); one Adam step.
// A non-finite loss aborts before the optimizer touches anything.
EpoStepMetrics epo_step(LmModel& lm, const std::vector<const EpoItem*>& batch,
                        Adam& adam, const EpoConfig& config);

// Reward margins over a whole item set without training (evaluation mode).
EpoStepMetrics epo_eval(LmModel& lm, const std::vector<EpoItem>& items,
                        const EpoConfig& config);

}  // namespace emochat
