#include "emochat/epo.hpp"

#include <cmath>

namespace emochat {

void EpoConfig::validate() const {
  if (!(beta > 0)) fail_arg("epo: beta must be > 0");
  if (!(gamma >= 0)) fail_arg("epo: gamma must be >= 0");
  if (!(lambda_ar >= 0)) fail_arg("epo: lambda_ar must be >= 0");
}

double bt_loss(double margin) {
  // -ln sigmoid(m) = softplus(-m)
  const double x = -margin;
  return x > 30 ? x : std::log1p(std::exp(x));
}

Tensor epo_reward(LmModel& lm, const MixedInput& prompt,
                  const std::vector<int>& y, Real beta) {
  if (y.empty()) fail_arg("epo_reward: empty target sequence");
  return scale(lm.avg_logprob(prompt, y), beta);
}

Tensor epo_loss(LmModel& lm, const MixedInput& prompt,
                const std::vector<int>& y_a, const std::vector<int>& y_i,
                Real beta, Real gamma) {
  if (y_a == y_i) fail_arg("epo_loss: y_a equals y_i");
  Tensor r_a = epo_reward(lm, prompt, y_a, beta);
  Tensor r_i = epo_reward(lm, prompt, y_i, beta);
  Tensor margin = add_scalar(sub(r_a, r_i), -gamma);
  return softplus(neg(margin));  // -log sigmoid(margin)
}

namespace {

EpoStepMetrics run_batch(LmModel& lm, const std::vector<const EpoItem*>& batch,
                         const EpoConfig& config, Tensor* total_out) {
  EpoStepMetrics m;
  Tensor epo_sum, ar_sum;
  for (const EpoItem* item : batch) {
    Tensor r_a = epo_reward(lm, item->prompt, item->y_a, config.beta);
    Tensor r_i = epo_reward(lm, item->prompt, item->y_i, config.beta);
    Tensor pair_loss = softplus(neg(add_scalar(sub(r_a, r_i), -config.gamma)));
    epo_sum = epo_sum.defined() ? add(epo_sum, pair_loss) : pair_loss;
    const double margin = double(r_a.item()) - double(r_i.item());
    m.margin_mean += margin;
    m.win_frac += margin > double(config.gamma) ? 1.0 : 0.0;
    if (total_out && config.lambda_ar > 0) {
      MixedInput input = item->prompt;
      const auto targets =
          append_response(input, item->y_a, true, lm.config().max_seq_len);
      Tensor ar = lm.loss(input, targets);
      ar_sum = ar_sum.defined() ? add(ar_sum, ar) : ar;
    }
  }
  const Real inv = Real(1) / Real(batch.size());
  Tensor epo_mean = scale(epo_sum, inv);
  m.epo_loss = double(epo_mean.item());
  m.margin_mean /= double(batch.size());
  m.win_frac /= double(batch.size());
  if (total_out) {
    Tensor total = epo_mean;
    if (ar_sum.defined()) {
      Tensor ar_mean = scale(ar_sum, inv);
      m.ar_loss = double(ar_mean.item());
      total = add(total, scale(ar_mean, config.lambda_ar));
    }
    *total_out = total;
  }
  return m;
}

}  // namespace

EpoStepMetrics epo_step(LmModel& lm, const std::vector<const EpoItem*>& batch,
                        Adam& adam, const EpoConfig& config) {
  config.validate();
  if (batch.empty()) fail_arg("epo_step: empty batch");
  Tensor total;
  EpoStepMetrics m = run_batch(lm, batch, config, &total);
  const double total_val = double(total.item());
  if (!std::isfinite(total_val))
    fail("epo_step: non-finite loss, step aborted");
  total.backward();
  adam.step();
  return m;
}

EpoStepMetrics epo_eval(LmModel& lm, const std::vector<EpoItem>& items,
                        const EpoConfig& config) {
  NoGradGuard no_grad;
  if (items.empty()) fail_arg("epo_eval: no items");
  EpoStepMetrics m;
  for (const auto& item : items) {
    Tensor r_a = epo_reward(lm, item.prompt, item.y_a, config.beta);
    Tensor r_i = epo_reward(lm, item.prompt, item.y_i, config.beta);
    const double margin = double(r_a.item()) - double(r_i.item());
    m.margin_mean += margin;
    m.win_frac += margin > double(config.gamma) ? 1.0 : 0.0;
    m.epo_loss += bt_loss(margin - double(config.gamma));
  }
  m.margin_mean /= double(items.size());
  m.win_frac /= double(items.size());
  m.epo_loss /= double(items.size());
  return m;
}

}  // namespace emochat
