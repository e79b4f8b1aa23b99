#include "emochat/emotion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace emochat {

namespace {

Tensor init_matrix(int rows, int cols, Rng& rng) {
  const double sd = 1.0 / std::sqrt(double(rows));
  std::vector<Real> data(std::size_t(rows) * std::size_t(cols));
  for (auto& v : data) v = Real(rng.normal() * sd);
  return Tensor::from_data({rows, cols}, std::move(data), true);
}

}  // namespace

EmbedderModel::EmbedderModel(EmbedderConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.vocab_size <= 0) fail_arg("embedder: vocab_size must be positive");
  tok_emb_ = init_matrix(cfg_.vocab_size, cfg_.d_emb, rng);
  w1_ = init_matrix(cfg_.d_emb, cfg_.d_hidden, rng);
  b1_ = Tensor::zeros({cfg_.d_hidden}, true);
  w2_ = init_matrix(cfg_.d_hidden, cfg_.d_hidden, rng);
  b2_ = Tensor::zeros({cfg_.d_hidden}, true);
  head_w_ = init_matrix(cfg_.d_hidden, kNumEmotions, rng);
  head_b_ = Tensor::zeros({kNumEmotions}, true);
}

Tensor EmbedderModel::encode(const std::vector<int>& tokens, bool frozen) {
  if (tokens.empty()) fail_arg("embed: empty sentence");
  auto P = [frozen](const Tensor& t) { return frozen ? t.detached() : t; };
  Tensor pooled = reshape(mean_axis(embedding(P(tok_emb_), tokens), 0),
                          {1, cfg_.d_emb});
  Tensor h1 = tanh_op(add(matmul(pooled, P(w1_)), P(b1_)));
  return tanh_op(add(matmul(h1, P(w2_)), P(b2_)));
}

Tensor EmbedderModel::head_logits(const Tensor& feature, bool frozen) {
  auto P = [frozen](const Tensor& t) { return frozen ? t.detached() : t; };
  return add(matmul(feature, P(head_w_)), P(head_b_));
}

EmotionEmbedding EmbedderModel::embed(const std::vector<int>& tokens) const {
  NoGradGuard no_grad;
  Tensor f = const_cast<EmbedderModel*>(this)->encode(tokens, true);
  EmotionEmbedding e;
  e.vector.assign(f.data(), f.data() + f.numel());
  Real norm = 0;
  for (Real v : e.vector) norm += v * v;
  norm = std::sqrt(norm);
  if (norm < Real(1e-12)) fail("embed: zero feature vector");
  for (Real& v : e.vector) v /= norm;
  return e;
}

EmotionCategory EmbedderModel::classify(const std::vector<int>& tokens) const {
  NoGradGuard no_grad;
  auto* self = const_cast<EmbedderModel*>(this);
  Tensor logits = self->head_logits(self->encode(tokens, true), true);
  const Real* p = logits.data();
  int best = 0;
  for (int i = 1; i < kNumEmotions; ++i)
    if (p[i] > p[best]) best = i;
  return EmotionCategory(best);
}

ParamRefs EmbedderModel::params() {
  return {{"emo/tok_emb", &tok_emb_}, {"emo/w1", &w1_},     {"emo/b1", &b1_},
          {"emo/w2", &w2_},           {"emo/b2", &b2_},     {"emo/head_w", &head_w_},
          {"emo/head_b", &head_b_}};
}

std::string EmbedderModel::config_json() const {
  nlohmann::json j;
  j["vocab_size"] = cfg_.vocab_size;
  j["d_emb"] = cfg_.d_emb;
  j["d_hidden"] = cfg_.d_hidden;
  return j.dump();
}

EmbedderModel EmbedderModel::from_config_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  EmbedderConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_emb = j.at("d_emb").get<int>();
  cfg.d_hidden = j.at("d_hidden").get<int>();
  Rng rng(0);
  return EmbedderModel(cfg, rng);
}

Real cosine_sim(const std::vector<Real>& u, const std::vector<Real>& v) {
  if (u.size() != v.size())
    fail_arg("cosine_sim: dimension mismatch " + std::to_string(u.size()) +
             " vs " + std::to_string(v.size()));
  if (u.empty()) fail_arg("cosine_sim: empty vectors");
  Real dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu < Real(1e-24) || nv < Real(1e-24)) fail_arg("cosine_sim: zero vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

Real emotion_score(const std::vector<int>& generated,
                   const std::vector<int>& reference,
                   const EmbedderModel& embedder) {
  return cosine_sim(embedder.embed(generated).vector,
                    embedder.embed(reference).vector);
}

EmbedderTrainReport train_classifier(EmbedderModel& model,
                                     const std::vector<LabeledSentence>& data,
                                     const EmbedderTrainConfig& config) {
  std::vector<std::size_t> per_cat(kNumEmotions, 0);
  for (const auto& ex : data) ++per_cat[size_t(ex.label)];
  for (int c = 0; c < kNumEmotions; ++c)
    if (per_cat[size_t(c)] < 50)
      fail_arg("train_classifier: category '" +
               std::string(emotion_name(EmotionCategory(c))) + "' has " +
               std::to_string(per_cat[size_t(c)]) + " examples, need >= 50");

  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[size_t(rng.uniform_int(std::int64_t(i)))]);
  const std::size_t n_val =
      std::max<std::size_t>(1, std::size_t(double(data.size()) * config.val_fraction));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + std::ptrdiff_t(n_val));
  std::vector<std::size_t> train_idx(order.begin() + std::ptrdiff_t(n_val), order.end());

  Adam adam(model.params(), {.lr = config.lr});
  EmbedderTrainReport report;
  report.n_train = train_idx.size();
  report.n_val = val_idx.size();

  auto eval_val = [&]() {
    std::size_t hits = 0;
    for (std::size_t i : val_idx)
      if (model.classify(data[i].tokens) == data[i].label) ++hits;
    return double(hits) / double(val_idx.size());
  };

  std::int64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = train_idx.size(); i > 1; --i)
      std::swap(train_idx[i - 1], train_idx[size_t(rng.uniform_int(std::int64_t(i)))]);
    for (std::size_t start = 0; start < train_idx.size();
         start += std::size_t(config.batch)) {
      const std::size_t end =
          std::min(train_idx.size(), start + std::size_t(config.batch));
      Tensor total;
      for (std::size_t bi = start; bi < end; ++bi) {
        const auto& ex = data[train_idx[bi]];
        Tensor logits = model.head_logits(model.encode(ex.tokens));
        Tensor nll = neg(gather_rc(log_softmax(logits), {0}, {int(ex.label)}));
        total = total.defined() ? add(total, nll) : nll;
      }
      Tensor loss = scale(sum_all(total), Real(1) / Real(end - start));
      loss.backward();
      adam.step();
      if (step % 50 == 0) report.loss_log.push_back({step, double(loss.item())});
      ++step;
    }
    report.history.push_back({epoch, eval_val()});
  }
  report.val_accuracy = report.history.empty() ? eval_val() : report.history.back().second;
  return report;
}

}  // namespace emochat
