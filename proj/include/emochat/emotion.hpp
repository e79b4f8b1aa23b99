#pragma once

#include <string>
#include <vector>

#include "emochat/data.hpp"
#include "emochat/ops.hpp"
#include "emochat/optim.hpp"

namespace emochat {

struct EmbedderConfig {
  int vocab_size = 0;
  int d_emb = 64;
  int d_hidden = 64;
};

struct EmotionEmbedding {
  std::vector<Real> vector;  // unit L2 norm
};

// Small text encoder trained on 7-way emotion classification. Embeddings are
// the penultimate features, L2-normalized at embed time so cosine reduces to
// a dot product.
class EmbedderModel {
 public:
  EmbedderModel() = default;
  EmbedderModel(EmbedderConfig cfg, Rng& rng);

  const EmbedderConfig& config() const { return cfg_; }

  // Penultimate feature [1, d_hidden] on the tape (training path).
  Tensor encode(const std::vector<int>& tokens, bool frozen = false);
  // Classifier head over a feature row.
  Tensor head_logits(const Tensor& feature, bool frozen = false);

  EmotionEmbedding embed(const std::vector<int>& tokens) const;
  EmotionCategory classify(const std::vector<int>& tokens) const;

  ParamRefs params();
  std::string config_json() const;
  static EmbedderModel from_config_json(const std::string& json_text);

 private:
  EmbedderConfig cfg_;
  Tensor tok_emb_;        // [V, d_emb]
  Tensor w1_, b1_, w2_, b2_;
  Tensor head_w_, head_b_;
};

Real cosine_sim(const std::vector<Real>& u, const std::vector<Real>& v);

// Cosine similarity of the emotion embeddings of two token sequences.
Real emotion_score(const std::vector<int>& generated,
                   const std::vector<int>& reference,
                   const EmbedderModel& embedder);

struct LabeledSentence {
  std::vector<int> tokens;
  EmotionCategory label = EmotionCategory::kNeutral;
};

struct EmbedderTrainConfig {
  int epochs = 4;
  int batch = 32;
  Real lr = Real(3e-3);
  double val_fraction = 0.1;
  std::uint64_t seed = 7;
};

struct EmbedderTrainReport {
  double val_accuracy = 0;
  std::size_t n_train = 0, n_val = 0;
  std::vector<std::pair<int, double>> history;  // (epoch, val accuracy)
  std::vector<std::pair<std::int64_t, double>> loss_log;  // (step, loss)
};

// Requires >= 50 examples in every category. Deterministic in the seed.
EmbedderTrainReport train_classifier(EmbedderModel& model,
                                     const std::vector<LabeledSentence>& data,
                                     const EmbedderTrainConfig& config);

}  // namespace emochat
