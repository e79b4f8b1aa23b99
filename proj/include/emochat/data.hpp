#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emochat/vocab.hpp"

namespace emochat {

struct Utterance {
  int speaker = 0;
  std::string text;
  EmotionCategory emotion = EmotionCategory::kNeutral;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
  std::string split;  // assigned by split_corpus, not persisted
};

struct Corpus {
  std::vector<Conversation> conversations;
  bool empty() const { return conversations.empty(); }
  std::size_t size() const { return conversations.size(); }
};

// Synthetic emotional-dialogue generator. Dialogues are templated so that
// (a) emotion decides the surface form (markers + per-emotion templates),
// (b) replies regularly reference entities introduced >= 3 turns earlier,
// (c) every utterance carries an emotion label. Pure function of the config.
struct CorpusConfig {
  int n_conversations = 2000;
  int min_turns = 4;
  int max_turns = 24;
  std::uint64_t seed = 1234;
  int n_topics = 20;
  int entities_per_topic = 5;
  int markers_per_emotion = 48;
  int templates_per_role = 14;  // per emotion, user and reply each
  int recall_templates = 3;     // per emotion
  double recall_prob = 0.35;    // reply recalls an entity from >= 3 turns back
  double new_entity_prob = 0.25;
  double self_transition = 0.5;
};

Corpus generate_synthetic_corpus(const CorpusConfig& config);

// JSONL: one {"id":..., "utterances":[{"speaker":..,"text":..,"emotion":..}]}
// object per line. Loading validates and rejects; it never repairs.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

// Conversation-granularity split, deterministic in the seed.
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus,
                                       double train_fraction,
                                       std::uint64_t seed);

// Sorted unique words of the corpus text (vocabulary payload).
std::vector<std::string> corpus_word_list(const Corpus& corpus);

struct CorpusStats {
  std::size_t n_conversations = 0;
  std::size_t n_utterances = 0;
  std::size_t vocab_words = 0;
  double mean_utterance_tokens = 0;
  // Fraction of replies mentioning an entity first introduced >= 3 turns
  // earlier in the same conversation.
  double recall_fraction = 0;
  std::vector<std::size_t> emotion_histogram;  // 7 buckets
};

CorpusStats corpus_stats(const Corpus& corpus);

}  // namespace emochat
