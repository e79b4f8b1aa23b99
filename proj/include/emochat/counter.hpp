#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emochat/emotion.hpp"
#include "emochat/lm.hpp"
#include "emochat/ssm.hpp"

namespace emochat {

struct CandidateResponse {
  EmotionCategory emotion = EmotionCategory::kNeutral;
  std::vector<int> tokens;
  Real similarity_to_gt = 0;
};

struct PreferencePair {
  std::string conv_id;
  int turn = 0;
  std::vector<int> context_tokens;  // speaker-prefixed last sentence
  std::vector<int> y_a;
  std::vector<int> y_i;
  EmotionCategory y_i_emotion = EmotionCategory::kNeutral;
  Real similarity = 0;
};

// "(emotion) sentence": the reserved label token prepended to the sentence.
std::vector<int> emotion_prompt(const std::vector<int>& sentence,
                                EmotionCategory emotion);

// One sampled response per emotion, each scored against the ground-truth
// response with the frozen emotion embedder. Throws on a generation failure
// (empty candidate); callers skip the turn.
std::vector<CandidateResponse> generate_candidates(
    LmModel& lm, const Segment& history, const std::vector<int>& sentence,
    const std::vector<int>& gt_response, const EmbedderModel& embedder,
    const Vocab& vocab, const DecodeConfig& decode, std::uint64_t turn_seed);

// Argmin-similarity candidate iff it clears the threshold; ties resolve to
// the lowest emotion enum order.
std::optional<CandidateResponse> select_counter(
    const std::vector<CandidateResponse>& candidates, Real threshold = Real(0.1));

struct CounterConfig {
  Real threshold = Real(0.1);
  bool condition_on_history = true;
  int max_turns = 2500;  // cap on processed turns over the corpus pass
  DecodeConfig decode{.greedy = false, .top_k = 20, .temperature = Real(0.9),
                      .seed = 0, .max_new_tokens = 20};
  std::uint64_t seed = 99;
};

struct CounterStats {
  std::size_t turns_processed = 0;
  std::size_t pairs_accepted = 0;
  std::size_t generation_failures = 0;
  bool acceptance_defined = false;
  double acceptance_rate = 0;
  // candidate similarities bucketed over [-1, 1], 20 buckets of width 0.1
  std::vector<std::size_t> sim_histogram = std::vector<std::size_t>(20, 0);
};

// One pass over the corpus response turns; emits accepted pairs as JSONL.
// Turns fan out across worker threads; output order is restored by
// (conversation, turn) before writing, so reruns are byte-identical.
CounterStats build_preference_dataset(const Corpus& corpus, LmModel& lm,
                                      CompressorModel* compressor,
                                      const EmbedderModel& embedder,
                                      const Vocab& vocab,
                                      const CounterConfig& config,
                                      const std::string& out_jsonl,
                                      std::vector<PreferencePair>* out_pairs);

std::vector<PreferencePair> load_preference_pairs(const std::string& path);
void write_counter_summary(const CounterStats& stats, const std::string& txt_path,
                           const std::string& json_path);

}  // namespace emochat
