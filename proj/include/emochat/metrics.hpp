#pragma once

#include <string>
#include <vector>

#include "emochat/emotion.hpp"
#include "emochat/lm.hpp"
#include "emochat/ssm.hpp"

namespace emochat {

// Pooled distinct-n: |unique n-grams| / |all n-grams| over the whole corpus.
double dist_n(const std::vector<std::vector<int>>& texts, int n = 1);

// Standard BLEU: geometric mean of clipped n-gram precisions (uniform
// weights, n = 1..max_n) times the brevity penalty. Zero counts for n >= 2
// get add-1 smoothing; an empty candidate scores 0.
double bleu_n(const std::vector<int>& candidate,
              const std::vector<std::vector<int>>& references, int max_n);

// Greedy-matching F1 over a candidate-x-reference similarity matrix:
// precision = mean over rows of the row max, recall symmetric.
double semantic_f1(const std::vector<std::vector<double>>& sims);

// Same, with similarities = cosine of per-token contextual embeddings taken
// from the dialogue LM's final hidden states.
double semantic_score(const std::vector<int>& candidate,
                      const std::vector<int>& reference, LmModel& lm);

struct EvalSample {
  std::string conv_id;
  int turn = 0;
  double semantic = 0;
  double emotion = 0;
  double dist1 = 0;
  std::vector<int> generated;
};

struct EvalReport {
  std::vector<EvalSample> samples;
  double mean_semantic = 0;
  double mean_emotion = 0;
  double mean_dist1 = 0;
  std::string config_digest;
};

struct EvalConfig {
  int max_samples = 300;
  DecodeConfig decode;  // greedy by default
  bool use_compressor = true;
  int raw_history_utterances = 6;  // context window without the compressor
};

EvalReport run_eval(const Corpus& corpus, LmModel& lm,
                    CompressorModel* compressor, const EmbedderModel& embedder,
                    const Vocab& vocab, const EvalConfig& config);

struct EfficiencyRow {
  std::string conv_id;
  std::size_t history_turns = 0;
  std::size_t tokens_without = 0, tokens_with = 0;
  double seconds_without = 0, seconds_with = 0;  // median over repetitions
};

struct EfficiencyReport {
  std::vector<EfficiencyRow> rows;
  double mean_tokens_without = 0, mean_tokens_with = 0;
  double mean_seconds_without = 0, mean_seconds_with = 0;
  double token_reduction = 0;  // 1 - with/without
  double time_reduction = 0;
  int min_turns = 0;
};

struct BenchConfig {
  int min_turns = 20;
  int repetitions = 5;
  int max_samples = 12;
};

// Prompt-processing cost with vs without the compressor on identical samples.
// The with-compressor path times compression plus the prompt forward; neither
// path generates. Timing uses a monotonic clock, median of >= 5 repetitions.
EfficiencyReport bench_compression(const Corpus& corpus, LmModel& lm,
                                   CompressorModel& compressor,
                                   const Vocab& vocab,
                                   const BenchConfig& config);

}  // namespace emochat
