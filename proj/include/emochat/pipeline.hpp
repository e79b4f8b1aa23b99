#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emochat/checkpoint.hpp"
#include "emochat/counter.hpp"
#include "emochat/epo.hpp"
#include "emochat/metrics.hpp"
#include "emochat/runconfig.hpp"

namespace emochat {

// Curriculum stages, in execution order.
enum class Stage {
  kGenCorpus = 0,
  kTrainEmbedder,
  kPretrainLm,
  kPretrainCompressor,
  kFinetuneCompressor,
  kTrainLm,
  kGenCounter,
  kTrainEpo,
};
inline constexpr int kNumStages = 8;
const char* stage_name(Stage s);

struct OutPaths {
  std::string dir;
  std::string join(const std::string& name) const { return dir + "/" + name; }
  std::string corpus() const { return join("corpus.jsonl"); }
  std::string corpus_stats() const { return join("corpus_stats.json"); }
  std::string embedder() const { return join("embedder.ckpt"); }
  std::string lm_base() const { return join("lm_base.ckpt"); }
  std::string compressor_pre() const { return join("compressor_pre.ckpt"); }
  std::string compressor() const { return join("compressor.ckpt"); }
  std::string lm_joint() const { return join("lm_joint.ckpt"); }
  std::string pairs() const { return join("pairs.jsonl"); }
  std::string pairs_summary() const { return join("pairs_summary.txt"); }
  std::string pairs_stats() const { return join("pairs_stats.json"); }
  std::string lm_epo() const { return join("lm_epo.ckpt"); }
  std::string epo_report() const { return join("epo_report.json"); }
  std::string stage_csv(Stage s) const;
  std::string marker(Stage s) const;
  std::string config_echo() const { return join("config.json"); }
  std::string eval_csv() const { return join("eval.csv"); }
  std::string eval_summary() const { return join("eval_summary.txt"); }
  std::string bench_csv() const { return join("bench.csv"); }
  std::string bench_summary() const { return join("bench_summary.txt"); }
};

void ensure_dir(const std::string& dir);
void echo_config(const RunConfig& cfg, const OutPaths& paths);

// Model bundles (checkpoint + vocabulary payload).
struct LoadedLm {
  Vocab vocab;
  LmModel model;
};
struct LoadedCompressor {
  Vocab vocab;
  CompressorModel model;
};
struct LoadedEmbedder {
  Vocab vocab;
  EmbedderModel model;
};

void save_lm(const std::string& path, LmModel& model, const Vocab& vocab);
void save_compressor(const std::string& path, CompressorModel& model,
                     const Vocab& vocab);
void save_embedder(const std::string& path, EmbedderModel& model,
                   const Vocab& vocab);
LoadedLm load_lm(const std::string& path);
LoadedCompressor load_compressor(const std::string& path);
LoadedEmbedder load_embedder(const std::string& path);

struct StageResult {
  double initial_loss = 0;
  double final_loss = 0;
  double final_val_metric = 0;
  int steps = 0;
  bool diverged = false;
};

struct EpoStageResult {
  StageResult base;
  EpoStepMetrics before, after;
  double ar_baseline = 0;
  std::size_t n_pairs = 0;
};

void stage_gen_corpus(const RunConfig& cfg, const OutPaths& paths);
StageResult stage_train_embedder(const RunConfig& cfg, const OutPaths& paths);
StageResult stage_pretrain_lm(const RunConfig& cfg, const OutPaths& paths);
StageResult stage_pretrain_compressor(const RunConfig& cfg, const OutPaths& paths);
StageResult stage_finetune_compressor(const RunConfig& cfg, const OutPaths& paths);
StageResult stage_train_lm(const RunConfig& cfg, const OutPaths& paths);
CounterStats stage_gen_counter(const RunConfig& cfg, const OutPaths& paths);
EpoStageResult stage_train_epo(const RunConfig& cfg, const OutPaths& paths);

// Runs the stages in order (optionally a sub-range), skipping completed ones
// when resume is set, then writes the final evaluation report.
void run_curriculum(const RunConfig& cfg, const OutPaths& paths, bool resume);

// Shared by the CLI eval/bench commands and the acceptance suite.
EvalReport run_eval_to_files(const RunConfig& cfg, const OutPaths& paths,
                             const std::string& lm_path,
                             const std::string& corpus_path);
EfficiencyReport run_bench_to_files(const RunConfig& cfg, const OutPaths& paths,
                                    const std::string& lm_path,
                                    const std::string& corpus_path);

// Deterministic train/test view of a corpus file.
std::pair<Corpus, Corpus> load_and_split(const RunConfig& cfg,
                                         const std::string& corpus_path);

// Dialogue training loss for a single (conversation, turn) sample. History is
// compressed when a compressor is given, else the last `raw_history_window`
// utterances as tokens. A hint prepends the target's emotion label.
Tensor dialogue_loss(LmModel& lm, const Conversation& conv, std::size_t turn,
                     const Vocab& vocab, CompressorModel* compressor,
                     int raw_history_window, bool hint, bool lm_frozen = false);

// Teacher-forced token accuracy of reconstruction over held-out windows.
double recon_token_accuracy(CompressorModel& comp, LmModel& lm,
                            const Corpus& corpus, const Vocab& vocab,
                            int k_min, int k_max, int max_samples,
                            std::uint64_t seed);

// Greedy-decoded reconstruction BLEU-1 (and token accuracy) over held-out
// windows; used by the acceptance suite and reported after compressor stages.
struct ReconEval {
  double bleu1 = 0;
  double token_accuracy = 0;
  int n_samples = 0;
};
ReconEval recon_decode_eval(CompressorModel& comp, LmModel& lm,
                            const Corpus& corpus, const Vocab& vocab, int k_min,
                            int k_max, int max_samples, std::uint64_t seed);

void write_eval_files(const EvalReport& report, const RunConfig& cfg,
                      const OutPaths& paths);
void write_bench_files(const EfficiencyReport& report, const RunConfig& cfg,
                       const OutPaths& paths);

}  // namespace emochat
