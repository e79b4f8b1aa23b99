#pragma once

#include <cstdint>
#include <string>

#include "emochat/counter.hpp"
#include "emochat/data.hpp"
#include "emochat/emotion.hpp"
#include "emochat/epo.hpp"
#include "emochat/lm.hpp"
#include "emochat/metrics.hpp"
#include "emochat/ssm.hpp"

namespace emochat {

struct StageSchedule {
  int max_steps = 0;
  int eval_every = 0;
  int batch = 0;
  Real lr = 0;
  int patience = 3;  // evaluations without improvement before stopping
};

// Effective configuration of the whole pipeline. Every field has a default;
// a JSON config file overrides section by section and unknown keys are
// rejected. The effective config is echoed next to every output.
struct RunConfig {
  std::uint64_t seed = 7;
  double train_fraction = 0.9;

  CorpusConfig corpus;

  struct Embedder {
    int d_emb = 64;
    int d_hidden = 64;
    int epochs = 4;
    int batch = 32;
    Real lr = Real(3e-3);
  } embedder;

  CompressorConfig compressor;
  StageSchedule compressor_pretrain{.max_steps = 9000, .eval_every = 500,
                                    .batch = 16, .lr = Real(1e-3)};
  StageSchedule compressor_finetune{.max_steps = 4000, .eval_every = 400,
                                    .batch = 8, .lr = Real(5e-4)};

  struct Lm {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int max_seq_len = 512;
    int history_utterances = 4;   // raw-history window for pretraining
    Real emotion_hint_prob = Real(0.5);
    Real reconstruction_weight = Real(0.5);  // joint-stage mix
    // Fraction of base-pretraining samples that teach the reconstruction
    // format from mean-of-token-embedding pseudo-memories, so the frozen LM
    // can already read memory slots when the compressor starts training.
    Real pseudo_memory_fraction = Real(0.35);
  } lm;
  StageSchedule lm_pretrain{.max_steps = 6000, .eval_every = 300, .batch = 8,
                            .lr = Real(4e-4)};
  StageSchedule lm_joint{.max_steps = 2200, .eval_every = 250, .batch = 8,
                         .lr = Real(1e-4)};

  CounterConfig counter;
  EpoConfig epo;
  EvalConfig eval;
  BenchConfig bench;

  std::string to_json() const;
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string digest() const;  // FNV-1a of the echoed JSON
};

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace emochat
