#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emochat/data.hpp"
#include "emochat/ops.hpp"
#include "emochat/vocab.hpp"

namespace emochat {

struct LmConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 512;
  Real dropout = Real(0);
};

// One element of a mixed prompt: either token ids (embedded by the model) or
// pre-embedded d_model row vectors (memory or emotion embeddings).
struct Segment {
  bool is_tokens = true;
  std::vector<int> token_ids;
  Tensor vectors;  // [k, d_model]

  static Segment tokens(std::vector<int> ids);
  static Segment vectors_of(Tensor t);
  std::size_t length() const;
};

// Ordered segments plus a per-position loss mask. Mask-true positions are the
// ones whose next-token predictions enter the cross-entropy.
struct MixedInput {
  std::vector<Segment> segments;
  std::vector<std::uint8_t> loss_mask;
  std::size_t length() const { return loss_mask.size(); }
};

// Fixed prompt template: literal token runs around exactly one history slot,
// one optional-emotion slot and one sentence slot.
struct InstructionTemplate {
  struct Piece {
    enum Kind { kLiteral, kHistory, kEmotion, kSentence } kind = kLiteral;
    std::vector<int> token_ids;
  };
  std::vector<Piece> pieces;

  static InstructionTemplate dialogue(const Vocab& vocab);
  static InstructionTemplate reconstruct_one(const Vocab& vocab);
  static InstructionTemplate reconstruct_many(const Vocab& vocab);

  int literal_count() const;
  void validate() const;  // each placeholder exactly once
};

// Deterministic interleaving: literals / history / optional emotion vectors /
// sentence tokens, closed by the response-start marker. Mask is false on
// every prompt position.
MixedInput build_input(const Segment& history,
                       const std::optional<Segment>& emotion,
                       const std::vector<int>& sentence,
                       const InstructionTemplate& tmpl, int max_seq_len);

// Adds teacher-forcing positions for `response` and marks them in the mask.
// Returns the aligned targets (response tokens, plus <eor> when included).
std::vector<int> append_response(MixedInput& input,
                                 const std::vector<int>& response,
                                 bool include_eor, int max_seq_len);

struct DecodeConfig {
  bool greedy = true;
  int top_k = 20;
  Real temperature = Real(0.9);
  std::uint64_t seed = 0;
  int max_new_tokens = 24;
};

// Small causal transformer over mixed token/vector prompts. Causal mask,
// learned absolute positions, rms-norm blocks, SiLU feed-forward.
class LmModel {
 public:
  LmModel() = default;
  LmModel(LmConfig cfg, Rng& rng);

  const LmConfig& config() const { return cfg_; }

  // Hidden states after the final norm, one row per input position. With
  // frozen=true the parameters are used detached, so no gradient can reach
  // them while tape inputs (memory vectors) still get theirs.
  Tensor forward_hidden(const MixedInput& input, bool frozen = false);

  // Vocabulary logits for a subset of positions.
  Tensor logits_rows(const Tensor& hidden, const std::vector<int>& rows,
                     bool frozen = false);

  // Raw token-embedding rows (used to build pseudo-memory vectors during
  // base pretraining).
  Tensor token_embeddings(const std::vector<int>& ids, bool frozen = false);

  // Mean cross-entropy over mask-true positions; `targets` must align with
  // them (append_response provides both).
  Tensor loss(const MixedInput& input, const std::vector<int>& targets,
              bool frozen = false);

  // (1/|y|) sum_i log p(y_i | prompt, y_<i); teacher-forced, <eor> excluded.
  Tensor avg_logprob(const MixedInput& prompt, const std::vector<int>& y,
                     bool frozen = false);

  // Decodes until <eor> or max_new_tokens. Greedy is deterministic; sampling
  // draws through a generator seeded from decode.seed.
  std::vector<int> generate(const MixedInput& prompt, const DecodeConfig& decode);

  ParamRefs params();
  std::string config_json() const;
  static LmModel from_config_json(const std::string& json_text);

 private:
  struct Layer {
    Tensor wq, wk, wv, wo;
    Tensor ln1, ln2;
    Tensor w1, b1, w2, b2;
  };
  Tensor embed_input(const MixedInput& input, bool frozen);
  LmConfig cfg_;
  Tensor tok_emb_, pos_emb_;
  std::vector<Layer> layers_;
  Tensor final_norm_, w_vocab_;
};

}  // namespace emochat
