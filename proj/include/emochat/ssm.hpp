#pragma once

#include <string>
#include <vector>

#include "emochat/data.hpp"
#include "emochat/lm.hpp"
#include "emochat/ops.hpp"

namespace emochat {

struct CompressorConfig {
  int d_model = 128;
  int d_state = 16;
  int d_conv = 4;
  int expand = 2;
  int n_layers = 4;
  int d_mem = 128;  // must equal the dialogue LM embedding width
  int max_seq_len = 2048;
  int d_inner() const { return d_model * expand; }
  int dt_rank() const { return (d_model + 15) / 16; }
};

// One compressed utterance: the hidden state at its <mem> position, projected
// to the LM embedding width.
struct MemoryEmbedding {
  std::vector<Real> vector;
  int utterance_index = 0;
};

// Stacked selective state-space blocks reading "u1 <mem> u2 <mem> ..." and
// emitting one memory embedding per utterance.
class CompressorModel {
 public:
  CompressorModel() = default;
  CompressorModel(CompressorConfig cfg, int vocab_size, Rng& rng);

  const CompressorConfig& config() const { return cfg_; }

  // Residual block: norm -> in-proj -> causal depthwise conv -> SiLU ->
  // selective scan -> SiLU gate -> out-proj -> +x. Causal by construction.
  Tensor block_forward(int layer, const Tensor& x, bool frozen = false);

  // Full stack incl. final norm; rows are per-token hidden states.
  Tensor forward(const std::vector<int>& tokens, bool frozen = false);

  // [k, d_mem] memory rows on the tape (training path). Empty conversations
  // yield a 0-row tensor.
  Tensor compress_tape(const Conversation& conv, const Vocab& vocab,
                       bool frozen = false);
  // Same, over an utterance window [first, first+count).
  Tensor compress_window(const Conversation& conv, const Vocab& vocab,
                         std::size_t first, std::size_t count,
                         bool frozen = false);

  // Inference API: exactly one finite embedding per utterance.
  std::vector<MemoryEmbedding> compress(const Conversation& conv,
                                        const Vocab& vocab);

  ParamRefs params();
  std::string config_json() const;
  static CompressorModel from_config_json(const std::string& json_text);

 private:
  struct Block {
    Tensor norm;
    Tensor in_proj;            // [d_model, 2*d_inner]
    Tensor conv_w, conv_b;     // [d_inner, d_conv], [d_inner]
    Tensor x_proj;             // [d_inner, dt_rank + 2*d_state]
    Tensor dt_w, dt_b;         // [dt_rank, d_inner], [d_inner]
    Tensor log_a;              // [d_inner, d_state]; state matrix -exp(log_a)
    Tensor d_skip;             // [d_inner]
    Tensor out_proj;           // [d_inner, d_model]
  };
  CompressorConfig cfg_;
  Tensor tok_emb_;
  std::vector<Block> blocks_;
  Tensor final_norm_;
  Tensor mem_proj_;  // [d_model, d_mem]
};

// Cross-entropy of the LM reconstructing the target utterances from the
// memory rows alone. With lm_frozen (the default) gradients flow only into
// whatever produced `memories`; the joint dialogue stage passes false to
// train the LM side against a frozen compressor. Speakers delimit utterances
// in the multi-utterance target.
Tensor reconstruction_loss(const Tensor& memories,
                           const std::vector<std::vector<int>>& targets,
                           const std::vector<int>& speakers, LmModel& lm,
                           const Vocab& vocab, bool lm_frozen = true);

// The token sequence reconstruction should reproduce (target side of the
// loss above, <eor> excluded).
std::vector<int> reconstruction_target(
    const std::vector<std::vector<int>>& targets,
    const std::vector<int>& speakers);

}  // namespace emochat
