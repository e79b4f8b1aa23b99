#include "emochat/lm.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace emochat {

Segment Segment::tokens(std::vector<int> ids) {
  Segment s;
  s.is_tokens = true;
  s.token_ids = std::move(ids);
  return s;
}

Segment Segment::vectors_of(Tensor t) {
  Segment s;
  s.is_tokens = false;
  s.vectors = std::move(t);
  return s;
}

std::size_t Segment::length() const {
  return is_tokens ? token_ids.size()
                   : (vectors.defined() ? std::size_t(vectors.dim(0)) : 0);
}

namespace {

std::vector<int> words_to_ids(const Vocab& vocab,
                              const std::vector<std::string>& words) {
  std::vector<int> ids;
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

}  // namespace

InstructionTemplate InstructionTemplate::dialogue(const Vocab& vocab) {
  InstructionTemplate t;
  t.pieces.push_back({Piece::kLiteral,
                      words_to_ids(vocab, {"reply", "to", "the", "sentence",
                                           "using", "history", ":"})});
  t.pieces.push_back({Piece::kHistory, {}});
  t.pieces.push_back({Piece::kLiteral, words_to_ids(vocab, {"sentence", ":"})});
  t.pieces.push_back({Piece::kEmotion, {}});
  t.pieces.push_back({Piece::kSentence, {}});
  return t;
}

InstructionTemplate InstructionTemplate::reconstruct_one(const Vocab& vocab) {
  InstructionTemplate t;
  t.pieces.push_back({Piece::kLiteral,
                      words_to_ids(vocab, {"rebuild", "the", "sentence", "from",
                                           "memory", ":"})});
  t.pieces.push_back({Piece::kHistory, {}});
  t.pieces.push_back({Piece::kEmotion, {}});
  t.pieces.push_back({Piece::kSentence, {}});
  return t;
}

InstructionTemplate InstructionTemplate::reconstruct_many(const Vocab& vocab) {
  InstructionTemplate t;
  t.pieces.push_back({Piece::kLiteral,
                      words_to_ids(vocab, {"rebuild", "all", "utterances",
                                           "from", "memory", ":"})});
  t.pieces.push_back({Piece::kHistory, {}});
  t.pieces.push_back({Piece::kEmotion, {}});
  t.pieces.push_back({Piece::kSentence, {}});
  return t;
}

int InstructionTemplate::literal_count() const {
  int n = 0;
  for (const auto& p : pieces)
    if (p.kind == Piece::kLiteral) n += int(p.token_ids.size());
  return n;
}

void InstructionTemplate::validate() const {
  int hist = 0, emo = 0, sent = 0;
  for (const auto& p : pieces) {
    hist += p.kind == Piece::kHistory;
    emo += p.kind == Piece::kEmotion;
    sent += p.kind == Piece::kSentence;
  }
  if (hist != 1 || emo != 1 || sent != 1)
    fail_arg("instruction template: each placeholder must appear exactly once");
}

MixedInput build_input(const Segment& history,
                       const std::optional<Segment>& emotion,
                       const std::vector<int>& sentence,
                       const InstructionTemplate& tmpl, int max_seq_len) {
  tmpl.validate();
  MixedInput input;
  for (const auto& piece : tmpl.pieces) {
    switch (piece.kind) {
      case InstructionTemplate::Piece::kLiteral:
        if (!piece.token_ids.empty())
          input.segments.push_back(Segment::tokens(piece.token_ids));
        break;
      case InstructionTemplate::Piece::kHistory:
        if (history.length() > 0) input.segments.push_back(history);
        break;
      case InstructionTemplate::Piece::kEmotion:
        if (emotion && emotion->length() > 0) input.segments.push_back(*emotion);
        break;
      case InstructionTemplate::Piece::kSentence:
        if (!sentence.empty()) input.segments.push_back(Segment::tokens(sentence));
        break;
    }
  }
  input.segments.push_back(Segment::tokens({Vocab::kBos}));
  std::size_t total = 0;
  for (const auto& s : input.segments) total += s.length();
  if (total > std::size_t(max_seq_len))
    fail_arg("build_input: prompt needs " + std::to_string(total) +
             " positions but max_seq_len is " + std::to_string(max_seq_len));
  input.loss_mask.assign(total, 0);
  return input;
}

std::vector<int> append_response(MixedInput& input,
                                 const std::vector<int>& response,
                                 bool include_eor, int max_seq_len) {
  if (response.empty()) fail_arg("append_response: empty response");
  const std::size_t prompt_len = input.length();
  if (prompt_len == 0)
    fail_arg("append_response: prompt is empty (missing response marker)");
  // Positions predicting y_1..y_k(,<eor>) are the marker plus y_1..y_{k-1}
  // (plus y_k when <eor> is scored).
  std::vector<int> appended(response.begin(),
                            response.end() - (include_eor ? 0 : 1));
  const std::size_t total = prompt_len + appended.size();
  if (total > std::size_t(max_seq_len))
    fail_arg("append_response: sequence needs " + std::to_string(total) +
             " positions but max_seq_len is " + std::to_string(max_seq_len));
  if (!appended.empty()) input.segments.push_back(Segment::tokens(appended));
  input.loss_mask.resize(total, 0);
  for (std::size_t p = prompt_len - 1; p < total; ++p) input.loss_mask[p] = 1;
  std::vector<int> targets = response;
  if (include_eor) targets.push_back(Vocab::kEor);
  return targets;
}

namespace {

Tensor init_matrix(int rows, int cols, Rng& rng, double std_scale = 0.0) {
  const double sd = std_scale > 0 ? std_scale : 1.0 / std::sqrt(double(rows));
  std::vector<Real> data(std::size_t(rows) * std::size_t(cols));
  for (auto& v : data) v = Real(rng.normal() * sd);
  return Tensor::from_data({rows, cols}, std::move(data), true);
}

Tensor causal_mask(int t_len) {
  Tensor m = Tensor::zeros({t_len, t_len});
  Real* p = m.data();
  for (int i = 0; i < t_len; ++i)
    for (int j = i + 1; j < t_len; ++j) p[std::size_t(i) * t_len + j] = Real(-1e9);
  return m;
}

}  // namespace

LmModel::LmModel(LmConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.d_model % cfg_.n_heads != 0)
    fail_arg("lm: d_model " + std::to_string(cfg_.d_model) +
             " not divisible by n_heads " + std::to_string(cfg_.n_heads));
  if (cfg_.vocab_size <= 0) fail_arg("lm: vocab_size must be positive");
  if (cfg_.dropout != Real(0))
    fail_arg("lm: nonzero dropout is not supported by this build");
  tok_emb_ = init_matrix(cfg_.vocab_size, cfg_.d_model, rng, 0.02);
  pos_emb_ = init_matrix(cfg_.max_seq_len, cfg_.d_model, rng, 0.02);
  layers_.resize(std::size_t(cfg_.n_layers));
  for (auto& l : layers_) {
    l.wq = init_matrix(cfg_.d_model, cfg_.d_model, rng);
    l.wk = init_matrix(cfg_.d_model, cfg_.d_model, rng);
    l.wv = init_matrix(cfg_.d_model, cfg_.d_model, rng);
    l.wo = init_matrix(cfg_.d_model, cfg_.d_model, rng);
    l.ln1 = Tensor::full({cfg_.d_model}, Real(1), true);
    l.ln2 = Tensor::full({cfg_.d_model}, Real(1), true);
    l.w1 = init_matrix(cfg_.d_model, cfg_.d_ff, rng);
    l.b1 = Tensor::zeros({cfg_.d_ff}, true);
    l.w2 = init_matrix(cfg_.d_ff, cfg_.d_model, rng);
    l.b2 = Tensor::zeros({cfg_.d_model}, true);
  }
  final_norm_ = Tensor::full({cfg_.d_model}, Real(1), true);
  w_vocab_ = init_matrix(cfg_.d_model, cfg_.vocab_size, rng);
}

Tensor LmModel::embed_input(const MixedInput& input, bool frozen) {
  if (input.segments.empty()) fail_arg("lm: empty input");
  auto P = [frozen](const Tensor& t) { return frozen ? t.detached() : t; };
  std::vector<Tensor> parts;
  for (const auto& seg : input.segments) {
    if (seg.length() == 0) continue;
    if (seg.is_tokens) {
      parts.push_back(embedding(P(tok_emb_), seg.token_ids));
    } else {
      if (seg.vectors.ndim() != 2 || seg.vectors.dim(1) != cfg_.d_model)
        fail_arg("lm: raw-vector segment " + shape_str(seg.vectors.shape()) +
                 " does not match embedding width " + std::to_string(cfg_.d_model));
      parts.push_back(seg.vectors);
    }
  }
  Tensor x = parts.size() == 1 ? parts[0] : concat_rows(parts);
  const int t_len = x.dim(0);
  if (t_len > cfg_.max_seq_len)
    fail_arg("lm: sequence of " + std::to_string(t_len) + " exceeds max_seq_len " +
             std::to_string(cfg_.max_seq_len));
  return add(x, slice_rows(P(pos_emb_), 0, t_len));
}

Tensor LmModel::forward_hidden(const MixedInput& input, bool frozen) {
  auto P = [frozen](const Tensor& t) { return frozen ? t.detached() : t; };
  Tensor x = embed_input(input, frozen);
  const int t_len = x.dim(0);
  const int hd = cfg_.d_model / cfg_.n_heads;
  const Tensor mask = causal_mask(t_len);
  for (auto& l : layers_) {
    Tensor h = rms_norm(x, P(l.ln1));
    Tensor q = matmul(h, P(l.wq));
    Tensor k = matmul(h, P(l.wk));
    Tensor v = matmul(h, P(l.wv));
    std::vector<Tensor> heads;
    heads.reserve(std::size_t(cfg_.n_heads));
    for (int hi = 0; hi < cfg_.n_heads; ++hi) {
      Tensor qh = slice_cols(q, hi * hd, (hi + 1) * hd);
      Tensor kh = slice_cols(k, hi * hd, (hi + 1) * hd);
      Tensor vh = slice_cols(v, hi * hd, (hi + 1) * hd);
      Tensor scores = scale(matmul(qh, kh, true), Real(1) / std::sqrt(Real(hd)));
      Tensor attn = softmax(add(scores, mask));
      heads.push_back(matmul(attn, vh));
    }
    Tensor ctx = cfg_.n_heads == 1 ? heads[0] : concat_cols(heads);
    x = add(x, matmul(ctx, P(l.wo)));
    Tensor h2 = rms_norm(x, P(l.ln2));
    Tensor ff = matmul(silu(add(matmul(h2, P(l.w1)), P(l.b1))), P(l.w2));
    x = add(x, add(ff, P(l.b2)));
  }
  return rms_norm(x, P(final_norm_));
}

Tensor LmModel::token_embeddings(const std::vector<int>& ids, bool frozen) {
  return embedding(frozen ? tok_emb_.detached() : tok_emb_, ids);
}

Tensor LmModel::logits_rows(const Tensor& hidden, const std::vector<int>& rows,
                            bool frozen) {
  Tensor picked = embedding(hidden, rows);  // row gather
  return matmul(picked, frozen ? w_vocab_.detached() : w_vocab_);
}

Tensor LmModel::loss(const MixedInput& input, const std::vector<int>& targets,
                     bool frozen) {
  std::vector<int> rows;
  for (std::size_t p = 0; p < input.loss_mask.size(); ++p)
    if (input.loss_mask[p]) rows.push_back(int(p));
  if (rows.empty()) fail_arg("lm_loss: no mask-true position");
  if (rows.size() != targets.size())
    fail_arg("lm_loss: " + std::to_string(rows.size()) + " masked positions vs " +
             std::to_string(targets.size()) + " targets");
  Tensor hidden = forward_hidden(input, frozen);
  Tensor logits = logits_rows(hidden, rows, frozen);
  Tensor logp = log_softmax(logits);
  std::vector<int> rr(rows.size());
  for (std::size_t i = 0; i < rr.size(); ++i) rr[i] = int(i);
  return neg(mean_all(gather_rc(logp, rr, targets)));
}

Tensor LmModel::avg_logprob(const MixedInput& prompt, const std::vector<int>& y,
                            bool frozen) {
  if (y.empty()) fail_arg("sequence_avg_logprob: empty target sequence");
  MixedInput input = prompt;
  std::vector<int> targets = append_response(input, y, false, cfg_.max_seq_len);
  std::vector<int> rows;
  for (std::size_t p = 0; p < input.loss_mask.size(); ++p)
    if (input.loss_mask[p]) rows.push_back(int(p));
  Tensor hidden = forward_hidden(input, frozen);
  Tensor logits = logits_rows(hidden, rows, frozen);
  Tensor logp = log_softmax(logits);
  std::vector<int> rr(rows.size());
  for (std::size_t i = 0; i < rr.size(); ++i) rr[i] = int(i);
  return mean_all(gather_rc(logp, rr, targets));
}

std::vector<int> LmModel::generate(const MixedInput& prompt,
                                   const DecodeConfig& decode) {
  NoGradGuard no_grad;
  Rng rng(decode.seed);
  MixedInput input = prompt;
  std::vector<int> out;
  std::vector<int>* tail = nullptr;
  for (int step = 0; step < decode.max_new_tokens; ++step) {
    const std::size_t t_len = input.length();
    if (t_len >= std::size_t(cfg_.max_seq_len)) break;
    Tensor hidden = forward_hidden(input, true);
    Tensor logits = logits_rows(hidden, {int(t_len) - 1}, true);
    const Real* row = logits.data();
    int next;
    if (decode.greedy) {
      next = 0;
      for (int v = 1; v < cfg_.vocab_size; ++v)
        if (row[v] > row[next]) next = v;
    } else {
      // top-k sample at the configured temperature
      const int k = std::max(1, std::min(decode.top_k, cfg_.vocab_size));
      std::vector<int> idx(std::size_t(cfg_.vocab_size));
      for (int v = 0; v < cfg_.vocab_size; ++v) idx[std::size_t(v)] = v;
      std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                        [row](int a, int b) { return row[a] > row[b]; });
      const Real temp = std::max(Real(1e-4), decode.temperature);
      double mx = double(row[idx[0]]);
      std::vector<double> p(static_cast<std::size_t>(k));
      double sum = 0;
      for (int i = 0; i < k; ++i) {
        p[std::size_t(i)] = std::exp((double(row[idx[std::size_t(i)]]) - mx) / double(temp));
        sum += p[std::size_t(i)];
      }
      double u = rng.uniform() * sum;
      next = idx[std::size_t(k - 1)];
      for (int i = 0; i < k; ++i) {
        u -= p[std::size_t(i)];
        if (u <= 0) {
          next = idx[std::size_t(i)];
          break;
        }
      }
    }
    if (next == Vocab::kEor) break;
    out.push_back(next);
    if (!tail) {
      input.segments.push_back(Segment::tokens({next}));
      tail = &input.segments.back().token_ids;
    } else {
      tail->push_back(next);
    }
    input.loss_mask.push_back(0);
  }
  return out;
}

ParamRefs LmModel::params() {
  ParamRefs refs;
  refs.push_back({"lm/tok_emb", &tok_emb_});
  refs.push_back({"lm/pos_emb", &pos_emb_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string base = "lm/layer" + std::to_string(i) + "/";
    auto& l = layers_[i];
    refs.push_back({base + "wq", &l.wq});
    refs.push_back({base + "wk", &l.wk});
    refs.push_back({base + "wv", &l.wv});
    refs.push_back({base + "wo", &l.wo});
    refs.push_back({base + "ln1", &l.ln1});
    refs.push_back({base + "ln2", &l.ln2});
    refs.push_back({base + "w1", &l.w1});
    refs.push_back({base + "b1", &l.b1});
    refs.push_back({base + "w2", &l.w2});
    refs.push_back({base + "b2", &l.b2});
  }
  refs.push_back({"lm/final_norm", &final_norm_});
  refs.push_back({"lm/w_vocab", &w_vocab_});
  return refs;
}

std::string LmModel::config_json() const {
  nlohmann::json j;
  j["vocab_size"] = cfg_.vocab_size;
  j["d_model"] = cfg_.d_model;
  j["n_layers"] = cfg_.n_layers;
  j["n_heads"] = cfg_.n_heads;
  j["d_ff"] = cfg_.d_ff;
  j["max_seq_len"] = cfg_.max_seq_len;
  j["dropout"] = double(cfg_.dropout);
  return j.dump();
}

LmModel LmModel::from_config_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  LmConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  cfg.dropout = Real(j.at("dropout").get<double>());
  Rng rng(0);
  return LmModel(cfg, rng);
}

}  // namespace emochat
