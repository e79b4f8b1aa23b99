#include "emochat/ssm.hpp"

#include <cmath>

#include <json.hpp>

namespace emochat {

namespace {

Tensor init_matrix(int rows, int cols, Rng& rng, double std_scale = 0.0) {
  const double sd = std_scale > 0 ? std_scale : 1.0 / std::sqrt(double(rows));
  std::vector<Real> data(std::size_t(rows) * std::size_t(cols));
  for (auto& v : data) v = Real(rng.normal() * sd);
  return Tensor::from_data({rows, cols}, std::move(data), true);
}

}  // namespace

CompressorModel::CompressorModel(CompressorConfig cfg, int vocab_size, Rng& rng)
    : cfg_(cfg) {
  if (vocab_size <= 0) fail_arg("compressor: vocab_size must be positive");
  const int di = cfg_.d_inner();
  tok_emb_ = init_matrix(vocab_size, cfg_.d_model, rng, 0.02);
  blocks_.resize(std::size_t(cfg_.n_layers));
  for (auto& b : blocks_) {
    b.norm = Tensor::full({cfg_.d_model}, Real(1), true);
    b.in_proj = init_matrix(cfg_.d_model, 2 * di, rng);
    {
      // depthwise conv: uniform(-1/sqrt(K), 1/sqrt(K))
      std::vector<Real> w(std::size_t(di) * std::size_t(cfg_.d_conv));
      const double bound = 1.0 / std::sqrt(double(cfg_.d_conv));
      for (auto& v : w) v = Real(rng.uniform(-bound, bound));
      b.conv_w = Tensor::from_data({di, cfg_.d_conv}, std::move(w), true);
      b.conv_b = Tensor::zeros({di}, true);
    }
    b.x_proj = init_matrix(di, cfg_.dt_rank() + 2 * cfg_.d_state, rng);
    b.dt_w = init_matrix(cfg_.dt_rank(), di, rng);
    {
      // bias so softplus(dt) lands in [0.01, 0.1] at init
      std::vector<Real> bias(static_cast<std::size_t>(di));
      for (auto& v : bias) {
        const double dt = std::exp(rng.uniform(std::log(0.01), std::log(0.1)));
        v = Real(std::log(std::expm1(dt)));
      }
      b.dt_b = Tensor::from_data({di}, std::move(bias), true);
    }
    {
      // log_a[d,n] = ln(n+1): negative-real diagonal state matrix by
      // construction once mapped through -exp(.)
      std::vector<Real> la(std::size_t(di) * std::size_t(cfg_.d_state));
      for (int d = 0; d < di; ++d)
        for (int n = 0; n < cfg_.d_state; ++n)
          la[std::size_t(d) * std::size_t(cfg_.d_state) + std::size_t(n)] =
              Real(std::log(double(n + 1)));
      b.log_a = Tensor::from_data({di, cfg_.d_state}, std::move(la), true);
    }
    b.d_skip = Tensor::full({di}, Real(1), true);
    b.out_proj = init_matrix(di, cfg_.d_model, rng);
  }
  final_norm_ = Tensor::full({cfg_.d_model}, Real(1), true);
  mem_proj_ = init_matrix(cfg_.d_model, cfg_.d_mem, rng);
}

Tensor CompressorModel::block_forward(int layer, const Tensor& x, bool frozen) {
  auto& b = blocks_[std::size_t(layer)];
  auto P = [frozen](const Tensor& t) { return frozen ? t.detached() : t; };
  const int di = cfg_.d_inner();
  const int dtr = cfg_.dt_rank();

  Tensor h = rms_norm(x, P(b.norm));
  Tensor xz = matmul(h, P(b.in_proj));
  Tensor xs = slice_cols(xz, 0, di);
  Tensor gate = slice_cols(xz, di, 2 * di);
  xs = silu(causal_conv1d(xs, P(b.conv_w), P(b.conv_b)));

  Tensor proj = matmul(xs, P(b.x_proj));
  Tensor dt_low = slice_cols(proj, 0, dtr);
  Tensor b_t = slice_cols(proj, dtr, dtr + cfg_.d_state);
  Tensor c_t = slice_cols(proj, dtr + cfg_.d_state, dtr + 2 * cfg_.d_state);
  Tensor delta = softplus(add(matmul(dt_low, P(b.dt_w)), P(b.dt_b)));
  Tensor a = neg(exp_op(P(b.log_a)));

  Tensor y = selective_scan(xs, delta, a, b_t, c_t, P(b.d_skip));
  y = mul(y, silu(gate));
  return add(x, matmul(y, P(b.out_proj)));
}

Tensor CompressorModel::forward(const std::vector<int>& tokens, bool frozen) {
  if (tokens.empty()) fail_arg("compressor: empty token sequence");
  if (int(tokens.size()) > cfg_.max_seq_len)
    fail_arg("compressor: sequence of " + std::to_string(tokens.size()) +
             " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  auto P = [frozen](const Tensor& t) { return frozen ? t.detached() : t; };
  Tensor x = embedding(P(tok_emb_), tokens);
  for (int l = 0; l < cfg_.n_layers; ++l) x = block_forward(l, x, frozen);
  return rms_norm(x, P(final_norm_));
}

Tensor CompressorModel::compress_window(const Conversation& conv,
                                        const Vocab& vocab, std::size_t first,
                                        std::size_t count, bool frozen) {
  if (count == 0) return Tensor::zeros({0, cfg_.d_mem});
  std::vector<int> tokens;
  std::vector<int> mem_positions;
  for (std::size_t u = first; u < first + count; ++u) {
    const auto& utt = conv.utterances.at(u);
    const auto ids = vocab.encode(utt.text);
    if (ids.empty())
      fail_arg("compress: utterance " + std::to_string(u) + " of '" + conv.id +
               "' tokenizes to no tokens");
    if (int(ids.size()) + 2 > cfg_.max_seq_len)
      fail_arg("compress: utterance " + std::to_string(u) + " of '" + conv.id +
               "' exceeds max sequence length " + std::to_string(cfg_.max_seq_len));
    tokens.push_back(Vocab::speaker_token(utt.speaker % Vocab::kNumSpeakers));
    tokens.insert(tokens.end(), ids.begin(), ids.end());
    tokens.push_back(Vocab::kMem);
    mem_positions.push_back(int(tokens.size()) - 1);
  }
  Tensor hidden = forward(tokens, frozen);
  Tensor mems = embedding(hidden, mem_positions);  // row gather
  return matmul(mems, frozen ? mem_proj_.detached() : mem_proj_);
}

Tensor CompressorModel::compress_tape(const Conversation& conv,
                                      const Vocab& vocab, bool frozen) {
  return compress_window(conv, vocab, 0, conv.utterances.size(), frozen);
}

std::vector<MemoryEmbedding> CompressorModel::compress(const Conversation& conv,
                                                       const Vocab& vocab) {
  NoGradGuard no_grad;
  std::vector<MemoryEmbedding> out;
  if (conv.utterances.empty()) return out;
  Tensor rows = compress_tape(conv, vocab, true);
  const Real* p = rows.data();
  for (int u = 0; u < rows.dim(0); ++u) {
    MemoryEmbedding m;
    m.utterance_index = u;
    m.vector.assign(p + std::size_t(u) * std::size_t(cfg_.d_mem),
                    p + std::size_t(u + 1) * std::size_t(cfg_.d_mem));
    for (Real v : m.vector)
      if (!std::isfinite(v))
        fail("compress: non-finite memory embedding for utterance " +
             std::to_string(u) + " of '" + conv.id + "'");
    out.push_back(std::move(m));
  }
  return out;
}

ParamRefs CompressorModel::params() {
  ParamRefs refs;
  refs.push_back({"compressor/tok_emb", &tok_emb_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string base = "compressor/layer" + std::to_string(i) + "/";
    auto& b = blocks_[i];
    refs.push_back({base + "norm", &b.norm});
    refs.push_back({base + "in_proj", &b.in_proj});
    refs.push_back({base + "conv_w", &b.conv_w});
    refs.push_back({base + "conv_b", &b.conv_b});
    refs.push_back({base + "x_proj", &b.x_proj});
    refs.push_back({base + "dt_w", &b.dt_w});
    refs.push_back({base + "dt_b", &b.dt_b});
    refs.push_back({base + "log_a", &b.log_a});
    refs.push_back({base + "d_skip", &b.d_skip});
    refs.push_back({base + "out_proj", &b.out_proj});
  }
  refs.push_back({"compressor/final_norm", &final_norm_});
  refs.push_back({"compressor/mem_proj", &mem_proj_});
  return refs;
}

std::string CompressorModel::config_json() const {
  nlohmann::json j;
  j["d_model"] = cfg_.d_model;
  j["d_state"] = cfg_.d_state;
  j["d_conv"] = cfg_.d_conv;
  j["expand"] = cfg_.expand;
  j["n_layers"] = cfg_.n_layers;
  j["d_mem"] = cfg_.d_mem;
  j["max_seq_len"] = cfg_.max_seq_len;
  j["vocab_size"] = tok_emb_.defined() ? tok_emb_.dim(0) : 0;
  return j.dump();
}

CompressorModel CompressorModel::from_config_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  CompressorConfig cfg;
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_state = j.at("d_state").get<int>();
  cfg.d_conv = j.at("d_conv").get<int>();
  cfg.expand = j.at("expand").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.d_mem = j.at("d_mem").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  Rng rng(0);
  return CompressorModel(cfg, j.at("vocab_size").get<int>(), rng);
}

std::vector<int> reconstruction_target(
    const std::vector<std::vector<int>>& targets,
    const std::vector<int>& speakers) {
  std::vector<int> out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets.size() > 1)
      out.push_back(Vocab::speaker_token(speakers.at(i) % Vocab::kNumSpeakers));
    out.insert(out.end(), targets[i].begin(), targets[i].end());
  }
  return out;
}

Tensor reconstruction_loss(const Tensor& memories,
                           const std::vector<std::vector<int>>& targets,
                           const std::vector<int>& speakers, LmModel& lm,
                           const Vocab& vocab, bool lm_frozen) {
  if (!memories.defined() || memories.dim(0) == 0)
    fail_arg("reconstruction_loss: no memories");
  if (memories.dim(1) != lm.config().d_model)
    fail_arg("reconstruction_loss: memory width " + std::to_string(memories.dim(1)) +
             " does not match LM embedding width " +
             std::to_string(lm.config().d_model));
  if (std::size_t(memories.dim(0)) != targets.size())
    fail_arg("reconstruction_loss: " + std::to_string(memories.dim(0)) +
             " memories vs " + std::to_string(targets.size()) + " targets");
  const bool single = targets.size() == 1;
  const auto tmpl = single ? InstructionTemplate::reconstruct_one(vocab)
                           : InstructionTemplate::reconstruct_many(vocab);
  MixedInput input = build_input(Segment::vectors_of(memories), std::nullopt, {},
                                 tmpl, lm.config().max_seq_len);
  const auto response = reconstruction_target(targets, speakers);
  const auto aligned = append_response(input, response, true, lm.config().max_seq_len);
  return lm.loss(input, aligned, lm_frozen);
}

}  // namespace emochat
