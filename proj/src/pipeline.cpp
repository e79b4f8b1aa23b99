#include "emochat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

namespace emochat {

namespace {

constexpr std::uint64_t kSplitStream = 0x5917;

const char* kStageNames[kNumStages] = {
    "gen-corpus",          "train-embedder",      "pretrain-lm",
    "pretrain-compressor", "finetune-compressor", "train-lm",
    "gen-counter",         "train-epo"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void require_file(const std::string& path, Stage stage, const char* producer) {
  if (!std::filesystem::exists(path))
    fail("stage '" + std::string(stage_name(stage)) +
         "': missing prerequisite " + path + " (run '" + producer + "' first)");
}

}  // namespace

const char* stage_name(Stage s) { return kStageNames[int(s)]; }

std::string OutPaths::stage_csv(Stage s) const {
  return join(std::string(stage_name(s)) + ".csv");
}

std::string OutPaths::marker(Stage s) const {
  return join(std::string(".done_") + stage_name(s));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail("cannot create directory " + dir + ": " + ec.message());
}

void echo_config(const RunConfig& cfg, const OutPaths& paths) {
  ensure_dir(paths.dir);
  write_text_file(paths.config_echo(), cfg.to_json() + "\n");
}

namespace {

std::string model_blob(const std::string& kind, const std::string& model_cfg,
                       const Vocab& vocab) {
  nlohmann::json j;
  j["kind"] = kind;
  j["model"] = nlohmann::json::parse(model_cfg);
  j["vocab"] = vocab.payload_words();
  return j.dump();
}

std::pair<nlohmann::json, Vocab> parse_blob(const std::string& blob,
                                            const std::string& path,
                                            const std::string& expect_kind) {
  const auto j = nlohmann::json::parse(blob);
  if (j.at("kind").get<std::string>() != expect_kind)
    fail("load: " + path + " holds a '" + j.at("kind").get<std::string>() +
         "' model, expected '" + expect_kind + "'");
  Vocab vocab = Vocab::build(j.at("vocab").get<std::vector<std::string>>());
  return {j.at("model"), vocab};
}

}  // namespace

void save_lm(const std::string& path, LmModel& model, const Vocab& vocab) {
  save_checkpoint(path, model_blob("lm", model.config_json(), vocab),
                  model.params());
}

void save_compressor(const std::string& path, CompressorModel& model,
                     const Vocab& vocab) {
  save_checkpoint(path, model_blob("compressor", model.config_json(), vocab),
                  model.params());
}

void save_embedder(const std::string& path, EmbedderModel& model,
                   const Vocab& vocab) {
  save_checkpoint(path, model_blob("embedder", model.config_json(), vocab),
                  model.params());
}

LoadedLm load_lm(const std::string& path) {
  const auto ckpt = load_checkpoint(path);
  auto [model_cfg, vocab] = parse_blob(ckpt.config_json, path, "lm");
  LoadedLm out{std::move(vocab), LmModel::from_config_json(model_cfg.dump())};
  load_into(ckpt, out.model.params());
  return out;
}

LoadedCompressor load_compressor(const std::string& path) {
  const auto ckpt = load_checkpoint(path);
  auto [model_cfg, vocab] = parse_blob(ckpt.config_json, path, "compressor");
  LoadedCompressor out{std::move(vocab),
                       CompressorModel::from_config_json(model_cfg.dump())};
  load_into(ckpt, out.model.params());
  return out;
}

LoadedEmbedder load_embedder(const std::string& path) {
  const auto ckpt = load_checkpoint(path);
  auto [model_cfg, vocab] = parse_blob(ckpt.config_json, path, "embedder");
  LoadedEmbedder out{std::move(vocab),
                     EmbedderModel::from_config_json(model_cfg.dump())};
  load_into(ckpt, out.model.params());
  return out;
}

std::pair<Corpus, Corpus> load_and_split(const RunConfig& cfg,
                                         const std::string& corpus_path) {
  const Corpus corpus = load_corpus(corpus_path);
  return split_corpus(corpus, cfg.train_fraction,
                      Rng::derive(cfg.seed, kSplitStream));
}

// ---------------------------------------------------------------------------
// training-loop scaffolding

namespace {

StageResult train_loop(
    const StageSchedule& sched, std::size_t n_samples, std::uint64_t seed,
    bool higher_better, const std::string& csv_path, Adam& adam,
    const std::function<Tensor(const std::vector<std::size_t>&)>& batch_loss,
    const std::function<double()>& validate) {
  if (n_samples == 0) fail("train_loop: no samples");
  std::ofstream csv(csv_path);
  if (!csv) fail("cannot open " + csv_path);
  csv << "step,loss,val_metric\n";

  Rng rng(Rng::derive(seed, 0x100b));
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n_samples;  // forces a shuffle on first use

  StageResult result;
  double best = higher_better ? -1e300 : 1e300;
  int evals_since_best = 0;
  std::deque<double> first_losses, last_losses;

  const int batch = std::max(1, sched.batch);
  for (int step = 1; step <= sched.max_steps; ++step) {
    std::vector<std::size_t> idx;
    idx.reserve(std::size_t(batch));
    for (int b = 0; b < batch; ++b) {
      if (cursor >= n_samples) {
        for (std::size_t i = n_samples; i > 1; --i)
          std::swap(order[i - 1], order[size_t(rng.uniform_int(std::int64_t(i)))]);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    Tensor loss = batch_loss(idx);
    const double loss_val = double(loss.item());
    if (!std::isfinite(loss_val))
      fail("train_loop: non-finite loss at step " + std::to_string(step));
    loss.backward();
    adam.step();

    if (first_losses.size() < 5) first_losses.push_back(loss_val);
    last_losses.push_back(loss_val);
    if (last_losses.size() > 5) last_losses.pop_front();
    result.steps = step;

    std::string val_field;
    if (sched.eval_every > 0 && step % sched.eval_every == 0 && validate) {
      const double metric = validate();
      val_field = fmt(metric);
      result.final_val_metric = metric;
      const bool improved = higher_better ? metric > best : metric < best;
      if (improved) {
        best = metric;
        evals_since_best = 0;
      } else {
        ++evals_since_best;
      }
    }
    if (step % 25 == 0 || !val_field.empty() || step == 1) {
      csv << step << "," << fmt(loss_val) << "," << val_field << "\n";
      csv.flush();
    }
    if (evals_since_best >= sched.patience) break;
  }

  result.initial_loss =
      std::accumulate(first_losses.begin(), first_losses.end(), 0.0) /
      double(std::max<std::size_t>(1, first_losses.size()));
  result.final_loss =
      std::accumulate(last_losses.begin(), last_losses.end(), 0.0) /
      double(std::max<std::size_t>(1, last_losses.size()));
  return result;
}

std::vector<int> speaker_prefixed_tokens(const Vocab& vocab, const Utterance& u) {
  std::vector<int> ids;
  ids.push_back(Vocab::speaker_token(u.speaker % Vocab::kNumSpeakers));
  const auto t = vocab.encode(u.text);
  ids.insert(ids.end(), t.begin(), t.end());
  return ids;
}

std::vector<int> raw_history(const Vocab& vocab, const Conversation& conv,
                             std::size_t end_turn, int window) {
  const std::size_t keep = std::min<std::size_t>(end_turn, std::size_t(window));
  std::vector<int> ids;
  for (std::size_t u = end_turn - keep; u < end_turn; ++u) {
    const auto t = speaker_prefixed_tokens(vocab, conv.utterances[u]);
    ids.insert(ids.end(), t.begin(), t.end());
  }
  return ids;
}

}  // namespace

Tensor dialogue_loss(LmModel& lm, const Conversation& conv, std::size_t turn,
                     const Vocab& vocab, CompressorModel* compressor,
                     int raw_history_window, bool hint, bool lm_frozen) {
  if (turn < 1 || turn >= conv.utterances.size())
    fail_arg("dialogue_loss: turn out of range");
  Segment history = Segment::tokens({});
  if (turn >= 2) {
    if (compressor) {
      history = Segment::vectors_of(
          compressor->compress_window(conv, vocab, 0, turn - 1, /*frozen=*/true));
    } else {
      history = Segment::tokens(raw_history(vocab, conv, turn - 1, raw_history_window));
    }
  }
  std::vector<int> sentence = speaker_prefixed_tokens(vocab, conv.utterances[turn - 1]);
  if (hint)
    sentence.insert(sentence.begin(),
                    Vocab::emotion_token(conv.utterances[turn].emotion));
  const auto tmpl = InstructionTemplate::dialogue(vocab);
  MixedInput input = build_input(history, std::nullopt, sentence, tmpl,
                                 lm.config().max_seq_len);
  const auto response = vocab.encode(conv.utterances[turn].text);
  const auto targets = append_response(input, response, true, lm.config().max_seq_len);
  return lm.loss(input, targets, lm_frozen);
}

// ---------------------------------------------------------------------------
// reconstruction evaluation helpers

namespace {

struct Window {
  std::size_t conv = 0;
  std::size_t first = 0;
  std::size_t count = 1;
};

std::vector<Window> make_windows(const Corpus& corpus, int k_min, int k_max,
                                 int max_samples, std::uint64_t seed) {
  std::vector<Window> all;
  Rng rng(seed);
  for (std::size_t ci = 0; ci < corpus.size(); ++ci) {
    const std::size_t n = corpus.conversations[ci].utterances.size();
    if (n == 0) continue;
    const std::size_t k = std::size_t(
        std::clamp<std::int64_t>(k_min + rng.uniform_int(k_max - k_min + 1), 1,
                                 std::int64_t(n)));
    const std::size_t first = std::size_t(rng.uniform_int(std::int64_t(n - k + 1)));
    all.push_back({ci, first, k});
  }
  for (std::size_t i = all.size(); i > 1; --i)
    std::swap(all[i - 1], all[size_t(rng.uniform_int(std::int64_t(i)))]);
  if (int(all.size()) > max_samples) all.resize(std::size_t(max_samples));
  return all;
}

struct ReconSample {
  Tensor memories;
  std::vector<std::vector<int>> targets;
  std::vector<int> speakers;
};

ReconSample build_recon_sample(CompressorModel& comp, const Corpus& corpus,
                               const Vocab& vocab, const Window& w, bool frozen) {
  const auto& conv = corpus.conversations[w.conv];
  ReconSample s;
  s.memories = comp.compress_window(conv, vocab, w.first, w.count, frozen);
  for (std::size_t u = w.first; u < w.first + w.count; ++u) {
    s.targets.push_back(vocab.encode(conv.utterances[u].text));
    s.speakers.push_back(conv.utterances[u].speaker);
  }
  return s;
}

}  // namespace

double recon_token_accuracy(CompressorModel& comp, LmModel& lm,
                            const Corpus& corpus, const Vocab& vocab, int k_min,
                            int k_max, int max_samples, std::uint64_t seed) {
  NoGradGuard no_grad;
  const auto windows = make_windows(corpus, k_min, k_max, max_samples, seed);
  if (windows.empty()) fail("recon_token_accuracy: no samples");
  std::size_t hits = 0, total = 0;
  for (const auto& w : windows) {
    ReconSample s = build_recon_sample(comp, corpus, vocab, w, true);
    const bool single = s.targets.size() == 1;
    const auto tmpl = single ? InstructionTemplate::reconstruct_one(vocab)
                             : InstructionTemplate::reconstruct_many(vocab);
    MixedInput input = build_input(Segment::vectors_of(s.memories), std::nullopt,
                                   {}, tmpl, lm.config().max_seq_len);
    const auto response = reconstruction_target(s.targets, s.speakers);
    const auto targets = append_response(input, response, true, lm.config().max_seq_len);
    std::vector<int> rows;
    for (std::size_t p = 0; p < input.loss_mask.size(); ++p)
      if (input.loss_mask[p]) rows.push_back(int(p));
    Tensor hidden = lm.forward_hidden(input, true);
    Tensor logits = lm.logits_rows(hidden, rows, true);
    const int v = logits.dim(1);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const Real* row = logits.data() + std::size_t(i) * std::size_t(v);
      int best = 0;
      for (int c = 1; c < v; ++c)
        if (row[c] > row[best]) best = c;
      hits += best == targets[i];
      ++total;
    }
  }
  return double(hits) / double(total);
}

ReconEval recon_decode_eval(CompressorModel& comp, LmModel& lm,
                            const Corpus& corpus, const Vocab& vocab, int k_min,
                            int k_max, int max_samples, std::uint64_t seed) {
  NoGradGuard no_grad;
  const auto windows = make_windows(corpus, k_min, k_max, max_samples, seed);
  if (windows.empty()) fail("recon_decode_eval: no samples");
  ReconEval ev;
  double bleu_sum = 0;
  std::size_t hits = 0, total = 0;
  for (const auto& w : windows) {
    ReconSample s = build_recon_sample(comp, corpus, vocab, w, true);
    const bool single = s.targets.size() == 1;
    const auto tmpl = single ? InstructionTemplate::reconstruct_one(vocab)
                             : InstructionTemplate::reconstruct_many(vocab);
    MixedInput prompt = build_input(Segment::vectors_of(s.memories), std::nullopt,
                                    {}, tmpl, lm.config().max_seq_len);
    const auto reference = reconstruction_target(s.targets, s.speakers);
    DecodeConfig decode;
    decode.greedy = true;
    decode.max_new_tokens = int(reference.size()) + 8;
    const auto decoded = lm.generate(prompt, decode);
    bleu_sum += bleu_n(decoded, {reference}, 1);
    const std::size_t n = std::min(decoded.size(), reference.size());
    for (std::size_t i = 0; i < n; ++i) hits += decoded[i] == reference[i];
    total += reference.size();
    ++ev.n_samples;
  }
  ev.bleu1 = bleu_sum / double(ev.n_samples);
  ev.token_accuracy = total ? double(hits) / double(total) : 0.0;
  return ev;
}

// ---------------------------------------------------------------------------
// stages

void stage_gen_corpus(const RunConfig& cfg, const OutPaths& paths) {
  ensure_dir(paths.dir);
  const Corpus corpus = generate_synthetic_corpus(cfg.corpus);
  save_corpus(corpus, paths.corpus());
  const CorpusStats stats = corpus_stats(corpus);
  nlohmann::json j;
  j["n_conversations"] = stats.n_conversations;
  j["n_utterances"] = stats.n_utterances;
  j["vocab_words"] = stats.vocab_words;
  j["mean_utterance_tokens"] = stats.mean_utterance_tokens;
  j["recall_fraction"] = stats.recall_fraction;
  j["emotion_histogram"] = stats.emotion_histogram;
  write_text_file(paths.corpus_stats(), j.dump(2) + "\n");
}

StageResult stage_train_embedder(const RunConfig& cfg, const OutPaths& paths) {
  require_file(paths.corpus(), Stage::kTrainEmbedder, "gen-corpus");
  auto [train, test] = load_and_split(cfg, paths.corpus());
  const Vocab vocab = Vocab::build(corpus_word_list(train));

  std::vector<LabeledSentence> data;
  for (const auto& conv : train.conversations)
    for (const auto& u : conv.utterances)
      data.push_back({vocab.encode(u.text), u.emotion});

  Rng init_rng(Rng::derive(cfg.seed, 0xE0));
  EmbedderModel model({.vocab_size = vocab.size(), .d_emb = cfg.embedder.d_emb,
                       .d_hidden = cfg.embedder.d_hidden},
                      init_rng);
  EmbedderTrainConfig tc;
  tc.epochs = cfg.embedder.epochs;
  tc.batch = cfg.embedder.batch;
  tc.lr = cfg.embedder.lr;
  tc.seed = Rng::derive(cfg.seed, 0xE1);
  const auto report = train_classifier(model, data, tc);

  std::ofstream csv(paths.stage_csv(Stage::kTrainEmbedder));
  csv << "step,loss,val_metric\n";
  for (const auto& [step, loss] : report.loss_log)
    csv << step << "," << fmt(loss) << ",\n";
  for (const auto& [epoch, acc] : report.history)
    csv << "epoch_" << epoch << ",," << fmt(acc) << "\n";

  save_embedder(paths.embedder(), model, vocab);
  StageResult r;
  r.initial_loss = report.loss_log.empty() ? 0 : report.loss_log.front().second;
  r.final_loss = report.loss_log.empty() ? 0 : report.loss_log.back().second;
  r.final_val_metric = report.val_accuracy;
  r.steps = int(report.loss_log.size());
  return r;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> turn_index(const Corpus& c) {
  std::vector<std::pair<std::size_t, std::size_t>> turns;
  for (std::size_t ci = 0; ci < c.size(); ++ci)
    for (std::size_t t = 1; t < c.conversations[ci].utterances.size(); ++t)
      turns.push_back({ci, t});
  return turns;
}

double validation_dialogue_loss(LmModel& lm, const Corpus& test,
                                const Vocab& vocab, CompressorModel* comp,
                                int window, int max_samples) {
  NoGradGuard no_grad;
  const auto turns = turn_index(test);
  double sum = 0;
  int n = 0;
  for (const auto& [ci, t] : turns) {
    if (n >= max_samples) break;
    Tensor l = dialogue_loss(lm, test.conversations[ci], t, vocab, comp, window,
                             /*hint=*/false, /*lm_frozen=*/true);
    sum += double(l.item());
    ++n;
  }
  return n ? sum / n : 0.0;
}

}  // namespace

namespace {

// Mean-of-token-embedding stand-in for a memory vector; gradients flow into
// the embedding table so the LM shapes a decodable memory space.
Tensor pseudo_memories(LmModel& lm, const Conversation& conv, const Vocab& vocab,
                       std::size_t first, std::size_t count) {
  std::vector<Tensor> rows;
  for (std::size_t u = first; u < first + count; ++u) {
    const auto ids = vocab.encode(conv.utterances[u].text);
    Tensor mean = mean_axis(lm.token_embeddings(ids), 0);
    rows.push_back(scale(reshape(mean, {1, lm.config().d_model}), Real(4)));
  }
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

}  // namespace

StageResult stage_pretrain_lm(const RunConfig& cfg, const OutPaths& paths) {
  require_file(paths.corpus(), Stage::kPretrainLm, "gen-corpus");
  auto [train, test] = load_and_split(cfg, paths.corpus());
  const Vocab vocab = Vocab::build(corpus_word_list(train));

  Rng init_rng(Rng::derive(cfg.seed, 0xA0));
  LmModel lm({.vocab_size = vocab.size(), .d_model = cfg.lm.d_model,
              .n_layers = cfg.lm.n_layers, .n_heads = cfg.lm.n_heads,
              .d_ff = cfg.lm.d_ff, .max_seq_len = cfg.lm.max_seq_len},
             init_rng);
  Adam adam(lm.params(), {.lr = cfg.lm_pretrain.lr});

  const auto turns = turn_index(train);
  Rng hint_rng(Rng::derive(cfg.seed, 0xA1));

  StageResult r = train_loop(
      cfg.lm_pretrain, turns.size(), Rng::derive(cfg.seed, 0xA2),
      /*higher_better=*/false, paths.stage_csv(Stage::kPretrainLm), adam,
      [&](const std::vector<std::size_t>& batch) {
        Tensor sum;
        for (std::size_t i : batch) {
          Tensor l;
          if (hint_rng.uniform() < double(cfg.lm.pseudo_memory_fraction)) {
            // reconstruction-format sample on pseudo-memories
            const auto& [ci, t] = turns[i];
            const auto& conv = train.conversations[ci];
            const std::size_t n = conv.utterances.size();
            std::size_t k = 1;
            if (hint_rng.uniform() < 0.4)
              k = std::min<std::size_t>(n, 2 + std::size_t(hint_rng.uniform_int(4)));
            const std::size_t first =
                std::size_t(hint_rng.uniform_int(std::int64_t(n - k + 1)));
            Tensor mems = pseudo_memories(lm, conv, vocab, first, k);
            std::vector<std::vector<int>> targets;
            std::vector<int> speakers;
            for (std::size_t u = first; u < first + k; ++u) {
              targets.push_back(vocab.encode(conv.utterances[u].text));
              speakers.push_back(conv.utterances[u].speaker);
            }
            l = reconstruction_loss(mems, targets, speakers, lm, vocab,
                                    /*lm_frozen=*/false);
          } else {
            const auto& [ci, t] = turns[i];
            const bool hint =
                hint_rng.uniform() < double(cfg.lm.emotion_hint_prob);
            l = dialogue_loss(lm, train.conversations[ci], t, vocab, nullptr,
                              cfg.lm.history_utterances, hint);
          }
          sum = sum.defined() ? add(sum, l) : l;
        }
        return scale(sum, Real(1) / Real(batch.size()));
      },
      [&]() {
        return validation_dialogue_loss(lm, test, vocab, nullptr,
                                        cfg.lm.history_utterances, 128);
      });

  save_lm(paths.lm_base(), lm, vocab);
  return r;
}

namespace {

StageResult run_compressor_stage(const RunConfig& cfg, const OutPaths& paths,
                                 Stage stage, int k_min, int k_max,
                                 const StageSchedule& sched,
                                 const std::string& init_ckpt,
                                 const std::string& out_ckpt) {
  require_file(paths.corpus(), stage, "gen-corpus");
  require_file(paths.lm_base(), stage, "pretrain-lm");
  auto [train, test] = load_and_split(cfg, paths.corpus());
  LoadedLm lm = load_lm(paths.lm_base());

  CompressorModel comp;
  if (init_ckpt.empty()) {
    Rng init_rng(Rng::derive(cfg.seed, 0xC0 + std::uint64_t(stage)));
    CompressorConfig cc = cfg.compressor;
    if (cc.d_mem != lm.model.config().d_model)
      fail_arg("compressor d_mem " + std::to_string(cc.d_mem) +
               " must equal LM embedding width " +
               std::to_string(lm.model.config().d_model));
    comp = CompressorModel(cc, lm.vocab.size(), init_rng);
  } else {
    require_file(init_ckpt, stage, "pretrain-compressor");
    comp = load_compressor(init_ckpt).model;
  }

  Adam adam(comp.params(), {.lr = sched.lr});
  // windows over the train split; singles use every utterance, multis sample
  std::vector<Window> samples;
  Rng wrng(Rng::derive(cfg.seed, 0xC8 + std::uint64_t(stage)));
  for (std::size_t ci = 0; ci < train.size(); ++ci) {
    const std::size_t n = train.conversations[ci].utterances.size();
    if (k_max == 1) {
      for (std::size_t u = 0; u < n; ++u) samples.push_back({ci, u, 1});
    } else {
      for (int rep = 0; rep < 4; ++rep) {
        const std::size_t k = std::size_t(std::clamp<std::int64_t>(
            k_min + wrng.uniform_int(k_max - k_min + 1), 1, std::int64_t(n)));
        const std::size_t first =
            std::size_t(wrng.uniform_int(std::int64_t(n - k + 1)));
        samples.push_back({ci, first, k});
      }
    }
  }

  StageResult r = train_loop(
      sched, samples.size(), Rng::derive(cfg.seed, 0xC4 + std::uint64_t(stage)),
      /*higher_better=*/true, paths.stage_csv(stage), adam,
      [&](const std::vector<std::size_t>& batch) {
        Tensor sum;
        for (std::size_t i : batch) {
          ReconSample s =
              build_recon_sample(comp, train, lm.vocab, samples[i], false);
          Tensor l = reconstruction_loss(s.memories, s.targets, s.speakers,
                                         lm.model, lm.vocab, /*lm_frozen=*/true);
          sum = sum.defined() ? add(sum, l) : l;
        }
        return scale(sum, Real(1) / Real(batch.size()));
      },
      [&]() {
        return recon_token_accuracy(comp, lm.model, test, lm.vocab, k_min,
                                    std::min(k_max, 5), 200,
                                    Rng::derive(cfg.seed, 0xC6));
      });

  save_compressor(out_ckpt, comp, lm.vocab);
  return r;
}

}  // namespace

StageResult stage_pretrain_compressor(const RunConfig& cfg, const OutPaths& paths) {
  return run_compressor_stage(cfg, paths, Stage::kPretrainCompressor, 1, 1,
                              cfg.compressor_pretrain, "", paths.compressor_pre());
}

StageResult stage_finetune_compressor(const RunConfig& cfg, const OutPaths& paths) {
  return run_compressor_stage(cfg, paths, Stage::kFinetuneCompressor, 2, 8,
                              cfg.compressor_finetune, paths.compressor_pre(),
                              paths.compressor());
}

StageResult stage_train_lm(const RunConfig& cfg, const OutPaths& paths) {
  require_file(paths.corpus(), Stage::kTrainLm, "gen-corpus");
  require_file(paths.lm_base(), Stage::kTrainLm, "pretrain-lm");
  require_file(paths.compressor(), Stage::kTrainLm, "finetune-compressor");
  auto [train, test] = load_and_split(cfg, paths.corpus());
  LoadedLm lm = load_lm(paths.lm_base());
  LoadedCompressor comp = load_compressor(paths.compressor());

  Adam adam(lm.model.params(), {.lr = cfg.lm_joint.lr});
  const auto turns = turn_index(train);
  Rng hint_rng(Rng::derive(cfg.seed, 0xB1));
  Rng recon_rng(Rng::derive(cfg.seed, 0xB2));

  StageResult r = train_loop(
      cfg.lm_joint, turns.size(), Rng::derive(cfg.seed, 0xB3),
      /*higher_better=*/false, paths.stage_csv(Stage::kTrainLm), adam,
      [&](const std::vector<std::size_t>& batch) {
        Tensor sum;
        for (std::size_t i : batch) {
          const auto& [ci, t] = turns[i];
          const bool hint = hint_rng.uniform() < double(cfg.lm.emotion_hint_prob);
          Tensor l = dialogue_loss(lm.model, train.conversations[ci], t,
                                   lm.vocab, &comp.model, 0, hint);
          sum = sum.defined() ? add(sum, l) : l;
        }
        Tensor dial = scale(sum, Real(1) / Real(batch.size()));
        if (cfg.lm.reconstruction_weight <= 0) return dial;
        // joint memory-reconstruction term, compressor frozen, LM trainable
        const std::size_t ci = std::size_t(recon_rng.uniform_int(std::int64_t(train.size())));
        const auto& conv = train.conversations[ci];
        const std::size_t n = conv.utterances.size();
        const std::size_t k = std::size_t(
            std::clamp<std::int64_t>(2 + recon_rng.uniform_int(7), 1, std::int64_t(n)));
        const std::size_t first =
            std::size_t(recon_rng.uniform_int(std::int64_t(n - k + 1)));
        ReconSample s = build_recon_sample(comp.model, train, lm.vocab,
                                           {ci, first, k}, true);
        Tensor recon = reconstruction_loss(s.memories, s.targets, s.speakers,
                                           lm.model, lm.vocab, /*lm_frozen=*/false);
        return add(dial, scale(recon, cfg.lm.reconstruction_weight));
      },
      [&]() {
        return validation_dialogue_loss(lm.model, test, lm.vocab, &comp.model,
                                        0, 128);
      });

  save_lm(paths.lm_joint(), lm.model, lm.vocab);
  return r;
}

CounterStats stage_gen_counter(const RunConfig& cfg, const OutPaths& paths) {
  require_file(paths.corpus(), Stage::kGenCounter, "gen-corpus");
  require_file(paths.lm_joint(), Stage::kGenCounter, "train-lm");
  require_file(paths.compressor(), Stage::kGenCounter, "finetune-compressor");
  require_file(paths.embedder(), Stage::kGenCounter, "train-embedder");
  auto [train, test] = load_and_split(cfg, paths.corpus());
  LoadedLm lm = load_lm(paths.lm_joint());
  LoadedCompressor comp = load_compressor(paths.compressor());
  LoadedEmbedder emb = load_embedder(paths.embedder());

  CounterConfig cc = cfg.counter;
  cc.seed = Rng::derive(cfg.seed, 0xD0) ^ cfg.counter.seed;
  CounterStats stats = build_preference_dataset(
      train, lm.model, cc.condition_on_history ? &comp.model : nullptr,
      emb.model, lm.vocab, cc, paths.pairs(), nullptr);
  write_counter_summary(stats, paths.pairs_summary(), paths.pairs_stats());
  return stats;
}

EpoStageResult stage_train_epo(const RunConfig& cfg, const OutPaths& paths) {
  require_file(paths.corpus(), Stage::kTrainEpo, "gen-corpus");
  require_file(paths.lm_joint(), Stage::kTrainEpo, "train-lm");
  require_file(paths.compressor(), Stage::kTrainEpo, "finetune-compressor");
  require_file(paths.pairs(), Stage::kTrainEpo, "gen-counter");
  auto [train, test] = load_and_split(cfg, paths.corpus());
  LoadedLm lm = load_lm(paths.lm_joint());
  LoadedCompressor comp = load_compressor(paths.compressor());
  const auto pairs = load_preference_pairs(paths.pairs());
  if (pairs.empty()) fail("train-epo: preference dataset is empty");

  std::unordered_map<std::string, const Conversation*> by_id;
  for (const auto& conv : train.conversations) by_id[conv.id] = &conv;

  // Resolve prompts once; memories come from the frozen compressor. Each pair
  // must reproduce its source turn exactly.
  std::vector<EpoItem> items;
  items.reserve(pairs.size());
  {
    NoGradGuard no_grad;
    const auto tmpl = InstructionTemplate::dialogue(lm.vocab);
    for (const auto& p : pairs) {
      auto it = by_id.find(p.conv_id);
      if (it == by_id.end())
        fail("train-epo: pair references unknown conversation '" + p.conv_id + "'");
      const Conversation& conv = *it->second;
      if (p.turn < 1 || std::size_t(p.turn) >= conv.utterances.size())
        fail("train-epo: pair turn out of range in '" + p.conv_id + "'");
      const auto sentence =
          speaker_prefixed_tokens(lm.vocab, conv.utterances[std::size_t(p.turn) - 1]);
      if (sentence != p.context_tokens)
        fail("train-epo: context of '" + p.conv_id + "' turn " +
             std::to_string(p.turn) + " does not reproduce the corpus turn");
      if (lm.vocab.encode(conv.utterances[std::size_t(p.turn)].text) != p.y_a)
        fail("train-epo: y_a of '" + p.conv_id + "' turn " +
             std::to_string(p.turn) + " does not reproduce the corpus turn");
      Segment history = Segment::tokens({});
      if (cfg.counter.condition_on_history && p.turn >= 2)
        history = Segment::vectors_of(comp.model.compress_window(
            conv, lm.vocab, 0, std::size_t(p.turn) - 1, true));
      EpoItem item;
      item.prompt = build_input(history, std::nullopt, p.context_tokens, tmpl,
                                lm.model.config().max_seq_len);
      item.y_a = p.y_a;
      item.y_i = p.y_i;
      items.push_back(std::move(item));
    }
  }

  EpoStageResult result;
  result.n_pairs = items.size();
  result.before = epo_eval(lm.model, items, cfg.epo);
  {
    NoGradGuard no_grad;
    double sum = 0;
    const std::size_t n = std::min<std::size_t>(items.size(), 64);
    for (std::size_t i = 0; i < n; ++i) {
      MixedInput input = items[i].prompt;
      const auto targets = append_response(input, items[i].y_a, true,
                                           lm.model.config().max_seq_len);
      sum += double(lm.model.loss(input, targets, true).item());
    }
    result.ar_baseline = sum / double(n);
  }

  Adam adam(lm.model.params(), {.lr = cfg.epo.lr});
  std::ofstream csv(paths.stage_csv(Stage::kTrainEpo));
  csv << "step,epo_loss,ar_loss,margin_mean,win_frac\n";

  const int batch = std::max(1, cfg.epo.batch);
  const int steps_per_epoch = std::max(1, int(items.size()) / batch);
  const int epochs_needed =
      (cfg.epo.min_steps + steps_per_epoch - 1) / steps_per_epoch;
  const int epochs = std::max(cfg.epo.epochs, epochs_needed);

  // last-good parameter snapshot for the divergence guard
  auto snapshot = [&]() {
    std::vector<std::vector<Real>> snap;
    for (auto& [name, t] : lm.model.params()) snap.push_back(t->values());
    return snap;
  };
  auto restore = [&](const std::vector<std::vector<Real>>& snap) {
    auto refs = lm.model.params();
    for (std::size_t i = 0; i < refs.size(); ++i) refs[i].second->values() = snap[i];
  };
  std::vector<std::vector<Real>> last_good = snapshot();

  Rng rng(Rng::derive(cfg.epo.seed, 0xEE));
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  double ar_ema = result.ar_baseline;
  int step = 0;
  bool diverged = false;
  for (int epoch = 0; epoch < epochs && !diverged; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(rng.uniform_int(std::int64_t(i)))]);
    for (std::size_t start = 0; start + 1 <= order.size() && !diverged;
         start += std::size_t(batch)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(batch));
      std::vector<const EpoItem*> b;
      for (std::size_t i = start; i < end; ++i) b.push_back(&items[order[i]]);
      const EpoStepMetrics m = epo_step(lm.model, b, adam, cfg.epo);
      ++step;
      csv << step << "," << fmt(m.epo_loss) << "," << fmt(m.ar_loss) << ","
          << fmt(m.margin_mean) << "," << fmt(m.win_frac) << "\n";
      ar_ema = 0.9 * ar_ema + 0.1 * m.ar_loss;
      if (ar_ema > double(cfg.epo.divergence_factor) * result.ar_baseline &&
          step > 10) {
        restore(last_good);
        diverged = true;
        break;
      }
      if (step % 50 == 0) last_good = snapshot();
    }
  }

  result.after = epo_eval(lm.model, items, cfg.epo);
  result.base.steps = step;
  result.base.diverged = diverged;
  result.base.initial_loss = result.before.epo_loss;
  result.base.final_loss = result.after.epo_loss;
  save_lm(paths.lm_epo(), lm.model, lm.vocab);

  nlohmann::json j;
  j["n_pairs"] = result.n_pairs;
  j["steps"] = step;
  j["diverged"] = diverged;
  j["ar_baseline"] = result.ar_baseline;
  j["before"] = {{"margin_mean", result.before.margin_mean},
                 {"win_frac", result.before.win_frac},
                 {"epo_loss", result.before.epo_loss}};
  j["after"] = {{"margin_mean", result.after.margin_mean},
                {"win_frac", result.after.win_frac},
                {"epo_loss", result.after.epo_loss}};
  write_text_file(paths.epo_report(), j.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// eval / bench / curriculum

void write_eval_files(const EvalReport& report, const RunConfig& cfg,
                      const OutPaths& paths) {
  std::ofstream csv(paths.eval_csv());
  if (!csv) fail("cannot open " + paths.eval_csv());
  csv << "conv_id,turn,semantic_score,emotion_score,dist_1\n";
  for (const auto& s : report.samples)
    csv << s.conv_id << "," << s.turn << "," << fmt(s.semantic) << ","
        << fmt(s.emotion) << "," << fmt(s.dist1) << "\n";
  csv << "corpus_mean,," << fmt(report.mean_semantic) << ","
      << fmt(report.mean_emotion) << "," << fmt(report.mean_dist1) << "\n";

  std::ostringstream os;
  os << "evaluation summary\n"
     << "samples:        " << report.samples.size() << "\n"
     << "semantic_score: " << fmt(report.mean_semantic) << "\n"
     << "emotion_score:  " << fmt(report.mean_emotion) << "\n"
     << "dist_1:         " << fmt(report.mean_dist1) << "\n"
     << "config_digest:  " << cfg.digest() << "\n";
  write_text_file(paths.eval_summary(), os.str());
}

EvalReport run_eval_to_files(const RunConfig& cfg, const OutPaths& paths,
                             const std::string& lm_path,
                             const std::string& corpus_path) {
  require_file(paths.embedder(), Stage::kTrainEmbedder, "train-embedder");
  LoadedLm lm = load_lm(lm_path);
  LoadedEmbedder emb = load_embedder(paths.embedder());
  std::optional<LoadedCompressor> comp;
  if (cfg.eval.use_compressor && std::filesystem::exists(paths.compressor()))
    comp = load_compressor(paths.compressor());
  auto [train, test] = load_and_split(cfg, corpus_path);
  EvalConfig ec = cfg.eval;
  ec.decode.seed = Rng::derive(cfg.seed, 0xF0);
  EvalReport report = run_eval(test, lm.model, comp ? &comp->model : nullptr,
                               emb.model, lm.vocab, ec);
  report.config_digest = cfg.digest();
  write_eval_files(report, cfg, paths);
  return report;
}

void write_bench_files(const EfficiencyReport& report, const RunConfig& cfg,
                       const OutPaths& paths) {
  std::ofstream csv(paths.bench_csv());
  if (!csv) fail("cannot open " + paths.bench_csv());
  csv << "conv_id,history_turns,tokens_without,tokens_with,seconds_without,"
         "seconds_with\n";
  for (const auto& r : report.rows)
    csv << r.conv_id << "," << r.history_turns << "," << r.tokens_without << ","
        << r.tokens_with << "," << fmt(r.seconds_without) << ","
        << fmt(r.seconds_with) << "\n";

  std::ostringstream os;
  os << "compression efficiency (prompt processing only)\n"
     << "samples (history >= " << report.min_turns
     << " turns): " << report.rows.size() << "\n"
     << "mean prompt tokens  without/with: " << fmt(report.mean_tokens_without)
     << " / " << fmt(report.mean_tokens_with) << "  (reduction "
     << fmt(report.token_reduction) << ")\n"
     << "mean prompt seconds without/with: " << fmt(report.mean_seconds_without)
     << " / " << fmt(report.mean_seconds_with) << "  (reduction "
     << fmt(report.time_reduction) << ")\n"
     << "config_digest: " << cfg.digest() << "\n";
  write_text_file(paths.bench_summary(), os.str());
}

EfficiencyReport run_bench_to_files(const RunConfig& cfg, const OutPaths& paths,
                                    const std::string& lm_path,
                                    const std::string& corpus_path) {
  require_file(paths.compressor(), Stage::kFinetuneCompressor,
               "finetune-compressor");
  LoadedLm lm = load_lm(lm_path);
  LoadedCompressor comp = load_compressor(paths.compressor());
  const Corpus corpus = load_corpus(corpus_path);
  EfficiencyReport report =
      bench_compression(corpus, lm.model, comp.model, lm.vocab, cfg.bench);
  write_bench_files(report, cfg, paths);
  return report;
}

void run_curriculum(const RunConfig& cfg, const OutPaths& paths, bool resume) {
  ensure_dir(paths.dir);
  echo_config(cfg, paths);
  const auto run_stage = [&](Stage s, const std::function<void()>& fn) {
    if (resume && std::filesystem::exists(paths.marker(s))) return;
    fn();
    write_text_file(paths.marker(s), "done\n");
  };
  run_stage(Stage::kGenCorpus, [&] { stage_gen_corpus(cfg, paths); });
  run_stage(Stage::kTrainEmbedder, [&] { stage_train_embedder(cfg, paths); });
  run_stage(Stage::kPretrainLm, [&] { stage_pretrain_lm(cfg, paths); });
  run_stage(Stage::kPretrainCompressor,
            [&] { stage_pretrain_compressor(cfg, paths); });
  run_stage(Stage::kFinetuneCompressor,
            [&] { stage_finetune_compressor(cfg, paths); });
  run_stage(Stage::kTrainLm, [&] { stage_train_lm(cfg, paths); });
  run_stage(Stage::kGenCounter, [&] { stage_gen_counter(cfg, paths); });
  run_stage(Stage::kTrainEpo, [&] { stage_train_epo(cfg, paths); });
  run_eval_to_files(cfg, paths, paths.lm_epo(), paths.corpus());
}

}  // namespace emochat
