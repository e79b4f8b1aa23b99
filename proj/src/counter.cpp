#include "emochat/counter.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace emochat {

std::vector<int> emotion_prompt(const std::vector<int>& sentence,
                                EmotionCategory emotion) {
  std::vector<int> out;
  out.reserve(sentence.size() + 1);
  out.push_back(Vocab::emotion_token(emotion));
  out.insert(out.end(), sentence.begin(), sentence.end());
  return out;
}

std::vector<CandidateResponse> generate_candidates(
    LmModel& lm, const Segment& history, const std::vector<int>& sentence,
    const std::vector<int>& gt_response, const EmbedderModel& embedder,
    const Vocab& vocab, const DecodeConfig& decode, std::uint64_t turn_seed) {
  const auto tmpl = InstructionTemplate::dialogue(vocab);
  std::vector<CandidateResponse> out;
  out.reserve(kNumEmotions);
  for (EmotionCategory emo : all_emotions()) {
    MixedInput prompt = build_input(history, std::nullopt,
                                    emotion_prompt(sentence, emo), tmpl,
                                    lm.config().max_seq_len);
    DecodeConfig dc = decode;
    dc.seed = Rng::derive(turn_seed, std::uint64_t(emo));
    CandidateResponse cand;
    cand.emotion = emo;
    cand.tokens = lm.generate(prompt, dc);
    if (cand.tokens.empty())
      fail("generate_candidates: empty candidate for emotion '" +
           std::string(emotion_name(emo)) + "'");
    cand.similarity_to_gt = emotion_score(cand.tokens, gt_response, embedder);
    out.push_back(std::move(cand));
  }
  return out;
}

std::optional<CandidateResponse> select_counter(
    const std::vector<CandidateResponse>& candidates, Real threshold) {
  if (candidates.empty()) fail_arg("select_counter: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].similarity_to_gt < candidates[best].similarity_to_gt)
      best = i;  // strict '<' keeps the lowest enum order on ties
  if (candidates[best].similarity_to_gt < threshold) return candidates[best];
  return std::nullopt;
}

namespace {

struct TurnTask {
  std::size_t conv_index = 0;
  std::size_t turn = 0;
  std::uint64_t seed = 0;
};

std::vector<int> speaker_prefixed(const Vocab& vocab, const Utterance& u) {
  std::vector<int> ids;
  ids.push_back(Vocab::speaker_token(u.speaker % Vocab::kNumSpeakers));
  const auto t = vocab.encode(u.text);
  ids.insert(ids.end(), t.begin(), t.end());
  return ids;
}

}  // namespace

CounterStats build_preference_dataset(const Corpus& corpus, LmModel& lm,
                                      CompressorModel* compressor,
                                      const EmbedderModel& embedder,
                                      const Vocab& vocab,
                                      const CounterConfig& config,
                                      const std::string& out_jsonl,
                                      std::vector<PreferencePair>* out_pairs) {
  std::vector<TurnTask> tasks;
  for (std::size_t ci = 0; ci < corpus.size(); ++ci) {
    const auto& conv = corpus.conversations[ci];
    for (std::size_t t = 1; t < conv.utterances.size(); ++t) {
      if (int(tasks.size()) >= config.max_turns) break;
      TurnTask task;
      task.conv_index = ci;
      task.turn = t;
      task.seed = Rng::derive(config.seed, (std::uint64_t(ci) << 20) | t);
      tasks.push_back(task);
    }
    if (int(tasks.size()) >= config.max_turns) break;
  }

  CounterStats stats;
  stats.turns_processed = tasks.size();
  std::vector<std::optional<PreferencePair>> results(tasks.size());
  std::vector<std::vector<std::size_t>> histograms;
  std::vector<std::size_t> failure_counts;
#ifdef _OPENMP
  const int n_threads = omp_get_max_threads();
#else
  const int n_threads = 1;
#endif
  histograms.assign(std::size_t(n_threads), std::vector<std::size_t>(20, 0));
  failure_counts.assign(std::size_t(n_threads), 0);

#pragma omp parallel for schedule(dynamic)
  for (long ti = 0; ti < long(tasks.size()); ++ti) {
    NoGradGuard no_grad;
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    const TurnTask& task = tasks[std::size_t(ti)];
    const auto& conv = corpus.conversations[task.conv_index];
    try {
      Segment history = Segment::tokens({});
      if (config.condition_on_history && compressor && task.turn >= 2)
        history = Segment::vectors_of(
            compressor->compress_window(conv, vocab, 0, task.turn - 1, true));
      const auto sentence = speaker_prefixed(vocab, conv.utterances[task.turn - 1]);
      const auto gt = vocab.encode(conv.utterances[task.turn].text);
      if (gt.empty()) fail("empty ground-truth response");
      const auto candidates =
          generate_candidates(lm, history, sentence, gt, embedder, vocab,
                              config.decode, task.seed);
      for (const auto& cand : candidates) {
        const int bucket = std::clamp(
            int((double(cand.similarity_to_gt) + 1.0) / 0.1), 0, 19);
        ++histograms[std::size_t(tid)][std::size_t(bucket)];
      }
      auto picked = select_counter(candidates, config.threshold);
      if (picked && picked->tokens != gt) {
        PreferencePair pair;
        pair.conv_id = conv.id;
        pair.turn = int(task.turn);
        pair.context_tokens = sentence;
        pair.y_a = gt;
        pair.y_i = picked->tokens;
        pair.y_i_emotion = picked->emotion;
        pair.similarity = picked->similarity_to_gt;
        results[std::size_t(ti)] = std::move(pair);
      }
    } catch (const std::exception&) {
      ++failure_counts[std::size_t(tid)];
    }
  }

  for (const auto& h : histograms)
    for (std::size_t b = 0; b < 20; ++b) stats.sim_histogram[b] += h[b];
  for (std::size_t f : failure_counts) stats.generation_failures += f;

  std::ofstream out(out_jsonl);
  if (!out) fail("build_preference_dataset: cannot open " + out_jsonl);
  for (const auto& r : results) {
    if (!r) continue;
    ++stats.pairs_accepted;
    nlohmann::json j;
    j["conv_id"] = r->conv_id;
    j["turn"] = r->turn;
    j["context_token_ids"] = r->context_tokens;
    j["y_a_token_ids"] = r->y_a;
    j["y_i_token_ids"] = r->y_i;
    j["y_i_emotion"] = emotion_name(r->y_i_emotion);
    j["similarity"] = double(r->similarity);
    out << j.dump() << '\n';
    if (out_pairs) out_pairs->push_back(*r);
  }
  if (!out) fail("build_preference_dataset: write failed for " + out_jsonl);

  if (stats.turns_processed > 0) {
    stats.acceptance_defined = true;
    stats.acceptance_rate =
        double(stats.pairs_accepted) / double(stats.turns_processed);
  }
  return stats;
}

std::vector<PreferencePair> load_preference_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_arg("load_preference_pairs: cannot open " + path);
  std::vector<PreferencePair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("load_preference_pairs: " + path + ":" + std::to_string(lineno) +
           ": malformed JSON: " + e.what());
    }
    PreferencePair p;
    p.conv_id = j.at("conv_id").get<std::string>();
    p.turn = j.at("turn").get<int>();
    p.context_tokens = j.at("context_token_ids").get<std::vector<int>>();
    p.y_a = j.at("y_a_token_ids").get<std::vector<int>>();
    p.y_i = j.at("y_i_token_ids").get<std::vector<int>>();
    const auto emo = emotion_from_name(j.at("y_i_emotion").get<std::string>());
    if (!emo)
      fail("load_preference_pairs: " + path + ":" + std::to_string(lineno) +
           ": unknown emotion");
    p.y_i_emotion = *emo;
    p.similarity = Real(j.at("similarity").get<double>());
    if (p.y_a == p.y_i)
      fail("load_preference_pairs: " + path + ":" + std::to_string(lineno) +
           ": y_a equals y_i");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_counter_summary(const CounterStats& stats, const std::string& txt_path,
                           const std::string& json_path) {
  {
    std::ofstream out(txt_path);
    if (!out) fail("write_counter_summary: cannot open " + txt_path);
    out << "preference dataset summary\n";
    out << "turns processed:     " << stats.turns_processed << "\n";
    out << "pairs accepted:      " << stats.pairs_accepted << "\n";
    out << "generation failures: " << stats.generation_failures << "\n";
    if (stats.acceptance_defined)
      out << "acceptance rate:     " << stats.acceptance_rate << "\n";
    else
      out << "acceptance rate:     n/a\n";
    out << "similarity histogram (buckets of 0.1 over [-1,1]):\n";
    for (std::size_t b = 0; b < stats.sim_histogram.size(); ++b) {
      const double lo = -1.0 + 0.1 * double(b);
      out << "  [" << lo << "," << lo + 0.1 << "): " << stats.sim_histogram[b]
          << "\n";
    }
  }
  nlohmann::json j;
  j["turns_processed"] = stats.turns_processed;
  j["pairs_accepted"] = stats.pairs_accepted;
  j["generation_failures"] = stats.generation_failures;
  j["acceptance_rate"] =
      stats.acceptance_defined ? nlohmann::json(stats.acceptance_rate)
                               : nlohmann::json(nullptr);
  j["sim_histogram"] = stats.sim_histogram;
  std::ofstream out(json_path);
  if (!out) fail("write_counter_summary: cannot open " + json_path);
  out << j.dump(2) << "\n";
}

}  // namespace emochat
