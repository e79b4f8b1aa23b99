#include "emochat/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <unordered_map>
#include <unordered_set>

namespace emochat {

namespace {

// Packs up to 4 token ids into one key; ids stay well below 2^16 here.
std::uint64_t ngram_key(const std::vector<int>& toks, std::size_t i, int n) {
  std::uint64_t key = 0;
  for (int j = 0; j < n; ++j)
    key = key * 65536ull + std::uint64_t(toks[i + std::size_t(j)] + 1);
  return key;
}

}  // namespace

double dist_n(const std::vector<std::vector<int>>& texts, int n) {
  if (n < 1) fail_arg("dist_n: n must be >= 1");
  std::unordered_set<std::uint64_t> unique;
  std::size_t total = 0;
  for (const auto& t : texts) {
    if (t.size() < std::size_t(n)) continue;
    for (std::size_t i = 0; i + std::size_t(n) <= t.size(); ++i) {
      unique.insert(ngram_key(t, i, n));
      ++total;
    }
  }
  if (total == 0) fail_arg("dist_n: no n-grams in input (all texts empty)");
  return double(unique.size()) / double(total);
}

double bleu_n(const std::vector<int>& candidate,
              const std::vector<std::vector<int>>& references, int max_n) {
  if (max_n < 1 || max_n > 4) fail_arg("bleu_n: max_n must be in 1..4");
  if (references.empty()) fail_arg("bleu_n: no references");
  if (candidate.empty()) return 0.0;

  const std::size_t c = candidate.size();
  // effective reference length: closest to the candidate, ties to the shorter
  std::size_t r = references[0].size();
  for (const auto& ref : references) {
    const auto d_new = std::llabs(std::int64_t(ref.size()) - std::int64_t(c));
    const auto d_old = std::llabs(std::int64_t(r) - std::int64_t(c));
    if (d_new < d_old || (d_new == d_old && ref.size() < r)) r = ref.size();
  }

  double log_sum = 0;
  for (int n = 1; n <= max_n; ++n) {
    std::unordered_map<std::uint64_t, std::size_t> cand_counts;
    std::size_t total = 0;
    if (c >= std::size_t(n)) {
      for (std::size_t i = 0; i + std::size_t(n) <= c; ++i) {
        ++cand_counts[ngram_key(candidate, i, n)];
        ++total;
      }
    }
    std::unordered_map<std::uint64_t, std::size_t> ref_max;
    for (const auto& ref : references) {
      if (ref.size() < std::size_t(n)) continue;
      std::unordered_map<std::uint64_t, std::size_t> counts;
      for (std::size_t i = 0; i + std::size_t(n) <= ref.size(); ++i)
        ++counts[ngram_key(ref, i, n)];
      for (const auto& [k, v] : counts)
        ref_max[k] = std::max(ref_max[k], v);
    }
    std::size_t clipped = 0;
    for (const auto& [k, v] : cand_counts) {
      auto it = ref_max.find(k);
      if (it != ref_max.end()) clipped += std::min(v, it->second);
    }
    double p;
    if (clipped == 0) {
      if (n == 1) return 0.0;
      p = 1.0 / double(total + 1);  // add-1 smoothing on zero counts
    } else {
      p = double(clipped) / double(total);
    }
    log_sum += std::log(p);
  }
  const double bp = c >= r ? 1.0 : std::exp(1.0 - double(r) / double(c));
  return bp * std::exp(log_sum / double(max_n));
}

double semantic_f1(const std::vector<std::vector<double>>& sims) {
  if (sims.empty() || sims[0].empty()) fail_arg("semantic_f1: empty matrix");
  const std::size_t nc = sims.size(), nr = sims[0].size();
  double p = 0;
  for (std::size_t i = 0; i < nc; ++i) {
    if (sims[i].size() != nr) fail_arg("semantic_f1: ragged matrix");
    p += *std::max_element(sims[i].begin(), sims[i].end());
  }
  p /= double(nc);
  double rec = 0;
  for (std::size_t j = 0; j < nr; ++j) {
    double mx = sims[0][j];
    for (std::size_t i = 1; i < nc; ++i) mx = std::max(mx, sims[i][j]);
    rec += mx;
  }
  rec /= double(nr);
  if (p + rec == 0) return 0.0;
  return 2.0 * p * rec / (p + rec);
}

namespace {

// Per-token contextual embeddings: final hidden states of the bare sequence.
std::vector<std::vector<double>> lm_token_embeddings(const std::vector<int>& toks,
                                                     LmModel& lm) {
  NoGradGuard no_grad;
  MixedInput input;
  input.segments.push_back(Segment::tokens(toks));
  input.loss_mask.assign(toks.size(), 0);
  Tensor h = lm.forward_hidden(input, true);
  const int d = h.dim(1);
  std::vector<std::vector<double>> rows(std::size_t(h.dim(0)));
  for (int i = 0; i < h.dim(0); ++i)
    rows[size_t(i)].assign(h.data() + std::size_t(i) * std::size_t(d),
                           h.data() + std::size_t(i + 1) * std::size_t(d));
  return rows;
}

double cosine_d(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0 ? dot / denom : 0.0;
}

}  // namespace

double semantic_score(const std::vector<int>& candidate,
                      const std::vector<int>& reference, LmModel& lm) {
  if (candidate.empty() || reference.empty())
    fail_arg("semantic_score: empty input text");
  const auto ce = lm_token_embeddings(candidate, lm);
  const auto re = lm_token_embeddings(reference, lm);
  std::vector<std::vector<double>> sims(ce.size(),
                                        std::vector<double>(re.size()));
  for (std::size_t i = 0; i < ce.size(); ++i)
    for (std::size_t j = 0; j < re.size(); ++j)
      sims[i][j] = cosine_d(ce[i], re[j]);
  return semantic_f1(sims);
}

namespace {

std::vector<int> sentence_tokens(const Vocab& vocab, const Utterance& u) {
  std::vector<int> ids;
  ids.push_back(Vocab::speaker_token(u.speaker % Vocab::kNumSpeakers));
  const auto t = vocab.encode(u.text);
  ids.insert(ids.end(), t.begin(), t.end());
  return ids;
}

std::vector<int> raw_history_tokens(const Vocab& vocab, const Conversation& conv,
                                    std::size_t first, std::size_t count) {
  std::vector<int> ids;
  for (std::size_t u = first; u < first + count; ++u) {
    const auto t = sentence_tokens(vocab, conv.utterances[u]);
    ids.insert(ids.end(), t.begin(), t.end());
  }
  return ids;
}

}  // namespace

EvalReport run_eval(const Corpus& corpus, LmModel& lm,
                    CompressorModel* compressor, const EmbedderModel& embedder,
                    const Vocab& vocab, const EvalConfig& config) {
  NoGradGuard no_grad;
  EvalReport report;
  const auto tmpl = InstructionTemplate::dialogue(vocab);
  for (const auto& conv : corpus.conversations) {
    if (int(report.samples.size()) >= config.max_samples) break;
    for (std::size_t t = 1; t < conv.utterances.size(); ++t) {
      if (int(report.samples.size()) >= config.max_samples) break;
      Segment history = Segment::tokens({});
      if (t > 1) {
        if (config.use_compressor && compressor) {
          history = Segment::vectors_of(
              compressor->compress_window(conv, vocab, 0, t - 1, true));
        } else {
          const std::size_t keep =
              std::min<std::size_t>(t - 1, std::size_t(config.raw_history_utterances));
          history = Segment::tokens(
              raw_history_tokens(vocab, conv, t - 1 - keep, keep));
        }
      }
      const auto sentence = sentence_tokens(vocab, conv.utterances[t - 1]);
      MixedInput prompt = build_input(history, std::nullopt, sentence, tmpl,
                                      lm.config().max_seq_len);
      DecodeConfig decode = config.decode;
      decode.seed = Rng::derive(config.decode.seed,
                                report.samples.size() * 2654435761ull);
      const auto generated = lm.generate(prompt, decode);
      const auto reference = vocab.encode(conv.utterances[t].text);
      if (generated.empty() || reference.empty()) continue;

      EvalSample s;
      s.conv_id = conv.id;
      s.turn = int(t);
      s.generated = generated;
      s.semantic = semantic_score(generated, reference, lm);
      s.emotion = double(emotion_score(generated, reference, embedder));
      s.dist1 = dist_n({generated}, 1);
      report.samples.push_back(std::move(s));
    }
  }
  if (!report.samples.empty()) {
    for (const auto& s : report.samples) {
      report.mean_semantic += s.semantic;
      report.mean_emotion += s.emotion;
      report.mean_dist1 += s.dist1;
    }
    const double n = double(report.samples.size());
    report.mean_semantic /= n;
    report.mean_emotion /= n;
    report.mean_dist1 /= n;
  }
  return report;
}

EfficiencyReport bench_compression(const Corpus& corpus, LmModel& lm,
                                   CompressorModel& compressor,
                                   const Vocab& vocab,
                                   const BenchConfig& config) {
  NoGradGuard no_grad;
  using clock = std::chrono::steady_clock;
  EfficiencyReport report;
  report.min_turns = config.min_turns;
  const auto tmpl = InstructionTemplate::dialogue(vocab);
  const int reps = std::max(5, config.repetitions);

  for (const auto& conv : corpus.conversations) {
    if (int(report.rows.size()) >= config.max_samples) break;
    const std::size_t n_utt = conv.utterances.size();
    if (n_utt < std::size_t(config.min_turns) + 1) continue;
    const std::size_t hist = n_utt - 1;
    const auto sentence = sentence_tokens(vocab, conv.utterances[n_utt - 1]);

    EfficiencyRow row;
    row.conv_id = conv.id;
    row.history_turns = hist;

    // Without the compressor the prompt embeds the raw history tokens.
    MixedInput without = build_input(
        Segment::tokens(raw_history_tokens(vocab, conv, 0, hist)), std::nullopt,
        sentence, tmpl, lm.config().max_seq_len);
    row.tokens_without = without.length();
    std::vector<double> times;
    for (int rep = 0; rep < reps; ++rep) {
      const auto t0 = clock::now();
      lm.forward_hidden(without, true);
      times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    row.seconds_without = times[times.size() / 2];

    // With it the history collapses to one memory vector per utterance; the
    // compression itself is part of prompt processing and is timed.
    times.clear();
    std::size_t tokens_with = 0;
    for (int rep = 0; rep < reps; ++rep) {
      const auto t0 = clock::now();
      Tensor mems = compressor.compress_window(conv, vocab, 0, hist, true);
      MixedInput with = build_input(Segment::vectors_of(mems), std::nullopt,
                                    sentence, tmpl, lm.config().max_seq_len);
      lm.forward_hidden(with, true);
      times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
      tokens_with = with.length();
    }
    std::sort(times.begin(), times.end());
    row.seconds_with = times[times.size() / 2];
    row.tokens_with = tokens_with;
    report.rows.push_back(std::move(row));
  }
  if (report.rows.empty())
    fail("bench_compression: no conversation has a history of >= " +
         std::to_string(config.min_turns) + " turns");

  for (const auto& r : report.rows) {
    report.mean_tokens_without += double(r.tokens_without);
    report.mean_tokens_with += double(r.tokens_with);
    report.mean_seconds_without += r.seconds_without;
    report.mean_seconds_with += r.seconds_with;
  }
  const double n = double(report.rows.size());
  report.mean_tokens_without /= n;
  report.mean_tokens_with /= n;
  report.mean_seconds_without /= n;
  report.mean_seconds_with /= n;
  report.token_reduction = 1.0 - report.mean_tokens_with / report.mean_tokens_without;
  report.time_reduction = 1.0 - report.mean_seconds_with / report.mean_seconds_without;
  return report;
}

}  // namespace emochat
