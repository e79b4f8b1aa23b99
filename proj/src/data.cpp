#include "emochat/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "emochat/common.hpp"

namespace emochat {

namespace {

// Pseudo-word maker. Entities are the only words starting with 'z' so that
// history-dependence can be counted from raw text.
class WordMaker {
 public:
  explicit WordMaker(Rng& rng) : rng_(rng) {}

  std::string fresh(bool entity) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::string w = entity ? "z" + syllable() + syllable() : make_plain();
      if (used_.insert(w).second) return w;
    }
    fail("word maker exhausted");
  }

  void reserve(const std::string& w) { used_.insert(w); }

 private:
  std::string make_plain() {
    std::string w = syllable() + syllable();
    if (rng_.uniform() < 0.5) w += coda();
    return w;
  }
  std::string syllable() {
    static const char* onsets[] = {"b",  "d",  "f",  "g",  "k",  "l",  "m",
                                   "n",  "p",  "r",  "s",  "t",  "v",  "w",
                                   "ch", "sh", "br", "tr", "pl", "st"};
    static const char* nuclei[] = {"a", "e", "i", "o", "u", "ai", "ei", "ou"};
    return std::string(onsets[rng_.uniform_int(20)]) + nuclei[rng_.uniform_int(8)];
  }
  std::string coda() {
    static const char* codas[] = {"n", "r", "s", "l", "m", "t"};
    return codas[rng_.uniform_int(6)];
  }

  Rng& rng_;
  std::unordered_set<std::string> used_;
};

struct TemplateItem {
  enum Kind { kLit, kEntity, kOldEntity, kMarker, kTopic } kind = kLit;
  std::string lit;
};

struct UtterTemplate {
  std::vector<TemplateItem> items;
};

struct GeneratorTables {
  std::vector<std::string> topics;
  std::vector<std::vector<std::string>> entities;         // per topic
  std::vector<std::vector<std::string>> markers;          // per emotion
  std::vector<std::vector<UtterTemplate>> user_templates;  // per emotion
  std::vector<std::vector<UtterTemplate>> reply_templates;
  std::vector<std::vector<UtterTemplate>> recall_templates;
  std::vector<int> topic_primary;    // emotion index per topic
  std::vector<int> topic_secondary;
};

UtterTemplate make_template(Rng& rng, WordMaker& words, bool question,
                            bool recall, const char* punct) {
  UtterTemplate t;
  const int n_glue = 5 + int(rng.uniform_int(3));
  for (int i = 0; i < n_glue; ++i)
    t.items.push_back({TemplateItem::kLit, words.fresh(false)});
  auto insert_at = [&](TemplateItem::Kind kind) {
    TemplateItem item;
    item.kind = kind;
    t.items.insert(t.items.begin() + 1 + rng.uniform_int(int(t.items.size()) - 1),
                   item);
  };
  insert_at(TemplateItem::kMarker);
  insert_at(recall ? TemplateItem::kOldEntity : TemplateItem::kEntity);
  if (rng.uniform() < 0.3) insert_at(TemplateItem::kTopic);
  t.items.push_back({TemplateItem::kLit, question ? "?" : punct});
  return t;
}

GeneratorTables build_tables(const CorpusConfig& cfg, Rng& rng) {
  GeneratorTables g;
  WordMaker words(rng);
  for (const auto& w : instruction_words()) words.reserve(w);

  for (int t = 0; t < cfg.n_topics; ++t) {
    g.topics.push_back(words.fresh(false));
    g.entities.emplace_back();
    for (int e = 0; e < cfg.entities_per_topic; ++e)
      g.entities.back().push_back(words.fresh(true));
    const int primary = int(rng.uniform_int(kNumEmotions));
    int secondary = int(rng.uniform_int(kNumEmotions));
    if (secondary == primary) secondary = (secondary + 1) % kNumEmotions;
    g.topic_primary.push_back(primary);
    g.topic_secondary.push_back(secondary);
  }
  for (int e = 0; e < kNumEmotions; ++e) {
    g.markers.emplace_back();
    for (int m = 0; m < cfg.markers_per_emotion; ++m)
      g.markers.back().push_back(words.fresh(false));
    const char* punct =
        (e == int(EmotionCategory::kHappy) || e == int(EmotionCategory::kSurprise) ||
         e == int(EmotionCategory::kAngry))
            ? "!"
            : ".";
    g.user_templates.emplace_back();
    g.reply_templates.emplace_back();
    g.recall_templates.emplace_back();
    for (int i = 0; i < cfg.templates_per_role; ++i) {
      g.user_templates.back().push_back(
          make_template(rng, words, rng.uniform() < 0.5, false, punct));
      g.reply_templates.back().push_back(
          make_template(rng, words, false, false, punct));
    }
    for (int i = 0; i < cfg.recall_templates; ++i)
      g.recall_templates.back().push_back(
          make_template(rng, words, false, true, punct));
  }
  return g;
}

int sample_next_emotion(Rng& rng, int prev, int secondary, double self_bias) {
  const double u = rng.uniform();
  if (u < self_bias) return prev;
  if (u < self_bias + 0.3) return secondary;
  int pick = int(rng.uniform_int(kNumEmotions));
  return pick;
}

std::string render(const UtterTemplate& t, Rng& rng, const GeneratorTables& g,
                   int topic, int emotion, const std::string& entity,
                   const std::string& old_entity) {
  std::string out;
  for (const auto& item : t.items) {
    std::string w;
    switch (item.kind) {
      case TemplateItem::kLit: w = item.lit; break;
      case TemplateItem::kEntity: w = entity; break;
      case TemplateItem::kOldEntity: w = old_entity; break;
      case TemplateItem::kTopic: w = g.topics[size_t(topic)]; break;
      case TemplateItem::kMarker: {
        const auto& pool = g.markers[size_t(emotion)];
        w = pool[size_t(rng.uniform_int(int(pool.size())))];
        break;
      }
    }
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

Corpus generate_synthetic_corpus(const CorpusConfig& cfg) {
  if (cfg.min_turns < 2 || cfg.max_turns > 40 || cfg.min_turns > cfg.max_turns)
    fail_arg("generate_synthetic_corpus: turns range [" +
             std::to_string(cfg.min_turns) + "," + std::to_string(cfg.max_turns) +
             "] outside [2,40]");
  if (cfg.n_conversations < 1)
    fail_arg("generate_synthetic_corpus: n_conversations must be >= 1");

  Rng rng(cfg.seed);
  GeneratorTables tables = build_tables(cfg, rng);

  Corpus corpus;
  corpus.conversations.reserve(std::size_t(cfg.n_conversations));
  for (int ci = 0; ci < cfg.n_conversations; ++ci) {
    Conversation conv;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "conv_%05d", ci);
    conv.id = idbuf;

    const int topic = int(rng.uniform_int(cfg.n_topics));
    const auto& topic_entities = tables.entities[size_t(topic)];
    const int n_turns = cfg.min_turns + int(rng.uniform_int(cfg.max_turns - cfg.min_turns + 1));

    int emotion = rng.uniform() < 0.6 ? tables.topic_primary[size_t(topic)]
                                      : int(rng.uniform_int(kNumEmotions));
    std::string entity = topic_entities[size_t(rng.uniform_int(int(topic_entities.size())))];
    // first introduction turn per entity word
    std::unordered_map<std::string, int> first_turn;

    for (int t = 0; t < n_turns; ++t) {
      if (t > 0)
        emotion = sample_next_emotion(rng, emotion,
                                      tables.topic_secondary[size_t(topic)],
                                      cfg.self_transition);
      const bool is_reply = (t % 2 == 1);

      std::string old_entity;
      bool use_recall = false;
      if (is_reply && t >= 3 && rng.uniform() < cfg.recall_prob) {
        // recall an entity introduced >= 3 turns back, preferring recent ones
        std::vector<std::string> eligible;
        for (const auto& [word, turn] : first_turn)
          if (turn <= t - 3) eligible.push_back(word);
        std::sort(eligible.begin(), eligible.end());
        if (!eligible.empty()) {
          old_entity = eligible[size_t(rng.uniform_int(int(eligible.size())))];
          use_recall = true;
        }
      }
      if (!use_recall && rng.uniform() < cfg.new_entity_prob)
        entity = topic_entities[size_t(rng.uniform_int(int(topic_entities.size())))];

      const auto& pool =
          use_recall ? tables.recall_templates[size_t(emotion)]
                     : (is_reply ? tables.reply_templates[size_t(emotion)]
                                 : tables.user_templates[size_t(emotion)]);
      const auto& tmpl = pool[size_t(rng.uniform_int(int(pool.size())))];
      std::string text = render(tmpl, rng, tables, topic, emotion, entity,
                                old_entity);

      for (const auto& w : Vocab::normalize(text))
        if (w.size() > 1 && w[0] == 'z' && !first_turn.count(w))
          first_turn[w] = t;

      Utterance u;
      u.speaker = t % 2;
      u.text = std::move(text);
      u.emotion = EmotionCategory(emotion);
      conv.utterances.push_back(std::move(u));
    }
    corpus.conversations.push_back(std::move(conv));
  }
  return corpus;
}

namespace {

[[noreturn]] void load_error(const std::string& path, std::size_t line,
                             const std::string& what) {
  fail("load_corpus: " + path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_arg("load_corpus: cannot open " + path);
  Corpus corpus;
  std::unordered_set<std::string> seen_ids;
  std::vector<std::size_t> bad_emotion_lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      load_error(path, lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("utterances"))
      load_error(path, lineno, "object must have 'id' and 'utterances'");
    Conversation conv;
    conv.id = j.at("id").get<std::string>();
    if (!seen_ids.insert(conv.id).second)
      load_error(path, lineno, "duplicate conversation id '" + conv.id + "'");
    const auto& utts = j.at("utterances");
    if (!utts.is_array() || utts.size() < 2)
      load_error(path, lineno, "conversation needs >= 2 utterances");
    for (const auto& ju : utts) {
      Utterance u;
      if (!ju.contains("speaker") || !ju.contains("text") || !ju.contains("emotion"))
        load_error(path, lineno, "utterance must have speaker/text/emotion");
      u.speaker = ju.at("speaker").get<int>();
      u.text = ju.at("text").get<std::string>();
      if (Vocab::normalize(u.text).empty())
        load_error(path, lineno, "utterance text empty after normalization");
      const std::string emo = ju.at("emotion").get<std::string>();
      auto cat = emotion_from_name(emo);
      if (!cat) {
        bad_emotion_lines.push_back(lineno);
        continue;
      }
      u.emotion = *cat;
      conv.utterances.push_back(std::move(u));
    }
    corpus.conversations.push_back(std::move(conv));
  }
  if (!bad_emotion_lines.empty()) {
    std::string msg = "load_corpus: " + path + ": unknown emotion strings on lines";
    for (std::size_t ln : bad_emotion_lines) msg += " " + std::to_string(ln);
    fail(msg);
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("save_corpus: cannot open " + path + " for writing");
  for (const auto& conv : corpus.conversations) {
    nlohmann::json j;
    j["id"] = conv.id;
    auto arr = nlohmann::json::array();
    for (const auto& u : conv.utterances) {
      arr.push_back({{"speaker", u.speaker},
                     {"text", u.text},
                     {"emotion", emotion_name(u.emotion)}});
    }
    j["utterances"] = std::move(arr);
    out << j.dump() << '\n';
  }
  if (!out) fail("save_corpus: write failed for " + path);
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus,
                                       double train_fraction,
                                       std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail_arg("split_corpus: train_fraction must be in (0,1)");
  const std::size_t n = corpus.size();
  if (n < 2) fail_arg("split_corpus: need at least 2 conversations, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[size_t(rng.uniform_int(std::int64_t(i)))]);

  std::size_t n_train = std::size_t(double(n) * train_fraction + 0.5);
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  Corpus train, test;
  for (std::size_t i = 0; i < n; ++i) {
    Conversation c = corpus.conversations[i];
    c.split = in_train[i] ? "train" : "test";
    (in_train[i] ? train : test).conversations.push_back(std::move(c));
  }
  return {std::move(train), std::move(test)};
}

std::vector<std::string> corpus_word_list(const Corpus& corpus) {
  std::set<std::string> words;
  for (const auto& conv : corpus.conversations)
    for (const auto& u : conv.utterances)
      for (const auto& w : Vocab::normalize(u.text)) words.insert(w);
  return std::vector<std::string>(words.begin(), words.end());
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.emotion_histogram.assign(kNumEmotions, 0);
  s.n_conversations = corpus.size();
  std::size_t token_total = 0;
  std::size_t recall_hits = 0, recall_candidates = 0;
  std::set<std::string> words;
  for (const auto& conv : corpus.conversations) {
    std::unordered_map<std::string, int> first_turn;
    for (std::size_t t = 0; t < conv.utterances.size(); ++t) {
      const auto& u = conv.utterances[t];
      ++s.n_utterances;
      ++s.emotion_histogram[size_t(u.emotion)];
      const auto toks = Vocab::normalize(u.text);
      token_total += toks.size();
      bool recalled = false;
      for (const auto& w : toks) {
        words.insert(w);
        if (w.size() > 1 && w[0] == 'z') {
          auto it = first_turn.find(w);
          if (it == first_turn.end())
            first_turn[w] = int(t);
          else if (int(t) - it->second >= 3)
            recalled = true;
        }
      }
      if (t >= 3) {
        ++recall_candidates;
        if (recalled) ++recall_hits;
      }
    }
  }
  s.vocab_words = words.size();
  s.mean_utterance_tokens =
      s.n_utterances ? double(token_total) / double(s.n_utterances) : 0.0;
  s.recall_fraction =
      recall_candidates ? double(recall_hits) / double(recall_candidates) : 0.0;
  return s;
}

}  // namespace emochat
