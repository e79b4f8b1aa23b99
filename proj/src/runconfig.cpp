#include "emochat/runconfig.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace emochat {

namespace {

using nlohmann::json;

// Applies `section` onto known fields, rejecting unknown keys.
class SectionReader {
 public:
  SectionReader(const json& j, std::string name) : j_(j), name_(std::move(name)) {}

  template <class T>
  void field(const char* key, T& dst) {
    known_.push_back(key);
    if (j_.contains(key)) dst = j_.at(key).get<T>();
  }
  void field_real(const char* key, Real& dst) {
    known_.push_back(key);
    if (j_.contains(key)) dst = Real(j_.at(key).get<double>());
  }
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      bool ok = false;
      for (const auto& k : known_)
        if (key == k) ok = true;
      if (!ok) fail_arg("config: unknown key '" + name_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::vector<std::string> known_;
};

void read_schedule(const json& j, const std::string& name, StageSchedule& s) {
  SectionReader r(j, name);
  r.field("max_steps", s.max_steps);
  r.field("eval_every", s.eval_every);
  r.field("batch", s.batch);
  r.field_real("lr", s.lr);
  r.field("patience", s.patience);
  r.finish();
}

json schedule_json(const StageSchedule& s) {
  return json{{"max_steps", s.max_steps},
              {"eval_every", s.eval_every},
              {"batch", s.batch},
              {"lr", double(s.lr)},
              {"patience", s.patience}};
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["train_fraction"] = train_fraction;
  j["corpus"] = {{"n_conversations", corpus.n_conversations},
                 {"min_turns", corpus.min_turns},
                 {"max_turns", corpus.max_turns},
                 {"seed", corpus.seed},
                 {"n_topics", corpus.n_topics},
                 {"entities_per_topic", corpus.entities_per_topic},
                 {"markers_per_emotion", corpus.markers_per_emotion},
                 {"templates_per_role", corpus.templates_per_role},
                 {"recall_templates", corpus.recall_templates},
                 {"recall_prob", corpus.recall_prob},
                 {"new_entity_prob", corpus.new_entity_prob},
                 {"self_transition", corpus.self_transition}};
  j["embedder"] = {{"d_emb", embedder.d_emb},
                   {"d_hidden", embedder.d_hidden},
                   {"epochs", embedder.epochs},
                   {"batch", embedder.batch},
                   {"lr", double(embedder.lr)}};
  j["compressor"] = {{"d_model", compressor.d_model},
                     {"d_state", compressor.d_state},
                     {"d_conv", compressor.d_conv},
                     {"expand", compressor.expand},
                     {"n_layers", compressor.n_layers},
                     {"d_mem", compressor.d_mem},
                     {"max_seq_len", compressor.max_seq_len}};
  j["compressor_pretrain"] = schedule_json(compressor_pretrain);
  j["compressor_finetune"] = schedule_json(compressor_finetune);
  j["lm"] = {{"d_model", lm.d_model},
             {"n_layers", lm.n_layers},
             {"n_heads", lm.n_heads},
             {"d_ff", lm.d_ff},
             {"max_seq_len", lm.max_seq_len},
             {"history_utterances", lm.history_utterances},
             {"emotion_hint_prob", double(lm.emotion_hint_prob)},
             {"reconstruction_weight", double(lm.reconstruction_weight)},
             {"pseudo_memory_fraction", double(lm.pseudo_memory_fraction)}};
  j["lm_pretrain"] = schedule_json(lm_pretrain);
  j["lm_joint"] = schedule_json(lm_joint);
  j["counter"] = {{"threshold", double(counter.threshold)},
                  {"condition_on_history", counter.condition_on_history},
                  {"max_turns", counter.max_turns},
                  {"top_k", counter.decode.top_k},
                  {"temperature", double(counter.decode.temperature)},
                  {"max_new_tokens", counter.decode.max_new_tokens},
                  {"seed", counter.seed}};
  j["epo"] = {{"beta", double(epo.beta)},
              {"gamma", double(epo.gamma)},
              {"lambda_ar", double(epo.lambda_ar)},
              {"lr", double(epo.lr)},
              {"batch", epo.batch},
              {"epochs", epo.epochs},
              {"min_steps", epo.min_steps},
              {"seed", epo.seed},
              {"divergence_factor", double(epo.divergence_factor)}};
  j["eval"] = {{"max_samples", eval.max_samples},
               {"greedy", eval.decode.greedy},
               {"max_new_tokens", eval.decode.max_new_tokens},
               {"use_compressor", eval.use_compressor},
               {"raw_history_utterances", eval.raw_history_utterances}};
  j["bench"] = {{"min_turns", bench.min_turns},
                {"repetitions", bench.repetitions},
                {"max_samples", bench.max_samples}};
  return j.dump(2);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  RunConfig cfg;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail_arg(std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) fail_arg("config: top level must be an object");

  static const char* kSections[] = {
      "seed",       "train_fraction",      "corpus",
      "embedder",   "compressor",          "compressor_pretrain",
      "compressor_finetune", "lm",         "lm_pretrain",
      "lm_joint",   "counter",             "epo",
      "eval",       "bench"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* s : kSections)
      if (key == s) ok = true;
    if (!ok) fail_arg("config: unknown key '" + key + "'");
  }

  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("train_fraction"))
    cfg.train_fraction = j.at("train_fraction").get<double>();
  if (j.contains("corpus")) {
    SectionReader r(j.at("corpus"), "corpus");
    r.field("n_conversations", cfg.corpus.n_conversations);
    r.field("min_turns", cfg.corpus.min_turns);
    r.field("max_turns", cfg.corpus.max_turns);
    r.field("seed", cfg.corpus.seed);
    r.field("n_topics", cfg.corpus.n_topics);
    r.field("entities_per_topic", cfg.corpus.entities_per_topic);
    r.field("markers_per_emotion", cfg.corpus.markers_per_emotion);
    r.field("templates_per_role", cfg.corpus.templates_per_role);
    r.field("recall_templates", cfg.corpus.recall_templates);
    r.field("recall_prob", cfg.corpus.recall_prob);
    r.field("new_entity_prob", cfg.corpus.new_entity_prob);
    r.field("self_transition", cfg.corpus.self_transition);
    r.finish();
  }
  if (j.contains("embedder")) {
    SectionReader r(j.at("embedder"), "embedder");
    r.field("d_emb", cfg.embedder.d_emb);
    r.field("d_hidden", cfg.embedder.d_hidden);
    r.field("epochs", cfg.embedder.epochs);
    r.field("batch", cfg.embedder.batch);
    r.field_real("lr", cfg.embedder.lr);
    r.finish();
  }
  if (j.contains("compressor")) {
    SectionReader r(j.at("compressor"), "compressor");
    r.field("d_model", cfg.compressor.d_model);
    r.field("d_state", cfg.compressor.d_state);
    r.field("d_conv", cfg.compressor.d_conv);
    r.field("expand", cfg.compressor.expand);
    r.field("n_layers", cfg.compressor.n_layers);
    r.field("d_mem", cfg.compressor.d_mem);
    r.field("max_seq_len", cfg.compressor.max_seq_len);
    r.finish();
  }
  if (j.contains("compressor_pretrain"))
    read_schedule(j.at("compressor_pretrain"), "compressor_pretrain",
                  cfg.compressor_pretrain);
  if (j.contains("compressor_finetune"))
    read_schedule(j.at("compressor_finetune"), "compressor_finetune",
                  cfg.compressor_finetune);
  if (j.contains("lm")) {
    SectionReader r(j.at("lm"), "lm");
    r.field("d_model", cfg.lm.d_model);
    r.field("n_layers", cfg.lm.n_layers);
    r.field("n_heads", cfg.lm.n_heads);
    r.field("d_ff", cfg.lm.d_ff);
    r.field("max_seq_len", cfg.lm.max_seq_len);
    r.field("history_utterances", cfg.lm.history_utterances);
    r.field_real("emotion_hint_prob", cfg.lm.emotion_hint_prob);
    r.field_real("reconstruction_weight", cfg.lm.reconstruction_weight);
    r.field_real("pseudo_memory_fraction", cfg.lm.pseudo_memory_fraction);
    r.finish();
  }
  if (j.contains("lm_pretrain"))
    read_schedule(j.at("lm_pretrain"), "lm_pretrain", cfg.lm_pretrain);
  if (j.contains("lm_joint")) read_schedule(j.at("lm_joint"), "lm_joint", cfg.lm_joint);
  if (j.contains("counter")) {
    SectionReader r(j.at("counter"), "counter");
    r.field_real("threshold", cfg.counter.threshold);
    r.field("condition_on_history", cfg.counter.condition_on_history);
    r.field("max_turns", cfg.counter.max_turns);
    r.field("top_k", cfg.counter.decode.top_k);
    r.field_real("temperature", cfg.counter.decode.temperature);
    r.field("max_new_tokens", cfg.counter.decode.max_new_tokens);
    r.field("seed", cfg.counter.seed);
    r.finish();
    cfg.counter.decode.greedy = false;
  }
  if (j.contains("epo")) {
    SectionReader r(j.at("epo"), "epo");
    r.field_real("beta", cfg.epo.beta);
    r.field_real("gamma", cfg.epo.gamma);
    r.field_real("lambda_ar", cfg.epo.lambda_ar);
    r.field_real("lr", cfg.epo.lr);
    r.field("batch", cfg.epo.batch);
    r.field("epochs", cfg.epo.epochs);
    r.field("min_steps", cfg.epo.min_steps);
    r.field("seed", cfg.epo.seed);
    r.field_real("divergence_factor", cfg.epo.divergence_factor);
    r.finish();
  }
  if (j.contains("eval")) {
    SectionReader r(j.at("eval"), "eval");
    r.field("max_samples", cfg.eval.max_samples);
    r.field("greedy", cfg.eval.decode.greedy);
    r.field("max_new_tokens", cfg.eval.decode.max_new_tokens);
    r.field("use_compressor", cfg.eval.use_compressor);
    r.field("raw_history_utterances", cfg.eval.raw_history_utterances);
    r.finish();
  }
  if (j.contains("bench")) {
    SectionReader r(j.at("bench"), "bench");
    r.field("min_turns", cfg.bench.min_turns);
    r.field("repetitions", cfg.bench.repetitions);
    r.field("max_samples", cfg.bench.max_samples);
    r.finish();
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_json_text(read_text_file(path));
}

std::string RunConfig::digest() const {
  const std::string text = to_json();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) fail("cannot open " + path + " for writing");
  out << content;
  if (!out) fail("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace emochat
