#include "emochat/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "emochat/common.hpp"

namespace emochat {

namespace {
const std::array<const char*, kNumEmotions> kEmotionNames = {
    "angry", "disgust", "fearful", "happy", "neutral", "sad", "surprise"};
}

const char* emotion_name(EmotionCategory e) { return kEmotionNames[size_t(e)]; }

std::optional<EmotionCategory> emotion_from_name(const std::string& name) {
  for (int i = 0; i < kNumEmotions; ++i)
    if (name == kEmotionNames[size_t(i)]) return EmotionCategory(i);
  return std::nullopt;
}

const std::array<EmotionCategory, kNumEmotions>& all_emotions() {
  static const std::array<EmotionCategory, kNumEmotions> all = {
      EmotionCategory::kAngry,   EmotionCategory::kDisgust,
      EmotionCategory::kFearful, EmotionCategory::kHappy,
      EmotionCategory::kNeutral, EmotionCategory::kSad,
      EmotionCategory::kSurprise};
  return all;
}

const std::vector<std::string>& instruction_words() {
  static const std::vector<std::string> words = {
      "rebuild", "the",     "sentence", "utterances", "from", "memory",
      "reply",   "to",      "using",    "history",    ":",    "feeling",
      "all",     "respond", "given"};
  return words;
}

Vocab Vocab::build(const std::vector<std::string>& words) {
  Vocab v;
  v.words_.reserve(kNumReserved + words.size() + instruction_words().size());
  v.words_ = {"<pad>", "<bos>", "<eor>", "<mem>", "<unk>"};
  for (int i = 0; i < kNumEmotions; ++i)
    v.words_.push_back(std::string("<") + kEmotionNames[size_t(i)] + ">");
  for (int i = 0; i < kNumSpeakers; ++i)
    v.words_.push_back("<spk" + std::to_string(i) + ">");
  for (int i = 0; i < int(v.words_.size()); ++i) v.index_[v.words_[size_t(i)]] = i;

  auto add = [&v](const std::string& w) {
    if (w.empty() || v.index_.count(w)) return;
    v.index_[w] = int(v.words_.size());
    v.words_.push_back(w);
  };
  for (const auto& w : instruction_words()) add(w);
  for (const auto& w : words) add(w);
  return v;
}

std::vector<std::string> Vocab::normalize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (char ch : text) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (std::ispunct(u) && u != '_') {
      flush();
      out.push_back(std::string(1, char(std::tolower(u))));
    } else {
      cur.push_back(char(std::tolower(u)));
    }
  }
  flush();
  return out;
}

int Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(const std::string& word) const {
  return index_.count(word) != 0;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size())
    fail_arg("vocab: token id " + std::to_string(id) + " outside vocabulary of " +
             std::to_string(size()));
  return words_[size_t(id)];
}

int Vocab::speaker_token(int speaker) {
  if (speaker < 0 || speaker >= kNumSpeakers)
    fail_arg("vocab: speaker id " + std::to_string(speaker) + " exceeds reserved slots");
  return kSpeakerBase + speaker;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : normalize(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += word(id);
  }
  return out;
}

std::vector<std::string> Vocab::payload_words() const {
  return std::vector<std::string>(words_.begin() + kNumReserved, words_.end());
}

}  // namespace emochat
