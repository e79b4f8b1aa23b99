#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace emochat {

// The seven response emotions, in canonical order. This order breaks ties in
// counter-emotional selection and fixes the reserved-token layout.
enum class EmotionCategory : int {
  kAngry = 0,
  kDisgust,
  kFearful,
  kHappy,
  kNeutral,
  kSad,
  kSurprise,
};

inline constexpr int kNumEmotions = 7;

const char* emotion_name(EmotionCategory e);
std::optional<EmotionCategory> emotion_from_name(const std::string& name);
const std::array<EmotionCategory, kNumEmotions>& all_emotions();

// Word-level vocabulary shared by every model in the pipeline. Text is
// normalized to lowercase with punctuation split into its own tokens. The
// reserved block can never be produced from raw text.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;  // response-start marker
  static constexpr int kEor = 2;  // end of response
  static constexpr int kMem = 3;  // memory slot marker
  static constexpr int kUnk = 4;
  static constexpr int kEmotionBase = 5;                     // 7 labels
  static constexpr int kSpeakerBase = kEmotionBase + kNumEmotions;
  static constexpr int kNumSpeakers = 4;
  static constexpr int kNumReserved = kSpeakerBase + kNumSpeakers;

  Vocab() = default;

  // Builds from a word list (reserved tokens are added in front). The fixed
  // instruction words used by the prompt templates are always included.
  static Vocab build(const std::vector<std::string>& words);

  static std::vector<std::string> normalize(const std::string& text);

  int size() const { return int(words_.size()); }
  int id(const std::string& word) const;  // kUnk when missing
  bool contains(const std::string& word) const;
  const std::string& word(int id) const;

  static int emotion_token(EmotionCategory e) { return kEmotionBase + int(e); }
  static int speaker_token(int speaker);

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  // Word list without the reserved block (checkpoint payload).
  std::vector<std::string> payload_words() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Words every vocabulary carries for the instruction templates.
const std::vector<std::string>& instruction_words();

}  // namespace emochat
