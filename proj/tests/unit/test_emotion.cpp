#include <doctest.h>

#include <cmath>

#include "emochat/emotion.hpp"

using namespace emochat;

namespace {

// Tiny separable dataset: each label owns a disjoint word range.
struct Fixture {
  Vocab vocab;
  std::vector<LabeledSentence> data;
  Fixture() {
    std::vector<std::string> words;
    for (int c = 0; c < kNumEmotions; ++c)
      for (int w = 0; w < 8; ++w)
        words.push_back("w" + std::to_string(c) + "_" + std::to_string(w));
    vocab = Vocab::build(words);
    Rng rng(61);
    for (int c = 0; c < kNumEmotions; ++c)
      for (int i = 0; i < 60; ++i) {
        LabeledSentence ex;
        ex.label = EmotionCategory(c);
        for (int t = 0; t < 4; ++t)
          ex.tokens.push_back(vocab.id(
              "w" + std::to_string(c) + "_" + std::to_string(rng.uniform_int(8))));
        data.push_back(ex);
      }
  }
};

}  // namespace

TEST_SUITE("emotion") {
  TEST_CASE("cosine basics") {
    CHECK(cosine_sim({1, 0}, {1, 0}) == doctest::Approx(1.0));
    CHECK(cosine_sim({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_sim({1, 2}, {-1, -2}) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(cosine_sim({1, 0}, {1, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(cosine_sim({0, 0}, {1, 0}), std::invalid_argument);
  }

  TEST_CASE("embedding is unit norm and pure") {
    Fixture f;
    Rng rng(62);
    EmbedderModel model({.vocab_size = f.vocab.size()}, rng);
    for (int i = 0; i < 10; ++i) {
      const auto& ex = f.data[std::size_t(i * 17 % f.data.size())];
      const auto e1 = model.embed(ex.tokens);
      const auto e2 = model.embed(ex.tokens);
      double norm = 0;
      for (std::size_t d = 0; d < e1.vector.size(); ++d) {
        norm += double(e1.vector[d]) * double(e1.vector[d]);
        CHECK(e1.vector[d] == e2.vector[d]);
      }
      CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(model.embed({}), std::invalid_argument);
  }

  TEST_CASE("emotion_score: identity, symmetry, range") {
    Fixture f;
    Rng rng(63);
    EmbedderModel model({.vocab_size = f.vocab.size()}, rng);
    const auto& a = f.data[0].tokens;
    const auto& b = f.data[100].tokens;
    CHECK(emotion_score(a, a, model) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(emotion_score(a, b, model) ==
          doctest::Approx(emotion_score(b, a, model)).epsilon(1e-6));
    const Real s = emotion_score(a, b, model);
    CHECK(s >= -1.0001f);
    CHECK(s <= 1.0001f);
  }

  TEST_CASE("training separates the synthetic categories") {
    Fixture f;
    Rng rng(64);
    EmbedderModel model({.vocab_size = f.vocab.size()}, rng);
    EmbedderTrainConfig tc;
    tc.epochs = 6;
    tc.seed = 65;
    const auto report = train_classifier(model, f.data, tc);
    CHECK(report.val_accuracy >= 0.85);

    // intra vs inter category cosine separation on fresh sentences
    Rng fresh(66);
    auto sample = [&](int c) {
      std::vector<int> toks;
      for (int t = 0; t < 4; ++t)
        toks.push_back(f.vocab.id("w" + std::to_string(c) + "_" +
                                  std::to_string(fresh.uniform_int(8))));
      return toks;
    };
    double intra = 0, inter = 0;
    int n_intra = 0, n_inter = 0;
    for (int c = 0; c < kNumEmotions; ++c)
      for (int d = 0; d < kNumEmotions; ++d) {
        const Real s = emotion_score(sample(c), sample(d), model);
        if (c == d) {
          intra += double(s);
          ++n_intra;
        } else {
          inter += double(s);
          ++n_inter;
        }
      }
    CHECK(intra / n_intra > inter / n_inter);
  }

  TEST_CASE("label permutation trains to chance level") {
    Fixture f;
    Rng rng(67);
    std::vector<LabeledSentence> shuffled = f.data;
    // permute the label column across examples: counts survive, the
    // text-label association does not
    std::vector<EmotionCategory> labels;
    for (const auto& ex : shuffled) labels.push_back(ex.label);
    for (std::size_t i = labels.size(); i > 1; --i)
      std::swap(labels[i - 1], labels[size_t(rng.uniform_int(std::int64_t(i)))]);
    for (std::size_t i = 0; i < shuffled.size(); ++i)
      shuffled[i].label = labels[i];
    EmbedderModel model({.vocab_size = f.vocab.size()}, rng);
    EmbedderTrainConfig tc;
    tc.epochs = 2;
    tc.seed = 68;
    const auto report = train_classifier(model, shuffled, tc);
    CHECK(report.val_accuracy < 0.40);  // chance is ~1/7
  }

  TEST_CASE("deterministic given seed") {
    Fixture f;
    auto run = [&]() {
      Rng rng(69);
      EmbedderModel model({.vocab_size = f.vocab.size()}, rng);
      EmbedderTrainConfig tc;
      tc.epochs = 1;
      tc.seed = 70;
      train_classifier(model, f.data, tc);
      std::vector<Real> flat;
      for (auto& [name, t] : model.params())
        flat.insert(flat.end(), t->values().begin(), t->values().end());
      return flat;
    };
    const auto w1 = run();
    const auto w2 = run();
    REQUIRE(w1.size() == w2.size());
    for (std::size_t i = 0; i < w1.size(); ++i) CHECK(w1[i] == w2[i]);
  }

  TEST_CASE("missing category rejected") {
    Fixture f;
    std::vector<LabeledSentence> missing;
    for (const auto& ex : f.data)
      if (ex.label != EmotionCategory::kSad) missing.push_back(ex);
    Rng rng(71);
    EmbedderModel model({.vocab_size = f.vocab.size()}, rng);
    try {
      train_classifier(model, missing, {});
      FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("sad") != std::string::npos);
    }
  }
}
