// Command-line entry point for the full pipeline: corpus generation, the
// training curriculum, preference-pair generation, EPO, evaluation,
// benchmarking and an inspection REPL.

#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "emochat/pipeline.hpp"

namespace {

using namespace emochat;

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = "run";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig make_config(const GlobalOpts& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = RunConfig::from_file(g.config_path);
  if (g.seed_set) {
    cfg.seed = g.seed;
    cfg.corpus.seed = Rng::derive(g.seed, 1);
    cfg.counter.seed = Rng::derive(g.seed, 2);
    cfg.epo.seed = Rng::derive(g.seed, 3);
  } else if (g.config_path.empty()) {
    std::random_device rd;
    const std::uint64_t s = (std::uint64_t(rd()) << 32) ^ rd();
    cfg.seed = s;
    cfg.corpus.seed = Rng::derive(s, 1);
    cfg.counter.seed = Rng::derive(s, 2);
    cfg.epo.seed = Rng::derive(s, 3);
    std::cerr << "seed: " << s << " (drawn from entropy; pass --seed to pin)\n";
  }
  return cfg;
}

int run_chat(const std::string& model_path, const std::string& compressor_path,
             bool no_compress, bool sample, std::uint64_t seed) {
  LoadedLm lm = load_lm(model_path);
  std::optional<LoadedCompressor> comp;
  if (!no_compress) {
    std::string cpath = compressor_path;
    if (cpath.empty())
      cpath = (std::filesystem::path(model_path).parent_path() / "compressor.ckpt")
                  .string();
    if (!std::filesystem::exists(cpath))
      fail_arg("chat: compressor checkpoint " + cpath +
               " not found (use --compressor or --no-compress)");
    comp = load_compressor(cpath);
  }
  const auto tmpl = InstructionTemplate::dialogue(lm.vocab);
  Conversation conv;
  conv.id = "chat";
  std::cout << "chat REPL. /history and /mem inspect the context; /quit exits.\n";
  std::string line;
  std::uint64_t turn_seed = seed;
  while (std::cout << "you> " << std::flush, std::getline(std::cin, line)) {
    if (line == "/quit" || line == "/exit") break;
    if (line == "/history") {
      std::size_t tokens = 0;
      for (const auto& u : conv.utterances) {
        tokens += lm.vocab.encode(u.text).size() + 1;
        std::cout << "  [" << u.speaker << "] " << u.text << "\n";
      }
      std::cout << "raw context: " << conv.utterances.size() << " utterances, "
                << tokens << " tokens\n";
      continue;
    }
    if (line == "/mem") {
      std::size_t tokens = 0;
      for (const auto& u : conv.utterances)
        tokens += lm.vocab.encode(u.text).size() + 1;
      if (comp)
        std::cout << "compressed context: " << conv.utterances.size()
                  << " memory vectors (raw would be " << tokens << " tokens)\n";
      else
        std::cout << "compression disabled; raw context is " << tokens
                  << " tokens\n";
      continue;
    }
    if (line.empty()) continue;
    if (Vocab::normalize(line).empty()) {
      std::cout << "(no usable tokens in that line)\n";
      continue;
    }
    conv.utterances.push_back({0, line, EmotionCategory::kNeutral});

    Segment history = Segment::tokens({});
    const std::size_t n = conv.utterances.size();
    if (n >= 2) {
      if (comp) {
        history = Segment::vectors_of(
            comp->model.compress_window(conv, lm.vocab, 0, n - 1, true));
      } else {
        std::vector<int> ids;
        for (std::size_t u = 0; u + 1 < n; ++u) {
          ids.push_back(Vocab::speaker_token(conv.utterances[u].speaker));
          const auto t = lm.vocab.encode(conv.utterances[u].text);
          ids.insert(ids.end(), t.begin(), t.end());
        }
        history = Segment::tokens(ids);
      }
    }
    std::vector<int> sentence;
    sentence.push_back(Vocab::speaker_token(0));
    {
      const auto t = lm.vocab.encode(conv.utterances.back().text);
      sentence.insert(sentence.end(), t.begin(), t.end());
    }
    MixedInput prompt =
        build_input(history, std::nullopt, sentence, tmpl, lm.model.config().max_seq_len);
    DecodeConfig decode;
    decode.greedy = !sample;
    decode.seed = Rng::derive(turn_seed++, 0xC4A7);
    const auto reply = lm.model.generate(prompt, decode);
    const std::string text = lm.vocab.decode(reply);
    std::cout << "bot> " << text << "\n";
    conv.utterances.push_back({1, text, EmotionCategory::kNeutral});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emotional-dialogue training pipeline"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--out", g.out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed for all randomness");

  std::string model_path, corpus_path, compressor_path;
  bool resume = false, no_compress = false, sample = false;
  int min_turns = -1;

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  auto* temb = app.add_subcommand("train-embedder", "train the emotion embedder");
  auto* plm = app.add_subcommand("pretrain-lm", "pretrain the dialogue LM on raw history");
  auto* pcomp = app.add_subcommand("pretrain-compressor",
                                   "single-utterance reconstruction stage");
  auto* fcomp = app.add_subcommand("finetune-compressor",
                                   "multi-utterance reconstruction stage");
  auto* tlm = app.add_subcommand("train-lm",
                                 "dialogue + memory-reconstruction joint stage");
  auto* gcounter = app.add_subcommand("gen-counter",
                                      "build the counter-emotional preference set");
  auto* tepo = app.add_subcommand("train-epo", "preference optimization stage");
  auto* runall = app.add_subcommand("run-all", "run every stage in order");
  runall->add_flag("--resume", resume, "skip stages whose outputs exist");
  auto* eval = app.add_subcommand("eval", "score generations on a corpus");
  eval->add_option("--model", model_path, "LM checkpoint")->required();
  eval->add_option("--corpus", corpus_path, "corpus JSONL");
  auto* bench = app.add_subcommand("bench", "prompt-processing efficiency report");
  bench->add_option("--model", model_path, "LM checkpoint");
  bench->add_option("--corpus", corpus_path, "corpus JSONL");
  bench->add_option("--min-turns", min_turns, "minimum history turns");
  auto* chat = app.add_subcommand("chat", "interactive REPL");
  chat->add_option("--model", model_path, "LM checkpoint")->required();
  chat->add_option("--compressor", compressor_path, "compressor checkpoint");
  chat->add_flag("--no-compress", no_compress, "keep raw token history");
  chat->add_flag("--sample", sample, "sampled decoding instead of greedy");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  g.seed_set = seed_opt->count() > 0;

  try {
    RunConfig cfg = make_config(g);
    OutPaths paths{g.out_dir};

    auto with_echo = [&](auto&& fn) {
      ensure_dir(paths.dir);
      echo_config(cfg, paths);
      fn();
    };

    if (gen->parsed()) {
      with_echo([&] { stage_gen_corpus(cfg, paths); });
      const auto stats = corpus_stats(load_corpus(paths.corpus()));
      std::cout << "corpus: " << stats.n_conversations << " conversations, "
                << stats.n_utterances << " utterances, " << stats.vocab_words
                << " words, recall fraction " << stats.recall_fraction << "\n";
    } else if (temb->parsed()) {
      with_echo([&] {
        const auto r = stage_train_embedder(cfg, paths);
        std::cout << "embedder: val accuracy " << r.final_val_metric << "\n";
      });
    } else if (plm->parsed()) {
      with_echo([&] {
        const auto r = stage_pretrain_lm(cfg, paths);
        std::cout << "lm pretrain: " << r.steps << " steps, val loss "
                  << r.final_val_metric << "\n";
      });
    } else if (pcomp->parsed()) {
      with_echo([&] {
        const auto r = stage_pretrain_compressor(cfg, paths);
        std::cout << "compressor pretrain: " << r.steps
                  << " steps, val token accuracy " << r.final_val_metric << "\n";
      });
    } else if (fcomp->parsed()) {
      with_echo([&] {
        const auto r = stage_finetune_compressor(cfg, paths);
        std::cout << "compressor finetune: " << r.steps
                  << " steps, val token accuracy " << r.final_val_metric << "\n";
      });
    } else if (tlm->parsed()) {
      with_echo([&] {
        const auto r = stage_train_lm(cfg, paths);
        std::cout << "lm joint: " << r.steps << " steps, val loss "
                  << r.final_val_metric << "\n";
      });
    } else if (gcounter->parsed()) {
      with_echo([&] {
        const auto s = stage_gen_counter(cfg, paths);
        std::cout << "pairs: " << s.pairs_accepted << " of " << s.turns_processed
                  << " turns accepted\n";
      });
    } else if (tepo->parsed()) {
      with_echo([&] {
        const auto r = stage_train_epo(cfg, paths);
        std::cout << "epo: " << r.base.steps << " steps, margin "
                  << r.before.margin_mean << " -> " << r.after.margin_mean
                  << (r.base.diverged ? " (diverged, restored)" : "") << "\n";
      });
    } else if (runall->parsed()) {
      run_curriculum(cfg, paths, resume);
      std::cout << "curriculum complete; reports in " << paths.dir << "\n";
    } else if (eval->parsed()) {
      if (corpus_path.empty()) corpus_path = paths.corpus();
      with_echo([&] {
        const auto r = run_eval_to_files(cfg, paths, model_path, corpus_path);
        std::cout << "eval: semantic " << r.mean_semantic << ", emotion "
                  << r.mean_emotion << ", dist-1 " << r.mean_dist1 << " over "
                  << r.samples.size() << " samples\n";
      });
    } else if (bench->parsed()) {
      if (corpus_path.empty()) corpus_path = paths.corpus();
      if (model_path.empty()) model_path = paths.lm_epo();
      if (min_turns > 0) cfg.bench.min_turns = min_turns;
      with_echo([&] {
        const auto r = run_bench_to_files(cfg, paths, model_path, corpus_path);
        std::cout << "bench: token reduction " << r.token_reduction
                  << ", time reduction " << r.time_reduction << " over "
                  << r.rows.size() << " samples\n";
      });
    } else if (chat->parsed()) {
      return run_chat(model_path, compressor_path, no_compress, sample, cfg.seed);
    }
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
