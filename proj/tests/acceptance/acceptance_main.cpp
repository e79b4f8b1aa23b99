// Acceptance suite (float build): criteria 1 and 3..9. Criterion 2 (the
// 64-bit finite-difference suite) lives in acceptance_grad64. Pipeline
// criteria share one training run in --workdir; criterion 9 shells out to the
// CLI binary given by --cli.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "emochat/epo.hpp"
#include "emochat/kernels.hpp"
#include "emochat/metrics.hpp"
#include "emochat/pipeline.hpp"

using namespace emochat;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

struct CriterionResult {
  int id = 0;
  bool pass = false;
  std::string detail;
  double secs = 0;
};

std::vector<CriterionResult> g_results;

class Timer {
 public:
  Timer() : t0_(clock_type::now()) {}
  double secs() const {
    return std::chrono::duration<double>(clock_type::now() - t0_).count();
  }

 private:
  clock_type::time_point t0_;
};

void report(int id, bool pass, const std::string& detail, double secs) {
  g_results.push_back({id, pass, detail, secs});
  std::printf("  .. criterion %d %s (%.1fs)\n", id, pass ? "ok" : "FAILED", secs);
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// criterion 1: EPO formula oracle

double softmax_prob_double(const Real* row, int v, int target) {
  double mx = -1e300;
  for (int i = 0; i < v; ++i) mx = std::max(mx, double(row[i]));
  double sum = 0;
  for (int i = 0; i < v; ++i) sum += std::exp(double(row[i]) - mx);
  return std::exp(double(row[target]) - mx) / sum;
}

// Brute force over Eq. 1-2 from raw teacher-forced probabilities, all in
// double precision, independent of the tensor path.
double oracle_reward(LmModel& lm, const MixedInput& prompt,
                     const std::vector<int>& y, double beta) {
  NoGradGuard ng;
  MixedInput input = prompt;
  std::vector<int> appended(y.begin(), y.end() - 1);
  const std::size_t start = input.length() - 1;
  if (!appended.empty()) input.segments.push_back(Segment::tokens(appended));
  input.loss_mask.resize(input.loss_mask.size() + appended.size(), 0);
  Tensor hidden = lm.forward_hidden(input, true);
  std::vector<int> rows;
  for (std::size_t i = 0; i < y.size(); ++i) rows.push_back(int(start + i));
  Tensor logits = lm.logits_rows(hidden, rows, true);
  const int v = logits.dim(1);
  double sum_logp = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = softmax_prob_double(
        logits.data() + i * std::size_t(v), v, y[i]);
    sum_logp += std::log(p);
  }
  return beta / double(y.size()) * sum_logp;
}

void criterion_1() {
  Timer timer;
  Rng rng(1001);
  double worst = 0;
  int cases = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int v_extra = 4 + int(rng.uniform_int(10));
    std::vector<std::string> words;
    for (int i = 0; i < v_extra; ++i) words.push_back("w" + std::to_string(i));
    Vocab vocab = Vocab::build(words);
    Rng mr(rng.next_u64());
    LmModel lm({.vocab_size = vocab.size(),
                .d_model = 8 + 4 * int(rng.uniform_int(3)),
                .n_layers = 1 + int(rng.uniform_int(2)),
                .n_heads = 2,
                .d_ff = 16,
                .max_seq_len = 64},
               mr);
    auto rand_tokens = [&](int lo, int hi) {
      std::vector<int> t(std::size_t(lo + rng.uniform_int(hi - lo + 1)));
      for (auto& x : t)
        x = Vocab::kNumReserved + int(rng.uniform_int(v_extra));
      return t;
    };
    MixedInput prompt =
        build_input(Segment::tokens(rand_tokens(1, 4)), std::nullopt,
                    rand_tokens(1, 4), InstructionTemplate::dialogue(vocab), 64);
    const auto y_a = rand_tokens(1, 6);
    auto y_i = rand_tokens(1, 6);
    if (y_i == y_a) y_i.push_back(Vocab::kNumReserved);
    const double beta = rng.uniform(0.5, 4.0);
    const double gamma = rng.uniform(0.0, 1.0);

    NoGradGuard ng;
    const double r_a = double(epo_reward(lm, prompt, y_a, Real(beta)).item());
    const double r_i = double(epo_reward(lm, prompt, y_i, Real(beta)).item());
    const double loss = double(
        epo_loss(lm, prompt, y_a, y_i, Real(beta), Real(gamma)).item());

    const double o_ra = oracle_reward(lm, prompt, y_a, beta);
    const double o_ri = oracle_reward(lm, prompt, y_i, beta);
    const double o_loss = bt_loss(o_ra - o_ri - gamma);

    worst = std::max({worst, std::abs(r_a - o_ra), std::abs(r_i - o_ri),
                      std::abs(loss - o_loss)});
    cases += 1;
  }

  // gamma-margin zero point: equal rewards, gamma = 0 -> ln 2
  double ln2_err = 0;
  {
    Vocab vocab = Vocab::build({"aa", "bb", "cc", "dd"});
    Rng mr(77);
    LmModel lm({.vocab_size = vocab.size(), .d_model = 8, .n_layers = 1,
                .n_heads = 2, .d_ff = 16, .max_seq_len = 64},
               mr);
    for (auto& [name, t] : lm.params())
      std::fill(t->values().begin(), t->values().end(), Real(0));
    NoGradGuard ng;
    MixedInput prompt =
        build_input(Segment::tokens({}), std::nullopt, vocab.encode("aa"),
                    InstructionTemplate::dialogue(vocab), 64);
    const double loss = double(
        epo_loss(lm, prompt, vocab.encode("bb cc"), vocab.encode("dd aa"),
                 Real(2), Real(0))
            .item());
    ln2_err = std::abs(loss - std::log(2.0));
  }

  const double secs = timer.secs();
  const bool ok = worst <= 1e-6 && ln2_err <= 1e-6 && secs < 60;
  std::ostringstream os;
  os << "EPO formula oracle: " << cases << " rigged cases, max |delta| "
     << worst << " <= 1e-6; ln2 zero point |delta| " << ln2_err
     << " <= 1e-6; runtime " << int(secs) << "s < 60s";
  report(1, ok, os.str(), secs);
}

// ---------------------------------------------------------------------------
// criterion 3: scan equivalence + linear-time fit

void criterion_3() {
  Timer timer;
  Rng rng(3001);
  double worst = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t t_len = 1 + std::size_t(rng.uniform_int(1024));
    const std::size_t d_inner = 1 + std::size_t(rng.uniform_int(32));
    const std::size_t n_state = 1 + std::size_t(rng.uniform_int(16));
    std::vector<Real> x(t_len * d_inner), delta(t_len * d_inner),
        a(d_inner * n_state), b(t_len * n_state), c(t_len * n_state),
        dsk(d_inner), y1(t_len * d_inner), y2(t_len * d_inner);
    for (auto& v : x) v = Real(rng.uniform(-1, 1));
    for (auto& v : delta) v = Real(rng.uniform(0.001, 0.1));
    for (std::size_t d = 0; d < d_inner; ++d)
      for (std::size_t n = 0; n < n_state; ++n)
        a[d * n_state + n] = Real(-double(n + 1));
    for (auto& v : b) v = Real(rng.uniform(-1, 1));
    for (auto& v : c) v = Real(rng.uniform(-1, 1));
    for (auto& v : dsk) v = Real(rng.uniform(-1, 1));
    kernels::scan_ref(t_len, d_inner, n_state, x.data(), delta.data(), a.data(),
                      b.data(), c.data(), dsk.data(), y1.data(), nullptr);
    kernels::scan_chunked(t_len, d_inner, n_state, x.data(), delta.data(),
                          a.data(), b.data(), c.data(), dsk.data(), y2.data(),
                          nullptr, 64);
    for (std::size_t i = 0; i < y1.size(); ++i)
      worst = std::max(worst, std::abs(double(y1[i]) - double(y2[i])));
  }

  // wall time over T in {256, 512, 1024} against a linear model
  const std::size_t d_inner = 512, n_state = 16;
  std::vector<double> ts;
  const std::vector<std::size_t> lens = {256, 512, 1024};
  for (std::size_t t_len : lens) {
    std::vector<Real> x(t_len * d_inner), delta(t_len * d_inner),
        a(d_inner * n_state), b(t_len * n_state), c(t_len * n_state),
        dsk(d_inner), y(t_len * d_inner);
    for (auto& v : x) v = Real(rng.uniform(-1, 1));
    for (auto& v : delta) v = Real(rng.uniform(0.001, 0.1));
    for (std::size_t d = 0; d < d_inner; ++d)
      for (std::size_t n = 0; n < n_state; ++n)
        a[d * n_state + n] = Real(-double(n + 1));
    for (auto& v : b) v = Real(rng.uniform(-1, 1));
    for (auto& v : c) v = Real(rng.uniform(-1, 1));
    for (auto& v : dsk) v = Real(rng.uniform(-1, 1));
    std::vector<double> reps;
    for (int rep = 0; rep < 9; ++rep) {
      const auto t0 = clock_type::now();
      kernels::scan_chunked(t_len, d_inner, n_state, x.data(), delta.data(),
                            a.data(), b.data(), c.data(), dsk.data(), y.data(),
                            nullptr, 64);
      reps.push_back(std::chrono::duration<double>(clock_type::now() - t0).count());
    }
    std::sort(reps.begin(), reps.end());
    ts.push_back(reps[reps.size() / 2]);
  }
  // least squares t = a*T + b over the three points
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lens.size(); ++i) {
    sx += double(lens[i]);
    sy += ts[i];
    sxx += double(lens[i]) * double(lens[i]);
    sxy += double(lens[i]) * ts[i];
  }
  const double n = double(lens.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / n;
  double worst_dev = 0;
  for (std::size_t i = 0; i < lens.size(); ++i) {
    const double pred = slope * double(lens[i]) + intercept;
    worst_dev = std::max(worst_dev, std::abs(pred - ts[i]) / ts[i]);
  }

  const double secs = timer.secs();
  const bool ok = worst <= 1e-5 && worst_dev <= 0.25;
  std::ostringstream os;
  os << "scan equivalence: 50 instances (T <= 1024), max |delta| " << worst
     << " <= 1e-5; linear-time fit over T in {256,512,1024} worst deviation "
     << int(worst_dev * 100) << "% <= 25%";
  report(3, ok, os.str(), secs);
}

// ---------------------------------------------------------------------------
// criterion 8: metric oracles

std::string key_of(const std::vector<int>& t, std::size_t i, int n) {
  std::string k;
  for (int j = 0; j < n; ++j) k += std::to_string(t[i + std::size_t(j)]) + "|";
  return k;
}

void criterion_8() {
  Timer timer;
  Rng rng(8001);
  bool dist_exact = true;
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<std::vector<int>> texts(1 + std::size_t(rng.uniform_int(4)));
    for (auto& t : texts) {
      t.resize(1 + std::size_t(rng.uniform_int(12)));
      for (auto& x : t) x = int(rng.uniform_int(6));
    }
    const int n = 1 + int(rng.uniform_int(2));
    std::map<std::string, int> uniq;
    long long total = 0;
    for (const auto& t : texts)
      for (std::size_t i = 0; i + std::size_t(n) <= t.size(); ++i) {
        ++uniq[key_of(t, i, n)];
        ++total;
      }
    if (total == 0) continue;
    // rational comparison: both routes divide the same exact integers
    dist_exact &= dist_n(texts, n) == double(uniq.size()) / double(total);
  }

  double bleu_worst = 0;
  for (int rep = 0; rep < 500; ++rep) {
    auto rand_text = [&](int lo, int hi) {
      std::vector<int> t(std::size_t(lo + rng.uniform_int(hi - lo + 1)));
      for (auto& x : t) x = int(rng.uniform_int(5));
      return t;
    };
    const auto cand = rand_text(1, 14);
    std::vector<std::vector<int>> refs(1 + std::size_t(rng.uniform_int(2)));
    for (auto& r : refs) r = rand_text(1, 14);
    const int max_n = 1 + int(rng.uniform_int(4));

    // brute-force reference with string-keyed counting
    double oracle;
    {
      const long long c = (long long)cand.size();
      long long r = (long long)refs[0].size();
      for (const auto& ref : refs) {
        const long long rr = (long long)ref.size();
        if (std::llabs(rr - c) < std::llabs(r - c) ||
            (std::llabs(rr - c) == std::llabs(r - c) && rr < r))
          r = rr;
      }
      double logsum = 0;
      bool zero = false;
      for (int nn = 1; nn <= max_n && !zero; ++nn) {
        std::map<std::string, long long> cc, rmax;
        long long total = 0;
        for (std::size_t i = 0; i + std::size_t(nn) <= cand.size(); ++i) {
          ++cc[key_of(cand, i, nn)];
          ++total;
        }
        for (const auto& ref : refs) {
          std::map<std::string, long long> rc;
          for (std::size_t i = 0; i + std::size_t(nn) <= ref.size(); ++i)
            ++rc[key_of(ref, i, nn)];
          for (const auto& [k, v] : rc) rmax[k] = std::max(rmax[k], v);
        }
        long long clipped = 0;
        for (const auto& [k, v] : cc) {
          auto it = rmax.find(k);
          if (it != rmax.end()) clipped += std::min(v, it->second);
        }
        if (clipped == 0 && nn == 1) {
          zero = true;
          break;
        }
        logsum += std::log(clipped == 0 ? 1.0 / double(total + 1)
                                        : double(clipped) / double(total));
      }
      oracle = zero ? 0.0
                    : (c >= r ? 1.0 : std::exp(1.0 - double(r) / double(c))) *
                          std::exp(logsum / max_n);
    }
    bleu_worst = std::max(bleu_worst,
                          std::abs(bleu_n(cand, refs, max_n) - oracle));
  }

  // hand semantic example reproduced exactly
  const double f1 = semantic_f1({{0.9, 0.1}, {0.2, 0.8}});
  const double p = (0.9 + 0.8) / 2.0;
  const bool semantic_ok =
      f1 == 2.0 * p * p / (p + p) && std::abs(f1 - 0.85) <= 1e-12;

  const double secs = timer.secs();
  const bool ok = dist_exact && bleu_worst <= 1e-9 && semantic_ok;
  std::ostringstream os;
  os << "metric oracles: dist_n exact on 500 cases: "
     << (dist_exact ? "yes" : "no") << "; bleu_n max |delta| " << bleu_worst
     << " <= 1e-9 on 500 cases; semantic hand example P=R=0.85 reproduced: "
     << (semantic_ok ? "yes" : "no");
  report(8, ok, os.str(), secs);
}

// ---------------------------------------------------------------------------
// pipeline criteria (5, 6, 7, 4) share one training run

struct PipelineState {
  RunConfig cfg;
  OutPaths paths;
  bool trained = false;
};

void criterion_5(PipelineState& st) {
  // Setup that the compressor curriculum presumes: the corpus, the emotion
  // embedder (needed downstream) and the base LM. The base LM stands in for
  // the pretrained backbone the compressor decodes through, so it is timed
  // separately from the curriculum budget.
  Timer setup;
  stage_gen_corpus(st.cfg, st.paths);
  stage_train_embedder(st.cfg, st.paths);
  stage_pretrain_lm(st.cfg, st.paths);
  std::printf("  .. setup (corpus + embedder + base LM) took %.0fs\n",
              setup.secs());
  std::fflush(stdout);

  Timer timer;
  stage_pretrain_compressor(st.cfg, st.paths);
  stage_finetune_compressor(st.cfg, st.paths);

  auto [train, test] = load_and_split(st.cfg, st.paths.corpus());
  LoadedLm lm = load_lm(st.paths.lm_base());
  LoadedCompressor comp = load_compressor(st.paths.compressor());
  const ReconEval single = recon_decode_eval(comp.model, lm.model, test,
                                             lm.vocab, 1, 1, 200, 505);
  const ReconEval multi = recon_decode_eval(comp.model, lm.model, test,
                                            lm.vocab, 2, 5, 120, 506);
  const double secs = timer.secs();
  const bool ok = single.bleu1 >= 0.70 && single.token_accuracy >= 0.70 &&
                  multi.bleu1 >= 0.50 && secs < 3600;
  std::ostringstream os;
  os << "reconstruction: held-out single-utterance BLEU-1 " << single.bleu1
     << " >= 0.70, token accuracy " << single.token_accuracy
     << " >= 0.70; multi-utterance (k <= 5) BLEU-1 " << multi.bleu1
     << " >= 0.50; two-stage curriculum runtime " << int(secs) << "s < 3600s";
  report(5, ok, os.str(), secs);
}

void criterion_6(PipelineState& st) {
  // joint dialogue stage is a prerequisite for candidate generation
  stage_train_lm(st.cfg, st.paths);
  Timer timer;
  const CounterStats stats = stage_gen_counter(st.cfg, st.paths);

  bool all_below = true;
  std::size_t n_pairs = 0;
  for (const auto& pair : load_preference_pairs(st.paths.pairs())) {
    all_below &= pair.similarity < Real(0.1);
    ++n_pairs;
  }

  // argmin property over randomized candidate sets
  Rng rng(6001);
  bool argmin_ok = true;
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<CandidateResponse> cands(7);
    Real lo = Real(2);
    for (int i = 0; i < 7; ++i) {
      cands[std::size_t(i)].emotion = EmotionCategory(i);
      cands[std::size_t(i)].tokens = {100 + i};
      cands[std::size_t(i)].similarity_to_gt = Real(rng.uniform(-1, 1));
      lo = std::min(lo, cands[std::size_t(i)].similarity_to_gt);
    }
    const auto picked = select_counter(cands, Real(0.1));
    if (picked)
      argmin_ok &= picked->similarity_to_gt == lo && lo < Real(0.1);
    else
      argmin_ok &= lo >= Real(0.1);
  }

  const bool rate_ok = stats.acceptance_defined && stats.acceptance_rate > 0.0 &&
                       stats.acceptance_rate < 1.0;
  const double secs = timer.secs();
  const bool ok = all_below && argmin_ok && rate_ok && n_pairs > 0 && secs < 600;
  std::ostringstream os;
  os << "counter-emotion: " << n_pairs << " pairs, all similarities < 0.1: "
     << (all_below ? "yes" : "no") << "; argmin property on 1000 sets: "
     << (argmin_ok ? "yes" : "no") << "; acceptance rate "
     << stats.acceptance_rate << " in (0,1); runtime " << int(secs)
     << "s < 600s";
  report(6, ok, os.str(), secs);
}

void criterion_7(PipelineState& st) {
  Timer timer;
  const EpoStageResult epo = stage_train_epo(st.cfg, st.paths);

  // held-out emotion score, pre vs post EPO, same samples and decode
  auto [train, test] = load_and_split(st.cfg, st.paths.corpus());
  LoadedEmbedder emb = load_embedder(st.paths.embedder());
  LoadedCompressor comp = load_compressor(st.paths.compressor());
  EvalConfig ec = st.cfg.eval;
  ec.max_samples = 120;
  ec.decode.greedy = true;
  auto eval_of = [&](const std::string& ckpt) {
    LoadedLm lm = load_lm(ckpt);
    return run_eval(test, lm.model, &comp.model, emb.model, lm.vocab, ec)
        .mean_emotion;
  };
  const double emo_before = eval_of(st.paths.lm_joint());
  const double emo_after = eval_of(st.paths.lm_epo());

  const double secs = timer.secs();
  const bool margin_ok = epo.after.margin_mean > epo.before.margin_mean;
  const bool win_ok = epo.after.win_frac >= epo.before.win_frac;
  const bool steps_ok = epo.base.steps >= 200;
  const bool emo_ok = emo_after >= emo_before;
  const bool ok = margin_ok && win_ok && steps_ok && emo_ok && secs < 1800;
  std::ostringstream os;
  os << "EPO effect: " << epo.base.steps << " steps >= 200; mean margin "
     << epo.before.margin_mean << " -> " << epo.after.margin_mean
     << " (strictly up: " << (margin_ok ? "yes" : "no") << "); win fraction "
     << epo.before.win_frac << " -> " << epo.after.win_frac
     << " (non-decreasing: " << (win_ok ? "yes" : "no")
     << "); held-out emotion score " << emo_before << " -> " << emo_after
     << " (non-decreasing: " << (emo_ok ? "yes" : "no") << "); runtime "
     << int(secs) << "s < 1800s";
  report(7, ok, os.str(), secs);
}

void criterion_4(PipelineState& st) {
  Timer timer;
  const EfficiencyReport rep =
      run_bench_to_files(st.cfg, st.paths, st.paths.lm_epo(), st.paths.corpus());
  const double secs = timer.secs();
  const bool ok = rep.token_reduction >= 0.80 && rep.time_reduction >= 0.15 &&
                  secs < 600;
  std::ostringstream os;
  os << "compression: prompt token reduction " << rep.token_reduction
     << " >= 0.80; prompt-forward wall-time reduction " << rep.time_reduction
     << " >= 0.15; " << rep.rows.size() << " samples with history >= "
     << rep.min_turns << " turns; runtime " << int(secs) << "s < 600s";
  report(4, ok, os.str(), secs);
}

// ---------------------------------------------------------------------------
// criterion 9: determinism and persistence

std::string small_config_json() {
  RunConfig cfg;
  cfg.corpus.n_conversations = 150;
  cfg.corpus.max_turns = 12;
  cfg.embedder.epochs = 2;
  cfg.lm_pretrain = {.max_steps = 60, .eval_every = 30, .batch = 6,
                     .lr = Real(3e-4), .patience = 3};
  cfg.compressor_pretrain = {.max_steps = 60, .eval_every = 30, .batch = 8,
                             .lr = Real(1e-3), .patience = 3};
  cfg.compressor_finetune = {.max_steps = 40, .eval_every = 20, .batch = 4,
                             .lr = Real(5e-4), .patience = 3};
  cfg.lm_joint = {.max_steps = 40, .eval_every = 20, .batch = 6,
                  .lr = Real(1e-4), .patience = 3};
  cfg.counter.max_turns = 40;
  cfg.counter.decode.max_new_tokens = 12;
  cfg.epo.epochs = 1;
  cfg.epo.min_steps = 10;
  cfg.epo.batch = 8;
  cfg.eval.max_samples = 40;
  return cfg.to_json();
}

bool run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

void criterion_9(const std::string& cli, const fs::path& workdir) {
  Timer timer;
  const fs::path cfg_path = workdir / "small_config.json";
  write_text_file(cfg_path.string(), small_config_json());

  bool runs_ok = true;
  std::string eval1, eval2;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = workdir / ("det_run" + std::to_string(run));
    fs::remove_all(dir);
    runs_ok &= run_cli(cli, "--config " + cfg_path.string() + " --out " +
                                dir.string() + " --seed 7 run-all");
    if (!runs_ok) break;
    (run == 0 ? eval1 : eval2) = read_text_file((dir / "eval.csv").string());
  }
  const bool identical = runs_ok && !eval1.empty() && eval1 == eval2;

  // checkpoint round trip, random tensor table, bit-exact
  bool roundtrip_ok = true;
  {
    Rng rng(9001);
    const fs::path path = workdir / "rt.ckpt";
    std::vector<Tensor> tensors;
    ParamRefs refs;
    for (int i = 0; i < 5; ++i) {
      std::vector<Real> data(64);
      for (auto& v : data) v = Real(rng.normal());
      tensors.push_back(Tensor::from_data({8, 8}, std::move(data)));
    }
    for (int i = 0; i < 5; ++i)
      refs.push_back({"t" + std::to_string(i), &tensors[std::size_t(i)]});
    save_checkpoint(path.string(), "{}", refs);
    const auto ckpt = load_checkpoint(path.string());
    for (const auto& [name, t] : refs) {
      const Tensor& back = ckpt.tensors.at(name);
      for (std::size_t i = 0; i < t->numel(); ++i)
        roundtrip_ok &= back.data()[i] == t->data()[i];
    }
  }

  const double secs = timer.secs();
  const bool ok = identical && roundtrip_ok;
  std::ostringstream os;
  os << "determinism & persistence: run-all --seed 7 twice gives "
     << (identical ? "byte-identical" : "DIFFERENT") << " eval CSVs ("
     << eval1.size() << " bytes); checkpoint round trip bit-exact: "
     << (roundtrip_ok ? "yes" : "no");
  report(9, ok, os.str(), secs);
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  std::string workdir = "acceptance_work";
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli") cli = argv[i + 1];
    if (flag == "--workdir") workdir = argv[i + 1];
  }
  fs::remove_all(workdir);
  fs::create_directories(workdir);

  std::printf("acceptance suite starting (workdir %s)\n", workdir.c_str());
  criterion_1();
  criterion_8();
  criterion_3();

  PipelineState st;
  st.cfg.seed = 7;
  st.cfg.corpus.seed = Rng::derive(7, 1);
  st.cfg.counter.seed = Rng::derive(7, 2);
  st.cfg.epo.seed = Rng::derive(7, 3);
  st.paths.dir = (fs::path(workdir) / "pipeline").string();
  ensure_dir(st.paths.dir);
  echo_config(st.cfg, st.paths);

  criterion_5(st);
  criterion_6(st);
  criterion_7(st);
  criterion_4(st);
  if (!cli.empty()) {
    criterion_9(cli, workdir);
  } else {
    report(9, false, "determinism: --cli not given, cannot run the CLI", 0);
  }

  std::sort(g_results.begin(), g_results.end(),
            [](const CriterionResult& a, const CriterionResult& b) {
              return a.id < b.id;
            });
  std::printf("\n");
  bool all = true;
  std::printf(
      "[INFO] criterion 2 runs in the 64-bit build: see acceptance_grad64\n");
  for (const auto& r : g_results) {
    std::printf("[%s] criterion %d: %s\n", r.pass ? "PASS" : "FAIL", r.id,
                r.detail.c_str());
    all &= r.pass;
  }
  return all ? 0 : 1;
}
