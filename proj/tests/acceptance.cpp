// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one "criterion N: PASS|FAIL ..." line per criterion and
// exits non-zero if any criterion fails. `--only 3,4` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "cflm/bench.hpp"
#include "cflm/checkpoint.hpp"
#include "cflm/data.hpp"
#include "cflm/inference.hpp"
#include "cflm/mask.hpp"
#include "cflm/synth.hpp"
#include "cflm/training.hpp"
#include "cflm/transformer.hpp"

namespace cflm::acceptance {
namespace {

// Tolerances and budgets.
constexpr int kMaskCases = 1000;
constexpr int kMaxMaskLen = 128;
constexpr double kMaskSeconds = 30.0;
constexpr int kDecodeModels = 100;
constexpr int kDecodeTokens = 256;
constexpr double kDecodeLogitTol = 1e-5;
constexpr double kFasterGrowthMax = 1.5;   // latency(t=2000) / latency(t=200), faster
constexpr double kDenseGrowthMin = 3.0;    // same ratio, dense vanilla
constexpr double kFasterGainMin = 0.10;    // faster vs vanilla per-step time at t >= 1500
constexpr double kBenchSeconds = 300.0;
constexpr double kGradFraction = 0.01;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradFloor = 1e-6;        // denominator floor for near-zero gradients
constexpr double kSerSlack = 0.02;         // window <= dense + slack
constexpr double kMonotonicityMin = 0.9;
constexpr int kAttnSequences = 50;
constexpr double kAblationSlack = 0.01;
constexpr double kRopeTol = 1e-6;
constexpr double kMaskedKeyTol = 1e-7;

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int uni(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Random (layout, config) case with total length <= kMaxMaskLen.
struct MaskCase {
  SequenceLayout layout;
  CFConfig cfg;
};

MaskCase random_mask_case(std::mt19937_64& rng, Mode mode) {
  const int g = uni(rng, 2, 8);
  const int n_ar = uni(rng, g, 32);
  const std::optional<int> n_nar = uni(rng, 0, 3) == 0 ? std::nullopt : std::optional<int>(uni(rng, 1, 16));
  const CFConfig cfg = make_cf_config(g, n_ar, n_nar, 50, mode);
  const LayoutKind kind = uni(rng, 0, 1) ? LayoutKind::Training : LayoutKind::Inference;
  const int text = uni(rng, 0, 12), prompt = uni(rng, 0, 12);
  const int budget = kMaxMaskLen - text - prompt - 2;
  // gen + gen/g <= budget for every g >= 2.
  const int gen = uni(rng, 0, budget * 2 / 3);
  return {build_layout(text, prompt, gen, cfg, kind), cfg};
}

bool equals_oracle(const AttentionMask& m, const SequenceLayout& layout, MaskKind kind, const CFConfig& cfg) {
  for (size_t q = 0; q < m.n_q(); ++q)
    for (size_t k = 0; k < m.n_k(); ++k)
      if (m.at(q, k) != visibility_oracle(layout, kind, cfg, q, k)) return false;
  return true;
}

// 1 -------------------------------------------------------------------------
Result mask_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  int bad = 0, cells = 0;
  for (int i = 0; i < kMaskCases; ++i) {
    const Mode mode = static_cast<Mode>(i % 3);
    const MaskCase c = random_mask_case(rng, mode);
    if (c.layout.size() > static_cast<size_t>(kMaxMaskLen)) return {false, "case exceeds length cap"};
    const MaskKind kind = mode == Mode::Dense    ? MaskKind::DenseCausal
                          : mode == Mode::Window ? MaskKind::PromptLocalAr
                                                 : MaskKind::CfTraining;
    AttentionMask m = mode == Mode::Dense    ? build_dense_causal(c.layout)
                      : mode == Mode::Window ? build_prompt_local_ar(c.layout, c.cfg.ar_window)
                                             : build_cf_training(c.layout, c.cfg);
    bad += !equals_oracle(m, c.layout, kind, c.cfg);
    cells += static_cast<int>(m.n_q() * m.n_k());
    if (mode != Mode::CompressedToFine) {
      bad += !equals_oracle(build_prompt_local_nar(c.layout, c.cfg.nar_window), c.layout, MaskKind::PromptLocalNar,
                            c.cfg);
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < kMaskSeconds, std::to_string(kMaskCases) + " cases, " + std::to_string(cells) +
                                               " AR cells, mismatching builders=" + std::to_string(bad) +
                                               ", " + fmt("%.2f s", secs)};
}

// 2 -------------------------------------------------------------------------
Result degenerations() {
  std::mt19937_64 rng(2);
  int bad = 0, cases = 0;
  for (int i = 0; i < 500; ++i) {
    const int gen = uni(rng, 0, 60);
    const int text = uni(rng, 0, 8), prompt = uni(rng, 0, 8);
    const LayoutKind kind = uni(rng, 0, 1) ? LayoutKind::Training : LayoutKind::Inference;
    // cf with G > gen_len never inserts W, so it must equal the window mask.
    const int g = gen + uni(rng, 1, 4);
    const int n_ar = g + uni(rng, 0, 6);
    const auto cf = make_cf_config(g, n_ar, std::nullopt, 50, Mode::CompressedToFine);
    const auto win = make_cf_config(g, n_ar, std::nullopt, 50, Mode::Window);
    const auto lay_cf = build_layout(text, prompt, gen, cf, kind);
    const auto lay_win = build_layout(text, prompt, gen, win, kind);
    bad += !(build_cf_training(lay_cf, cf) == build_prompt_local_ar(lay_win, n_ar));
    // window with N_AR >= gen_len equals dense causal.
    const int wide = std::max(1, gen + uni(rng, 0, 5));
    bad += !(build_prompt_local_ar(lay_win, wide) == build_dense_causal(lay_win));
    cases += 2;
  }
  return {bad == 0, std::to_string(cases) + " identities checked, failures=" + std::to_string(bad)};
}

// 3 -------------------------------------------------------------------------
ModelConfig desk_model(int ffn_mult = 2) {
  ModelConfig m;
  m.dim = 64;
  m.num_blocks = 2;
  m.num_heads = 4;
  m.ffn_mult = ffn_mult;
  m.max_positions = 4096;
  m.num_layers = 1;
  return m;
}

Result vanilla_equals_faster() {
  std::mt19937_64 rng(3);
  int token_mismatch = 0;
  double worst = 0.0;
  for (int i = 0; i < kDecodeModels; ++i) {
    const int g = uni(rng, 1, 16);
    const int n_ar = g + uni(rng, 0, 24);
    const CFConfig cfg = make_cf_config(g, n_ar, std::nullopt, 50, Mode::CompressedToFine);
    const auto params = Parameters<float>::random(desk_model(), Vocabulary{16, 32, 1}, 1000 + static_cast<uint64_t>(i));
    std::vector<int> text(static_cast<size_t>(uni(rng, 0, 20)));
    for (int& s : text) s = uni(rng, 0, 15);
    std::vector<std::vector<int>> prompt(1, std::vector<int>(static_cast<size_t>(uni(rng, 0, 40))));
    for (int& c : prompt[0]) c = uni(rng, 0, 31);
    GenerationParams gp;
    gp.max_raw_tokens = kDecodeTokens;
    gp.stop_at_eos = false;
    DecodeOptions opts;
    opts.record_logits = true;
    const auto a = generate(InferStrategy::Vanilla, text, prompt, params, cfg, gp, opts);
    const auto b = generate(InferStrategy::Faster, text, prompt, params, cfg, gp, opts);
    token_mismatch += a.tokens != b.tokens;
    for (size_t s = 0; s < std::min(a.logits.size(), b.logits.size()); ++s)
      for (size_t c = 0; c < a.logits[s].size(); ++c)
        worst = std::max(worst, static_cast<double>(std::abs(a.logits[s][c] - b.logits[s][c])));
  }
  return {token_mismatch == 0 && worst <= kDecodeLogitTol,
          std::to_string(kDecodeModels) + " models x " + std::to_string(kDecodeTokens) +
              " tokens, stream mismatches=" + std::to_string(token_mismatch) + ", max |dlogit|=" + fmt("%.3g", worst)};
}

// 4 -------------------------------------------------------------------------
double row_mean(const BenchReport& r, int t) {
  for (const auto& row : r.rows)
    if (row.t == t) return row.mean_ms;
  throw std::runtime_error("missing bench row");
}

Result cache_and_latency() {
  const auto t0 = std::chrono::steady_clock::now();
  // N_p = 100 (24 text + 75 prompt + BOS), G = 15, N_AR = 75.
  const CFConfig cf = make_cf_config(15, 75, std::nullopt, 75, Mode::CompressedToFine);
  const CFConfig dense = make_cf_config(15, 75, std::nullopt, 75, Mode::Dense);
  const auto params = Parameters<float>::random(desk_model(4), Vocabulary{32, 64, 1}, 4);
  BenchOptions o;
  o.grid = {200, 1500, 2000};
  o.infer = InferStrategy::Faster;
  const BenchReport faster = bench(params, cf, o);
  o.infer = InferStrategy::Vanilla;
  const BenchReport vanilla = bench(params, cf, o);
  const BenchReport dense_r = bench(params, dense, o);

  bool bound_ok = true;
  for (size_t t = 0; t < faster.cache_length.size(); ++t) {
    const size_t bound = static_cast<size_t>(faster.num_prompt) + t / 15 + 75 + 1;
    bound_ok = bound_ok && faster.cache_length[t] <= bound;
  }
  const double f_growth = row_mean(faster, 2000) / row_mean(faster, 200);
  const double d_growth = row_mean(dense_r, 2000) / row_mean(dense_r, 200);
  const double gain1500 = 1.0 - row_mean(faster, 1500) / row_mean(vanilla, 1500);
  const double gain2000 = 1.0 - row_mean(faster, 2000) / row_mean(vanilla, 2000);
  const double secs = seconds_since(t0);
  const bool pass = bound_ok && f_growth <= kFasterGrowthMax && d_growth >= kDenseGrowthMin &&
                    gain1500 >= kFasterGainMin && gain2000 >= kFasterGainMin && secs < kBenchSeconds &&
                    faster.tokens == vanilla.tokens;
  return {pass, std::string("bound ") + (bound_ok ? "held" : "violated") + ", faster growth " + fmt("%.2fx", f_growth) +
                    ", dense growth " + fmt("%.2fx", d_growth) + ", faster gain t1500 " + fmt("%.0f%%", 100 * gain1500) +
                    " t2000 " + fmt("%.0f%%", 100 * gain2000) + ", " + fmt("%.1f s", secs)};
}

// 5 -------------------------------------------------------------------------
Result loss_masking() {
  std::mt19937_64 rng(5);
  const Vocabulary v{8, 12, 1};
  const auto params = Parameters<double>::random(ModelConfig{16, 1, 2, 2, 1024, 1}, v, 5);
  int bad_grad = 0, bad_pairs = 0, cases = 0;
  for (int i = 0; i < 200; ++i) {
    const int g = uni(rng, 1, 6);
    const CFConfig cfg = make_cf_config(g, g + uni(rng, 0, 6), std::nullopt, 50, Mode::CompressedToFine);
    Example ex;
    ex.text.resize(static_cast<size_t>(uni(rng, 0, 5)));
    for (int& s : ex.text) s = uni(rng, 0, 7);
    ex.prompt.assign(1, std::vector<int>(static_cast<size_t>(uni(rng, 0, 5))));
    for (int& c : ex.prompt[0]) c = uni(rng, 0, 11);
    ex.speech.assign(1, std::vector<int>(static_cast<size_t>(uni(rng, 0, 40))));
    for (int& c : ex.speech[0]) c = uni(rng, 0, 11);
    const auto layout = build_layout(static_cast<int>(ex.text.size()), ex.prompt_frames(), ex.frames(), cfg);
    const auto ids = ar_token_ids(ex, layout, v);
    const auto acts = forward_ar<double>(ids, layout, build_ar_mask(layout, cfg), params);
    const TargetPlan plan = build_targets(layout, ex.speech[0], v);
    const auto loss = masked_cross_entropy(acts.logits, plan);
    for (const Slot& s : layout.slots()) {
      if (s.kind != SlotKind::W) continue;
      for (size_t c = 0; c < loss.dlogits.cols(); ++c)
        bad_grad += loss.dlogits.at(static_cast<size_t>(s.position), c) != 0.0;
    }
    // Enumeration oracle: the weighted (input, target) pairs in slot order are exactly
    // (BOS, c0), (c0, c1), ..., (c_{n-1}, EOS).
    std::vector<std::pair<int, int>> got, want;
    for (size_t p = 0; p < layout.size(); ++p)
      if (plan.weight[p]) got.emplace_back(ids[p], plan.target[p]);
    int prev = v.bos();
    for (int c : ex.speech[0]) {
      want.emplace_back(prev, c);
      prev = v.speech_id(c);
    }
    want.emplace_back(prev, v.eos_output());
    bad_pairs += got != want;
    ++cases;
  }
  return {bad_grad == 0 && bad_pairs == 0, std::to_string(cases) + " layouts, nonzero W-slot gradients=" +
                                               std::to_string(bad_grad) + ", pair mismatches=" +
                                               std::to_string(bad_pairs)};
}

// 6 -------------------------------------------------------------------------
Result gradient_fidelity() {
  const Vocabulary v{8, 16, 1};
  const CFConfig cfg = make_cf_config(3, 4, std::nullopt, 50, Mode::CompressedToFine);
  auto params = Parameters<double>::random(ModelConfig{32, 2, 4, 2, 1024, 1}, v, 6);
  std::mt19937_64 rng(6);
  Example ex;
  ex.text = {1, 5, 2, 7};
  ex.prompt = {{3, 9, 4}};
  ex.speech = {{}};
  for (int i = 0; i < 14; ++i) ex.speech[0].push_back(uni(rng, 0, 15));
  auto grads = Parameters<double>::zeros(params.config, v);
  ar_example_loss<double>(ex, cfg, params, &grads);

  std::vector<double*> p, g;
  params.visit([&](const std::string&, Tensor<double>& t) {
    for (auto& x : t.data) p.push_back(&x);
  });
  grads.visit([&](const std::string&, Tensor<double>& t) {
    for (auto& x : t.data) g.push_back(&x);
  });
  const size_t n = p.size();
  const size_t k = std::max<size_t>(1, static_cast<size_t>(kGradFraction * static_cast<double>(n)));
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  double worst = 0.0;
  const double h = 1e-5;
  for (size_t i : idx) {
    const double orig = *p[i];
    *p[i] = orig + h;
    const double up = ar_example_loss<double>(ex, cfg, params, nullptr);
    *p[i] = orig - h;
    const double down = ar_example_loss<double>(ex, cfg, params, nullptr);
    *p[i] = orig;
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(fd - *g[i]) / std::max({std::abs(fd), std::abs(*g[i]), kGradFloor});
    worst = std::max(worst, rel);
  }
  return {worst <= kGradRelTol, std::to_string(k) + " of " + std::to_string(n) +
                                    " parameters (dim 32, double), max relative error " + fmt("%.3g", worst)};
}

// 7-9 ----------------------------------------------------------------------
// Shared synthetic-TTS protocol. Every variant gets the same corpus, steps and seed.
struct TtsProtocol {
  SynthSpec spec;
  LengthRange train_len{2, 12};
  int train_records = 20000;
  int eval_records = 40;
  int steps = 3000;
  int frame_rate = 30;        // CR analog: frame_rate / G
  int g = 6;                  // CR = 5
  int n_ar = 12;
  std::vector<int> g_sweep{2, 6, 12};  // middle cell reuses the criterion 7 cf model
  uint64_t seed = 1;

  TtsProtocol() {
    // Heavy redundancy: every codeword held for 3 to 6 frames.
    spec.alphabet = 16;
    spec.repeat_min = 3;
    spec.repeat_max = 6;
    spec.num_speakers = 1;
    spec.num_layers = 1;
    spec.seed = 7;
  }
};

struct TtsData {
  TtsProtocol proto;
  MotifTable table;
  std::vector<Utterance> train, long_eval, short_eval;
  int median_len = 0;

  TtsData() {
    table = build_motif_table(proto.spec);
    train = gen_corpus(proto.spec, proto.train_records, proto.train_len);
    std::vector<int> lens;
    for (const auto& u : train) lens.push_back(static_cast<int>(u.text.size()));
    std::nth_element(lens.begin(), lens.begin() + static_cast<long>(lens.size() / 2), lens.end());
    median_len = lens[lens.size() / 2];
    long_eval = gen_corpus(proto.spec, proto.eval_records, LengthRange{2 * median_len, 2 * proto.train_len.max},
                           1'000'000);
    short_eval = gen_corpus(proto.spec, kAttnSequences, proto.train_len, 2'000'000);
  }
};

TtsData& tts_data() {
  static TtsData d;
  return d;
}

RunConfig tts_config(Mode mode, int g, int n_ar) {
  const TtsProtocol& p = tts_data().proto;
  RunConfig rc;
  rc.cf = make_cf_config(g, n_ar, std::nullopt, p.frame_rate, mode);
  rc.model = desk_model();
  rc.model.max_positions = 1024;
  rc.train.batch_size = 8;
  rc.seed = p.seed;
  return rc;
}

struct Trained {
  RunConfig rc;
  Parameters<float> ar;
  double seconds = 0.0;
};

const Trained& trained(Mode mode, int g, int n_ar) {
  static std::map<std::tuple<int, int, int>, Trained> cache;
  const auto key = std::make_tuple(static_cast<int>(mode), g, n_ar);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig rc = tts_config(mode, g, n_ar);
  TrainOptions o;
  o.steps = tts_data().proto.steps;
  o.log_every = 0;
  TrainedModel m = train_model(tts_data().train, rc, o);
  Trained t{rc, std::move(m.ar), seconds_since(t0)};
  std::fprintf(stderr, "  trained %s G=%d N_AR=%d in %.0f s\n", std::string(to_string(mode)).c_str(), g, n_ar,
               t.seconds);
  return cache.emplace(key, std::move(t)).first->second;
}

double ser_on(const Trained& t, const std::vector<Utterance>& set) {
  EvalOptions e;
  return evaluate(Checkpoint{t.rc.cf, t.ar, std::nullopt}, set, tts_data().table, e).mean_ser;
}

Result end_to_end() {
  const TtsProtocol& p = tts_data().proto;
  const double dense = ser_on(trained(Mode::Dense, p.g, p.n_ar), tts_data().long_eval);
  const double window = ser_on(trained(Mode::Window, p.g, p.n_ar), tts_data().long_eval);
  const double cf = ser_on(trained(Mode::CompressedToFine, p.g, p.n_ar), tts_data().long_eval);
  const bool pass = cf <= window && window <= dense + kSerSlack && cf < dense;
  return {pass, "held-out length >= " + std::to_string(2 * tts_data().median_len) + " symbols, SER dense " +
                    fmt("%.3f", dense) + ", window " + fmt("%.3f", window) + ", cf " + fmt("%.3f", cf) + ", " +
                    std::to_string(p.steps) + " steps each"};
}

double mean_monotonicity(const Parameters<float>& params, const CFConfig& cfg) {
  double sum = 0;
  const auto& set = tts_data().short_eval;
  for (size_t i = 0; i < set.size(); ++i) sum += attn_viz(params, cfg, make_example(set, i, 0, 0)).monotonicity();
  return sum / static_cast<double>(set.size());
}

Result alignment() {
  const TtsProtocol& p = tts_data().proto;
  const Trained& t = trained(Mode::CompressedToFine, p.g, p.n_ar);
  const double score = mean_monotonicity(t.ar, t.rc.cf);
  const auto untrained = Parameters<float>::random(t.ar.config, t.ar.vocab, p.seed);
  const double base = mean_monotonicity(untrained, t.rc.cf);
  return {score >= kMonotonicityMin, "trained cf " + fmt("%.3f", score) + " on " + std::to_string(kAttnSequences) +
                                         " held-out sequences, untrained baseline " + fmt("%.3f", base)};
}

Result ablation() {
  const TtsProtocol& p = tts_data().proto;
  std::vector<double> ser;
  std::string cells;
  for (int g : p.g_sweep) {
    ser.push_back(ser_on(trained(Mode::CompressedToFine, g, p.n_ar), tts_data().short_eval));
    cells += (cells.empty() ? "" : ", ") + std::string("G=") + std::to_string(g) + " " + fmt("%.3f", ser.back());
  }
  // The CR = 5 analog is the middle cell.
  const double mid = ser[1];
  bool pass = true;
  for (double s : ser) pass = pass && mid <= s + kAblationSlack;
  return {pass, "SER " + cells + " (frame_rate " + std::to_string(p.frame_rate) + ", N_AR " +
                    std::to_string(p.n_ar) + ")"};
}

// 10 ------------------------------------------------------------------------
Result rope_and_masked_keys() {
  std::mt19937_64 rng(10);
  std::normal_distribution<float> nd;
  // RoPE: content-identical q/k at shifted positions give the same scores.
  Matrix<float> q = Matrix<float>::matrix(6, 64), k = Matrix<float>::matrix(6, 64);
  for (auto& x : q.data) x = nd(rng);
  for (auto& x : k.data) x = nd(rng);
  double rope_worst = 0;
  for (int shift : {1, 7, 100, 1000, 3000}) {
    std::vector<int> p0{0, 3, 4, 9, 20, 31}, p1 = p0;
    for (int& x : p1) x += shift;
    for (int h = 0; h < 4; ++h) {
      const auto a = attention_scores(q, k, p0, 4, h);
      const auto b = attention_scores(q, k, p1, 4, h);
      for (size_t i = 0; i < a.size(); ++i)
        rope_worst = std::max(rope_worst, std::abs(static_cast<double>(a.data[i]) - b.data[i]) /
                                              std::max(1.0, std::abs(static_cast<double>(a.data[i]))));
    }
  }
  // Masked keys: perturbing k/v rows a query cannot see leaves its output row unchanged.
  double key_worst = 0;
  int probes = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = static_cast<size_t>(uni(rng, 4, 40));
    AttentionMask mask(n, n);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j) mask.set(i, j, uni(rng, 0, 2) == 0);
      mask.set(i, static_cast<size_t>(uni(rng, 0, static_cast<int>(n) - 1)), true);
    }
    Matrix<float> qq = Matrix<float>::matrix(n, 64), kk = qq, vv = qq;
    for (auto* m : {&qq, &kk, &vv})
      for (auto& x : m->data) x = nd(rng);
    std::vector<int> pos(n);
    for (size_t i = 0; i < n; ++i) pos[i] = static_cast<int>(i) * 3;
    const auto base = masked_attention(qq, kk, vv, mask, pos, 4);
    const size_t q_row = static_cast<size_t>(uni(rng, 0, static_cast<int>(n) - 1));
    auto k2 = kk, v2 = vv;
    for (size_t j = 0; j < n; ++j) {
      if (mask.at(q_row, j)) continue;
      for (size_t c = 0; c < 64; ++c) {
        k2.at(j, c) += 10.0f * nd(rng);
        v2.at(j, c) += 10.0f * nd(rng);
      }
    }
    const auto out = masked_attention(qq, k2, v2, mask, pos, 4);
    for (size_t c = 0; c < 64; ++c)
      key_worst = std::max(key_worst, std::abs(static_cast<double>(out.at(q_row, c)) - base.at(q_row, c)));
    ++probes;
  }
  return {rope_worst <= kRopeTol && key_worst <= kMaskedKeyTol && probes > 0,
          "RoPE max relative score change " + fmt("%.3g", rope_worst) + ", masked-key max |output change| " +
              fmt("%.3g", key_worst) + " over " + std::to_string(probes) + " random masks"};
}

}  // namespace
}  // namespace cflm::acceptance

int main(int argc, char** argv) {
  using namespace cflm::acceptance;
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<int, std::function<Result()>>> criteria{
      {1, mask_oracle},     {2, degenerations},      {3, vanilla_equals_faster}, {4, cache_and_latency},
      {5, loss_masking},    {6, gradient_fidelity},  {7, end_to_end},            {8, alignment},
      {9, ablation},        {10, rope_and_masked_keys}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Result r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s %s\n", id, r.pass ? "PASS" : "FAIL", r.detail.c_str());
    std::fflush(stdout);
    failed += !r.pass;
  }
  return failed == 0 ? 0 : 1;
}
