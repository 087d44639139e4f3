// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cflm/checkpoint.hpp"
#include "cflm/inference.hpp"
#include "cflm/synth.hpp"
#include "cflm/training.hpp"

namespace cflm {

// ---------------------------------------------------------------------------
// Step-latency benchmark

struct BenchOptions {
  std::vector<int> grid{20, 200, 2000};  // raw-step indices to report
  int window = 10;                       // steps averaged on each side of a grid point
  int warmup = 10;                       // leading steps discarded
  int repeats = 3;                       // per-step median across repeats
  int text_len = 24;
  int prompt_len = 75;
  InferStrategy infer = InferStrategy::Faster;
};

struct BenchRow {
  int t = 0;
  double mean_ms = 0.0, p50_ms = 0.0, p90_ms = 0.0;
  size_t cache_length = 0;
};

struct BenchReport {
  Mode mode = Mode::CompressedToFine;
  InferStrategy infer = InferStrategy::Faster;
  std::vector<BenchRow> rows;
  std::vector<double> step_ms;        // per raw step, median over repeats
  std::vector<size_t> cache_length;   // per raw step
  std::vector<int> tokens;            // identical across repeats
  double tokens_per_s = 0.0;
  double rtf = 0.0;  // decode wall time / (raw tokens / frame_rate)
  int num_prompt = 0;
};

/// Greedy decoding of a fixed synthetic prompt to max(grid) + window + 1 raw
/// tokens with EOS banned. Throws if repeats disagree on the token stream.
BenchReport bench(const Parameters<float>& params, const CFConfig& cfg, const BenchOptions& opts);

std::string bench_csv(const BenchReport& r);
/// t, step_ms, cache_len, bound (bound only for the eviction cache).
std::string bench_steps_csv(const BenchReport& r, const CFConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  int prompt_len = 0;
  uint64_t prompt_salt = 0x5eed;
  InferStrategy infer = InferStrategy::Faster;  // falls back to vanilla outside cf mode
  double max_len_factor = 2.0;  // generation cap = factor * reference frames + 16
  int limit = -1;               // evaluate the first `limit` records (all when < 0)
};

struct EvalRow {
  size_t index = 0;
  int reference_frames = 0;
  int generated_frames = 0;
  double ser = 0.0;
  std::optional<double> speaker_match;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_ser = 0.0;
  std::optional<double> mean_speaker_match;
};

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<Utterance>& corpus, const MotifTable& table,
                    const EvalOptions& opts);
std::string eval_csv(const EvalReport& r);

// ---------------------------------------------------------------------------
// Ablation sweep

enum class SweepAxis : uint8_t { G, NAr, NNar };
SweepAxis parse_sweep_axis(const std::string& s);
std::string to_string(SweepAxis a);

struct SweepRow {
  int value = 0;
  double ser = 0.0;
  std::optional<double> speaker_match;
  double final_loss = 0.0;
};

/// Trains one model per value from identical seeds, corpus and budget, then
/// evaluates each on `eval_corpus`.
std::vector<SweepRow> sweep(const std::vector<Utterance>& train_corpus, const std::vector<Utterance>& eval_corpus,
                            const MotifTable& table, const RunConfig& base, SweepAxis axis,
                            const std::vector<int>& values, const TrainOptions& train, const EvalOptions& eval);
std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows);

// ---------------------------------------------------------------------------
// Text-attention export

struct AttnExport {
  int steps = 0;     // one row per predicted raw token (BOS query first)
  int text_len = 0;
  std::vector<double> weights;  // [steps x text_len], block- and head-averaged

  double at(int s, int c) const { return weights[static_cast<size_t>(s * text_len + c)]; }
  /// Fraction of consecutive rows whose argmax column does not move backwards.
  double monotonicity() const;
};

/// Teacher-forced AR pass over `ex` under the model's own mode.
AttnExport attn_viz(const Parameters<float>& params, const CFConfig& cfg, const Example& ex);
std::string attn_csv(const AttnExport& a);

}  // namespace cflm
