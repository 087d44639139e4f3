// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cflm/config.hpp"
#include "cflm/data.hpp"
#include "cflm/transformer.hpp"

namespace cflm {

inline constexpr int kIgnoreTarget = -1;

// Per-slot supervision. Targets index the AR output head (codeword, or
// Vocabulary::eos_output()).
struct TargetPlan {
  std::vector<int> target;
  std::vector<uint8_t> weight;

  size_t active() const;
};

/// Raw slot t predicts raw token t+1, skipping any W in between; the last raw
/// slot (or BOS when nothing is generated) predicts EOS. W, prompt and EOS
/// slots carry no loss.
TargetPlan build_targets(const SequenceLayout& layout, std::span<const int> raw_codewords,
                         const Vocabulary& vocab);

/// Per-slot targets for a NAR layer: codewords at raw slots, ignored elsewhere.
TargetPlan build_nar_targets(const SequenceLayout& layout, std::span<const int> layer_codewords);

template <typename T>
struct LossResult {
  double loss = 0.0;
  size_t count = 0;
  Matrix<T> dlogits;  // d(mean loss) / d(logits); exactly zero on weight-0 rows
};

/// Mean negative log-likelihood over weight-1 slots. Throws when every weight
/// is zero.
template <typename T>
LossResult<T> masked_cross_entropy(const Matrix<T>& logits, const TargetPlan& plan);

/// Loss of one AR example under cfg.mode; accumulates d(scale * loss) into
/// grads when given.
template <typename T>
double ar_example_loss(const Example& ex, const CFConfig& cfg, const Parameters<T>& params,
                       Parameters<T>* grads, double scale = 1.0, size_t* count = nullptr);

/// Loss of one NAR example for codebook layer `layer` (2..L).
template <typename T>
double nar_example_loss(const Example& ex, int layer, const CFConfig& cfg, const Parameters<T>& params,
                        Parameters<T>* grads, double scale = 1.0, size_t* count = nullptr);

struct OptimizerState {
  Parameters<float> m;
  Parameters<float> v;
  int64_t step = 0;
  int64_t total_steps = 1;
  TrainConfig hp;
};

OptimizerState make_optimizer(const Parameters<float>& params, const TrainConfig& hp,
                              int64_t total_steps);

/// Clips to hp.clip_norm, applies linear warmup, then one AdamW update with
/// decoupled weight decay (norm gains are not decayed). Returns the
/// pre-clipping gradient norm.
double adamw_update(Parameters<float>& params, Parameters<float>& grads, OptimizerState& opt);

/// One AR optimization step over a batch; returns the batch mean loss. A
/// non-finite loss throws std::runtime_error before any update.
double train_step_ar(std::span<const Example> batch, const CFConfig& cfg, Parameters<float>& params,
                     OptimizerState& opt);

/// One NAR step; each example draws its layer uniformly from 2..L with rng.
double train_step_nar(std::span<const Example> batch, const CFConfig& cfg, Parameters<float>& params,
                      OptimizerState& opt, std::mt19937_64& rng);

struct TrainLogRow {
  int64_t step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainOptions {
  int steps = 1000;
  int nar_steps = -1;  // < 0: same as steps; 0: skip NAR training
  int log_every = 10;
};

struct TrainedModel {
  Parameters<float> ar;
  std::optional<Parameters<float>> nar;
  std::vector<TrainLogRow> ar_log;
  std::vector<TrainLogRow> nar_log;
};

/// Draws a batch: utterances uniformly at random, each paired with a speech
/// prompt cut from another utterance of the same speaker.
std::vector<Example> sample_batch(const std::vector<Utterance>& corpus, int batch_size,
                                  int prompt_len, std::mt19937_64& rng);

/// Pairs an utterance with a prompt from a different same-speaker utterance
/// (itself when it is the only one). Deterministic in (index, salt).
Example make_example(const std::vector<Utterance>& corpus, size_t index, int prompt_len, uint64_t salt);

/// Vocabulary implied by a run config and corpus (sizes taken from the corpus
/// when the config leaves them unset).
Vocabulary resolve_vocabulary(const RunConfig& cfg, const std::vector<Utterance>& corpus);

/// Trains the AR decoder and, when L >= 2, the NAR decoder. Deterministic in
/// cfg.seed.
TrainedModel train_model(const std::vector<Utterance>& corpus, const RunConfig& cfg,
                         const TrainOptions& opts);

std::string train_log_csv(const std::vector<TrainLogRow>& rows);

}  // namespace cflm
