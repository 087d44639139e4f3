// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cflm/config.hpp"
#include "cflm/mask.hpp"
#include "cflm/transformer.hpp"

namespace cflm {

struct GenerationParams {
  int max_raw_tokens = 256;
  double temperature = 0.0;  // 0: greedy
  int top_k = 50;
  uint64_t seed = 0;
  bool stop_at_eos = true;  // false bans EOS so exactly max_raw_tokens are produced

  void validate() const;
};

enum class InferStrategy : uint8_t { Vanilla, Faster };

std::string to_string(InferStrategy s);
InferStrategy parse_infer_strategy(const std::string& s);

/// Temperature-scaled top-k draw; argmax (lowest index on ties) when the
/// temperature is 0 or top_k is 1. `banned` (if >= 0) is never returned.
int sample(std::span<const float> logits, const GenerationParams& gen, std::mt19937_64& rng,
           int banned = -1);

// KV storage driven by the decode loop: begin_slot, then forward_step (which
// calls store/view per block), then end_slot.
class DecodeCache : public KvSource<float> {
 public:
  virtual void begin_slot(const Slot& slot) = 0;
  virtual void end_slot() = 0;
  /// Entries currently held, including the slot in flight.
  virtual size_t length() const = 0;
};

// Keeps every entry; visibility comes from the mask row of the slot.
class VanillaCache final : public DecodeCache {
 public:
  VanillaCache(const SequenceLayout& layout, const CFConfig& cfg, int num_blocks, int dim);

  void begin_slot(const Slot& slot) override;
  void end_slot() override {}
  size_t length() const override { return positions_.size(); }
  void store(int block, const float* key, const float* value) override;
  void view(int block, KeyValueView<float>& out) override;

 private:
  const SequenceLayout& layout_;
  CFConfig cfg_;
  MaskKind kind_;
  size_t dim_;
  std::vector<std::vector<float>> keys_, values_;
  std::vector<int> positions_;
  std::vector<uint8_t> row_;
  bool row_ready_ = false;
};

// Prompt segment, append-only W segment, and a ring of the most recent N_AR
// raw entries. Survivors keep their original positions.
class EvictionCache final : public DecodeCache {
 public:
  EvictionCache(const CFConfig& cfg, int num_prompt, int num_blocks, int dim);

  void begin_slot(const Slot& slot) override;
  void end_slot() override;
  size_t length() const override { return prompt_pos_.size() + w_pos_.size() + ring_count_; }
  void store(int block, const float* key, const float* value) override;
  void view(int block, KeyValueView<float>& out) override;

  size_t prompt_size() const { return prompt_pos_.size(); }
  size_t w_size() const { return w_pos_.size(); }
  size_t ring_size() const { return ring_count_; }
  /// Retained absolute positions in attention order (prompt, then W and raw merged).
  std::vector<int> positions() const;

 private:
  size_t ring_slot(size_t i) const { return (ring_start_ + i) % ring_cap_; }

  CFConfig cfg_;
  size_t num_prompt_;
  size_t dim_;
  Slot current_{};
  struct Block {
    std::vector<float> prompt_k, prompt_v, w_k, w_v, ring_k, ring_v;
  };
  std::vector<Block> blocks_;
  std::vector<int> prompt_pos_, w_pos_;
  std::vector<int> ring_pos_;
  size_t ring_cap_ = 0, ring_start_ = 0, ring_count_ = 0;
};

struct DecodeOptions {
  bool record_logits = false;  // logits each token was sampled from
  bool record_timing = false;
};

struct GenerationResult {
  std::vector<int> tokens;  // first-layer codewords
  bool hit_eos = false;
  std::vector<std::vector<float>> logits;
  std::vector<size_t> cache_length;  // per raw feed step, including the slot itself
  std::vector<double> step_ms;       // raw feed step plus the W step it triggers
  double prefill_ms = 0.0;
};

/// Incremental AR decoding. The speech prompt uses prompt[0] (first layer).
/// In cf mode a W slot is fed after every G sampled tokens and its output
/// discarded.
GenerationResult generate(InferStrategy strategy, const std::vector<int>& text,
                          const std::vector<std::vector<int>>& prompt, const Parameters<float>& params,
                          const CFConfig& cfg, const GenerationParams& gen, const DecodeOptions& opts = {});

inline GenerationResult generate_vanilla(const std::vector<int>& text, const std::vector<std::vector<int>>& prompt,
                                         const Parameters<float>& params, const CFConfig& cfg,
                                         const GenerationParams& gen, const DecodeOptions& opts = {}) {
  return generate(InferStrategy::Vanilla, text, prompt, params, cfg, gen, opts);
}

inline GenerationResult generate_faster(const std::vector<int>& text, const std::vector<std::vector<int>>& prompt,
                                        const Parameters<float>& params, const CFConfig& cfg,
                                        const GenerationParams& gen, const DecodeOptions& opts = {}) {
  return generate(InferStrategy::Faster, text, prompt, params, cfg, gen, opts);
}

/// Fills layers 2..L by argmax under the bidirectional N_NAR mask, one layer
/// at a time. Returns [layer][frame]; L = 1 returns just the first layer.
std::vector<std::vector<int>> refine_nar(const std::vector<int>& text,
                                         const std::vector<std::vector<int>>& prompt,
                                         const std::vector<int>& first_layer, const Parameters<float>& params,
                                         const CFConfig& cfg);

}  // namespace cflm
