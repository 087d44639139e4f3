// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cflm/config.hpp"

namespace cflm {

enum class MaskKind : uint8_t { DenseCausal, PromptLocalAr, CfTraining, PromptLocalNar };

// Dense query x key visibility matrix; true means the key is visible.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(size_t n_q, size_t n_k) : n_q_(n_q), n_k_(n_k), bits_(n_q * n_k, 0) {}

  size_t n_q() const { return n_q_; }
  size_t n_k() const { return n_k_; }

  bool at(size_t q, size_t k) const { return bits_[q * n_k_ + k] != 0; }
  void set(size_t q, size_t k, bool v) { bits_[q * n_k_ + k] = v ? 1 : 0; }
  std::span<const uint8_t> row(size_t q) const { return {bits_.data() + q * n_k_, n_k_}; }
  std::span<uint8_t> row(size_t q) { return {bits_.data() + q * n_k_, n_k_}; }

  size_t row_count(size_t q) const;
  /// Indices of visible keys per query row, in ascending key order.
  std::vector<std::vector<int>> key_lists() const;
  /// Throws ValidationError when some query row has no visible key.
  void require_nonempty_rows() const;

  /// "n_q n_k" header followed by one line of '1'/'0' per query.
  std::string to_text() const;
  static AttentionMask from_text(const std::string& text);

  bool operator==(const AttentionMask&) const = default;

 private:
  size_t n_q_ = 0;
  size_t n_k_ = 0;
  std::vector<uint8_t> bits_;
};

AttentionMask build_dense_causal(const SequenceLayout& layout);
AttentionMask build_prompt_local_ar(const SequenceLayout& layout, int ar_window);
AttentionMask build_cf_training(const SequenceLayout& layout, const CFConfig& cfg);
/// Bidirectional band over raw slots; an absent window means fully dense.
AttentionMask build_prompt_local_nar(const SequenceLayout& layout, std::optional<int> nar_window);

/// The AR mask matching cfg.mode (dense, window or cf).
AttentionMask build_ar_mask(const SequenceLayout& layout, const CFConfig& cfg);

/// Visibility of keys [0, row.size()) for query slot q under the given rule.
/// This is the row-at-a-time form of the builders above; incremental decoding
/// uses it on a layout prefix.
void fill_mask_row(const SequenceLayout& layout, MaskKind kind, const CFConfig& cfg, size_t q,
                   std::span<uint8_t> row);

/// Independent per-pair re-derivation of the visibility rules. It walks the
/// slot list instead of using the precomputed raw/W indices and exists to
/// cross-check the builders.
bool visibility_oracle(const SequenceLayout& layout, MaskKind kind, const CFConfig& cfg, size_t q,
                       size_t k);

}  // namespace cflm
