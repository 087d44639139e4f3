// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "cflm/config.hpp"
#include "cflm/transformer.hpp"

namespace cflm {

// One corpus record: text symbols, speaker, and speech[layer][frame].
struct Utterance {
  std::vector<int> text;
  int speaker = 0;
  std::vector<std::vector<int>> speech;

  int frames() const { return speech.empty() ? 0 : static_cast<int>(speech[0].size()); }
  bool operator==(const Utterance&) const = default;
};

// A training or evaluation example: the utterance to predict plus the speech
// prompt (all layers) it is conditioned on.
struct Example {
  std::vector<int> text;
  std::vector<std::vector<int>> prompt;  // [layer][frame], may have zero frames
  std::vector<std::vector<int>> speech;  // [layer][frame]
  int speaker = 0;

  int prompt_frames() const { return prompt.empty() ? 0 : static_cast<int>(prompt[0].size()); }
  int frames() const { return speech.empty() ? 0 : static_cast<int>(speech[0].size()); }
};

/// Flat AR token ids for every slot of `layout` (first codebook layer only).
std::vector<int> ar_token_ids(const Example& ex, const SequenceLayout& layout, const Vocabulary& vocab);

/// NAR inputs for predicting codebook layer `layer` (1-based): the prompt
/// region sums all L layers, generated slots sum layers 1..layer-1.
std::vector<SlotInput> nar_slot_inputs(const std::vector<int>& text,
                                       const std::vector<std::vector<int>>& prompt,
                                       const std::vector<std::vector<int>>& codes, int layer,
                                       const SequenceLayout& layout, const Vocabulary& vocab);

}  // namespace cflm
