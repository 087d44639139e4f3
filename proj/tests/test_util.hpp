// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <vector>

#include "cflm/config.hpp"
#include "cflm/data.hpp"
#include "cflm/transformer.hpp"

namespace cflm::testing {

struct RandomCase {
  int text_len, prompt_len, gen_len;
  CFConfig cfg;
  LayoutKind kind;
};

// Random (layout, config) draw with total length <= max_len, G in [2, 8] and
// N_AR in [G, 32].
inline RandomCase random_case(std::mt19937_64& rng, Mode mode, int max_len = 128) {
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  RandomCase c{};
  const int g = uni(2, 8);
  const int n_ar = uni(g, 32);
  const int n_nar = uni(1, 16);
  c.cfg = make_cf_config(g, n_ar, uni(0, 3) == 0 ? std::nullopt : std::optional<int>(n_nar), 50, mode);
  c.kind = uni(0, 1) ? LayoutKind::Training : LayoutKind::Inference;
  c.text_len = uni(0, 12);
  c.prompt_len = uni(0, 12);
  // Leave room for BOS, EOS and the W slots (at most gen/2 of them).
  const int budget = max_len - c.text_len - c.prompt_len - 2;
  c.gen_len = uni(0, std::max(0, budget * 2 / 3));
  return c;
}

inline ModelConfig tiny_model(int dim = 16, int blocks = 2, int heads = 2, int layers = 1) {
  ModelConfig m;
  m.dim = dim;
  m.num_blocks = blocks;
  m.num_heads = heads;
  m.ffn_mult = 2;
  m.max_positions = 1024;
  m.num_layers = layers;
  return m;
}

inline Example random_example(std::mt19937_64& rng, const Vocabulary& v, int text_len, int prompt_len,
                              int frames) {
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  Example ex;
  for (int i = 0; i < text_len; ++i) ex.text.push_back(uni(0, v.text_size - 1));
  ex.prompt.assign(static_cast<size_t>(v.num_layers), {});
  ex.speech.assign(static_cast<size_t>(v.num_layers), {});
  for (int l = 0; l < v.num_layers; ++l) {
    for (int i = 0; i < prompt_len; ++i) ex.prompt[static_cast<size_t>(l)].push_back(uni(0, v.speech_size - 1));
    for (int i = 0; i < frames; ++i) ex.speech[static_cast<size_t>(l)].push_back(uni(0, v.speech_size - 1));
  }
  return ex;
}

}  // namespace cflm::testing
