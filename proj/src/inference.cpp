// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cflm/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "cflm/data.hpp"

namespace cflm {

void GenerationParams::validate() const {
  if (max_raw_tokens < 0) throw ValidationError("max_raw_tokens must be >= 0");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be >= 0");
  if (top_k < 1) throw ValidationError("top_k must be >= 1");
}

std::string to_string(InferStrategy s) { return s == InferStrategy::Vanilla ? "vanilla" : "faster"; }

InferStrategy parse_infer_strategy(const std::string& s) {
  if (s == "vanilla") return InferStrategy::Vanilla;
  if (s == "faster") return InferStrategy::Faster;
  throw ValidationError("unknown inference strategy '" + s + "' (expected vanilla or faster)");
}

int sample(std::span<const float> logits, const GenerationParams& gen, std::mt19937_64& rng, int banned) {
  gen.validate();
  const int n = static_cast<int>(logits.size());
  for (float x : logits) {
    if (!std::isfinite(x)) throw ValidationError("sample: non-finite logit");
  }
  auto allowed = [&](int i) { return i != banned; };
  std::vector<int> order;
  order.reserve(logits.size());
  for (int i = 0; i < n; ++i) {
    if (allowed(i)) order.push_back(i);
  }
  if (order.empty()) throw ValidationError("sample: no admissible token");
  if (gen.temperature == 0.0 || gen.top_k == 1) {
    int best = order[0];
    for (int i : order) {
      if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
    }
    return best;
  }
  const size_t k = std::min(order.size(), static_cast<size_t>(gen.top_k));
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
  });
  order.resize(k);
  const double mx = logits[static_cast<size_t>(order[0])] / gen.temperature;
  std::vector<double> w(k);
  double sum = 0.0;
  for (size_t i = 0; i < k; ++i) {
    w[i] = std::exp(logits[static_cast<size_t>(order[i])] / gen.temperature - mx);
    sum += w[i];
  }
  // 53 random bits give a uniform double in [0, 1).
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * sum;
  double acc = 0.0;
  for (size_t i = 0; i < k; ++i) {
    acc += w[i];
    if (u < acc) return order[i];
  }
  return order[k - 1];
}

namespace {

MaskKind ar_mask_kind(Mode m) {
  switch (m) {
    case Mode::Dense: return MaskKind::DenseCausal;
    case Mode::Window: return MaskKind::PromptLocalAr;
    case Mode::CompressedToFine: return MaskKind::CfTraining;
  }
  return MaskKind::DenseCausal;
}

}  // namespace

// ---------------------------------------------------------------------------
// VanillaCache

VanillaCache::VanillaCache(const SequenceLayout& layout, const CFConfig& cfg, int num_blocks, int dim)
    : layout_(layout),
      cfg_(cfg),
      kind_(ar_mask_kind(cfg.mode)),
      dim_(static_cast<size_t>(dim)),
      keys_(static_cast<size_t>(num_blocks)),
      values_(static_cast<size_t>(num_blocks)) {
  for (auto& k : keys_) k.reserve(layout.size() * dim_);
  for (auto& v : values_) v.reserve(layout.size() * dim_);
}

void VanillaCache::begin_slot(const Slot& slot) {
  if (slot.position != static_cast<int>(positions_.size())) {
    throw ValidationError("VanillaCache: slots must be fed in position order");
  }
  positions_.push_back(slot.position);
  row_ready_ = false;
}

void VanillaCache::store(int block, const float* key, const float* value) {
  auto& k = keys_[static_cast<size_t>(block)];
  auto& v = values_[static_cast<size_t>(block)];
  k.insert(k.end(), key, key + dim_);
  v.insert(v.end(), value, value + dim_);
}

void VanillaCache::view(int block, KeyValueView<float>& out) {
  const size_t n = positions_.size();
  if (!row_ready_) {
    row_.assign(n, 0);
    fill_mask_row(layout_, kind_, cfg_, n - 1, row_);
    row_ready_ = true;
  }
  const float* k = keys_[static_cast<size_t>(block)].data();
  const float* v = values_[static_cast<size_t>(block)].data();
  for (size_t i = 0; i < n; ++i) {
    out.keys.push_back(k + i * dim_);
    out.values.push_back(v + i * dim_);
  }
  out.mask = row_.data();
}

// ---------------------------------------------------------------------------
// EvictionCache

EvictionCache::EvictionCache(const CFConfig& cfg, int num_prompt, int num_blocks, int dim)
    : cfg_(cfg),
      num_prompt_(static_cast<size_t>(num_prompt)),
      dim_(static_cast<size_t>(dim)),
      blocks_(static_cast<size_t>(num_blocks)) {
  if (cfg.mode != Mode::CompressedToFine) throw ValidationError("EvictionCache requires cf mode");
  if (cfg.ar_window < cfg.span) throw ValidationError("EvictionCache requires N_AR >= G");
  ring_cap_ = static_cast<size_t>(cfg.ar_window) + 1;
  ring_pos_.assign(ring_cap_, -1);
  for (auto& b : blocks_) {
    b.ring_k.assign(ring_cap_ * dim_, 0.0f);
    b.ring_v.assign(ring_cap_ * dim_, 0.0f);
    b.prompt_k.reserve(num_prompt_ * dim_);
    b.prompt_v.reserve(num_prompt_ * dim_);
  }
}

void EvictionCache::begin_slot(const Slot& slot) {
  current_ = slot;
  switch (slot.kind) {
    case SlotKind::TextPrompt:
    case SlotKind::SpeechPrompt:
    case SlotKind::Bos:
      if (prompt_pos_.size() >= num_prompt_) throw ValidationError("EvictionCache: prompt segment overflow");
      prompt_pos_.push_back(slot.position);
      break;
    case SlotKind::W:
      if (ring_count_ < static_cast<size_t>(cfg_.span)) throw ValidationError("EvictionCache: W before a full span");
      w_pos_.push_back(slot.position);
      break;
    case SlotKind::Raw:
      if (prompt_pos_.size() != num_prompt_) throw ValidationError("EvictionCache: raw slot before full prompt");
      ring_pos_[ring_slot(ring_count_)] = slot.position;
      ++ring_count_;
      break;
    case SlotKind::Eos: throw ValidationError("EvictionCache: EOS is never fed");
  }
}

void EvictionCache::store(int block, const float* key, const float* value) {
  Block& b = blocks_[static_cast<size_t>(block)];
  switch (current_.kind) {
    case SlotKind::W:
      b.w_k.insert(b.w_k.end(), key, key + dim_);
      b.w_v.insert(b.w_v.end(), value, value + dim_);
      break;
    case SlotKind::Raw: {
      const size_t s = ring_slot(ring_count_ - 1) * dim_;
      std::copy(key, key + dim_, b.ring_k.begin() + static_cast<std::ptrdiff_t>(s));
      std::copy(value, value + dim_, b.ring_v.begin() + static_cast<std::ptrdiff_t>(s));
      break;
    }
    default:
      b.prompt_k.insert(b.prompt_k.end(), key, key + dim_);
      b.prompt_v.insert(b.prompt_v.end(), value, value + dim_);
      break;
  }
}

void EvictionCache::view(int block, KeyValueView<float>& out) {
  const Block& b = blocks_[static_cast<size_t>(block)];
  auto ring_entry = [&](size_t i) {
    const size_t s = ring_slot(i) * dim_;
    out.keys.push_back(b.ring_k.data() + s);
    out.values.push_back(b.ring_v.data() + s);
  };
  if (current_.kind == SlotKind::W) {
    // The span's own G raw entries only.
    for (size_t i = ring_count_ - static_cast<size_t>(cfg_.span); i < ring_count_; ++i) ring_entry(i);
    return;
  }
  for (size_t i = 0; i < prompt_pos_.size(); ++i) {
    out.keys.push_back(b.prompt_k.data() + i * dim_);
    out.values.push_back(b.prompt_v.data() + i * dim_);
  }
  if (current_.kind != SlotKind::Raw) return;
  size_t wi = 0, ri = 0;
  while (wi < w_pos_.size() || ri < ring_count_) {
    const bool take_w = ri == ring_count_ || (wi < w_pos_.size() && w_pos_[wi] < ring_pos_[ring_slot(ri)]);
    if (take_w) {
      out.keys.push_back(b.w_k.data() + wi * dim_);
      out.values.push_back(b.w_v.data() + wi * dim_);
      ++wi;
    } else {
      ring_entry(ri++);
    }
  }
}

void EvictionCache::end_slot() {
  if (current_.kind == SlotKind::Raw && ring_count_ > static_cast<size_t>(cfg_.ar_window)) {
    ring_start_ = (ring_start_ + 1) % ring_cap_;
    --ring_count_;
  }
}

std::vector<int> EvictionCache::positions() const {
  std::vector<int> out(prompt_pos_);
  size_t wi = 0, ri = 0;
  while (wi < w_pos_.size() || ri < ring_count_) {
    if (ri == ring_count_ || (wi < w_pos_.size() && w_pos_[wi] < ring_pos_[ring_slot(ri)])) {
      out.push_back(w_pos_[wi++]);
    } else {
      out.push_back(ring_pos_[ring_slot(ri++)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decode loop

GenerationResult generate(InferStrategy strategy, const std::vector<int>& text,
                          const std::vector<std::vector<int>>& prompt, const Parameters<float>& params,
                          const CFConfig& cfg, const GenerationParams& gen, const DecodeOptions& opts) {
  gen.validate();
  const Vocabulary& vocab = params.vocab;
  const std::vector<int> empty;
  const std::vector<int>& speech_prompt = prompt.empty() ? empty : prompt[0];
  const SequenceLayout layout = build_layout(static_cast<int>(text.size()), static_cast<int>(speech_prompt.size()),
                                             gen.max_raw_tokens, cfg, LayoutKind::Inference);
  if (static_cast<int>(layout.size()) > params.config.max_positions) {
    throw ValidationError("generation layout of " + std::to_string(layout.size()) +
                          " slots exceeds max_positions " + std::to_string(params.config.max_positions));
  }

  std::unique_ptr<DecodeCache> cache;
  if (strategy == InferStrategy::Vanilla) {
    cache = std::make_unique<VanillaCache>(layout, cfg, params.config.num_blocks, params.config.dim);
  } else {
    cache = std::make_unique<EvictionCache>(cfg, layout.num_prompt(), params.config.num_blocks, params.config.dim);
  }

  using Clock = std::chrono::steady_clock;
  StepOutput<float> step;
  auto feed = [&](const Slot& slot, const SlotInput& input) {
    cache->begin_slot(slot);
    forward_step(params, input, slot.position, *cache, 0, step);
  };

  GenerationResult res;
  const auto t0 = Clock::now();
  int text_i = 0, prompt_i = 0;
  for (int p = 0; p < layout.num_prompt(); ++p) {
    const Slot& slot = layout[static_cast<size_t>(p)];
    int id = vocab.bos();
    if (slot.kind == SlotKind::TextPrompt) id = vocab.text_id(text[static_cast<size_t>(text_i++)]);
    if (slot.kind == SlotKind::SpeechPrompt) id = vocab.speech_id(speech_prompt[static_cast<size_t>(prompt_i++)]);
    feed(slot, ar_slot_input(vocab, id));
    cache->end_slot();
  }
  res.prefill_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

  std::mt19937_64 rng(gen.seed);
  const int banned = gen.stop_at_eos ? -1 : vocab.eos_output();
  const SlotInput w_input = ar_slot_input(vocab, vocab.w());
  for (int t = 0; t < gen.max_raw_tokens; ++t) {
    if (opts.record_logits) res.logits.push_back(step.logits);
    const int tok = sample(step.logits, gen, rng, banned);
    if (tok == vocab.eos_output()) {
      res.hit_eos = true;
      break;
    }
    res.tokens.push_back(tok);
    if (t + 1 == gen.max_raw_tokens) break;

    const auto s0 = Clock::now();
    const size_t raw_pos = static_cast<size_t>(layout.raw_position(t));
    feed(layout[raw_pos], ar_slot_input(vocab, vocab.speech_id(tok)));
    res.cache_length.push_back(cache->length());
    cache->end_slot();
    if (raw_pos + 1 < layout.size() && layout[raw_pos + 1].kind == SlotKind::W) {
      // The W step's prediction is meaningless; keep the raw step's logits.
      StepOutput<float> raw_out = std::move(step);
      feed(layout[raw_pos + 1], w_input);
      cache->end_slot();
      step = std::move(raw_out);
    }
    if (opts.record_timing) res.step_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - s0).count());
  }
  return res;
}

std::vector<std::vector<int>> refine_nar(const std::vector<int>& text,
                                         const std::vector<std::vector<int>>& prompt,
                                         const std::vector<int>& first_layer, const Parameters<float>& params,
                                         const CFConfig& cfg) {
  const int num_layers = params.vocab.num_layers;
  std::vector<std::vector<int>> codes{first_layer};
  if (num_layers == 1) return codes;
  CFConfig layout_cfg = cfg;
  layout_cfg.mode = Mode::Window;
  const int prompt_frames = prompt.empty() ? 0 : static_cast<int>(prompt[0].size());
  const SequenceLayout layout = build_layout(static_cast<int>(text.size()), prompt_frames,
                                             static_cast<int>(first_layer.size()), layout_cfg, LayoutKind::Inference);
  const AttentionMask mask = build_prompt_local_nar(layout, cfg.nar_window);
  for (int l = 2; l <= num_layers; ++l) {
    const auto inputs = nar_slot_inputs(text, prompt, codes, l, layout, params.vocab);
    const Activations<float> acts = forward_nar<float>(inputs, l, layout, mask, params);
    std::vector<int> layer(first_layer.size());
    for (size_t t = 0; t < first_layer.size(); ++t) {
      const float* row = acts.logits.row(static_cast<size_t>(layout.raw_position(static_cast<int>(t))));
      layer[t] = static_cast<int>(std::max_element(row, row + acts.logits.cols()) - row);
    }
    codes.push_back(std::move(layer));
  }
  return codes;
}

}  // namespace cflm
