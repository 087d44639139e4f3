// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cflm/mask.hpp"

#include <algorithm>
#include <sstream>

namespace cflm {

size_t AttentionMask::row_count(size_t q) const {
  auto r = row(q);
  return static_cast<size_t>(std::count(r.begin(), r.end(), uint8_t{1}));
}

std::vector<std::vector<int>> AttentionMask::key_lists() const {
  std::vector<std::vector<int>> out(n_q_);
  for (size_t q = 0; q < n_q_; ++q) {
    auto r = row(q);
    for (size_t k = 0; k < n_k_; ++k) {
      if (r[k]) out[q].push_back(static_cast<int>(k));
    }
  }
  return out;
}

void AttentionMask::require_nonempty_rows() const {
  for (size_t q = 0; q < n_q_; ++q) {
    if (row_count(q) == 0) {
      throw ValidationError("attention mask row " + std::to_string(q) + " has no visible key");
    }
  }
}

std::string AttentionMask::to_text() const {
  std::string out = std::to_string(n_q_) + " " + std::to_string(n_k_) + "\n";
  out.reserve(out.size() + n_q_ * (n_k_ + 1));
  for (size_t q = 0; q < n_q_; ++q) {
    for (uint8_t b : row(q)) out.push_back(b ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

AttentionMask AttentionMask::from_text(const std::string& text) {
  std::istringstream in(text);
  size_t n_q = 0, n_k = 0;
  if (!(in >> n_q >> n_k)) throw ValidationError("mask text: bad header");
  AttentionMask m(n_q, n_k);
  std::string line;
  std::getline(in, line);
  for (size_t q = 0; q < n_q; ++q) {
    if (!std::getline(in, line) || line.size() != n_k) {
      throw ValidationError("mask text: row " + std::to_string(q) + " malformed");
    }
    for (size_t k = 0; k < n_k; ++k) {
      if (line[k] != '0' && line[k] != '1') throw ValidationError("mask text: bad cell");
      m.set(q, k, line[k] == '1');
    }
  }
  return m;
}

namespace {

void mark(std::span<uint8_t> row, int k) {
  if (k >= 0 && static_cast<size_t>(k) < row.size()) row[static_cast<size_t>(k)] = 1;
}

// Raw-like keys (Raw slots, plus the EOS slot at index gen_len) with raw
// index in [lo, hi].
void mark_raw_range(const SequenceLayout& layout, std::span<uint8_t> row, int lo, int hi) {
  lo = std::max(lo, 0);
  const int last_raw = layout.gen_len() - 1;
  for (int s = lo; s <= std::min(hi, last_raw); ++s) mark(row, layout.raw_position(s));
  if (layout.has_eos() && lo <= layout.gen_len() && layout.gen_len() <= hi) {
    mark(row, layout.eos_position());
  }
}

AttentionMask build_with(const SequenceLayout& layout, MaskKind kind, const CFConfig& cfg) {
  AttentionMask m(layout.size(), layout.size());
  for (size_t q = 0; q < layout.size(); ++q) fill_mask_row(layout, kind, cfg, q, m.row(q));
  return m;
}

void require_no_w(const SequenceLayout& layout, const char* what) {
  if (layout.has_w()) throw ValidationError(std::string(what) + ": layout must not contain W slots");
}

}  // namespace

void fill_mask_row(const SequenceLayout& layout, MaskKind kind, const CFConfig& cfg, size_t q,
                   std::span<uint8_t> row) {
  std::fill(row.begin(), row.end(), uint8_t{0});
  const Slot& qs = layout[q];
  const int n_p = layout.num_prompt();
  const int qpos = static_cast<int>(q);

  if (kind == MaskKind::DenseCausal) {
    for (int k = 0; k <= qpos; ++k) mark(row, k);
    return;
  }

  if (qs.position < n_p) {
    const int last = kind == MaskKind::PromptLocalNar ? n_p - 1 : qpos;
    for (int k = 0; k <= last; ++k) mark(row, k);
    return;
  }

  if (qs.kind == SlotKind::W) {
    // W_j summarizes exactly the G raw slots of span j.
    const int g = layout.span();
    for (int s = qs.span * g; s < (qs.span + 1) * g; ++s) mark(row, layout.raw_position(s));
    return;
  }

  const int t = qs.raw_index;
  for (int k = 0; k < n_p; ++k) mark(row, k);
  switch (kind) {
    case MaskKind::PromptLocalAr:
      mark_raw_range(layout, row, t - cfg.ar_window, t);
      break;
    case MaskKind::CfTraining: {
      const int visible_w = std::min(t / layout.span(), layout.num_w());
      for (int j = 0; j < visible_w; ++j) mark(row, layout.w_position(j));
      mark_raw_range(layout, row, t - cfg.ar_window, t);
      break;
    }
    case MaskKind::PromptLocalNar:
      if (cfg.nar_window) {
        mark_raw_range(layout, row, t - *cfg.nar_window, t + *cfg.nar_window);
      } else {
        mark_raw_range(layout, row, 0, layout.gen_len());
      }
      break;
    case MaskKind::DenseCausal:
      break;
  }
}

AttentionMask build_dense_causal(const SequenceLayout& layout) {
  require_no_w(layout, "build_dense_causal");
  return build_with(layout, MaskKind::DenseCausal, CFConfig{});
}

AttentionMask build_prompt_local_ar(const SequenceLayout& layout, int ar_window) {
  require_no_w(layout, "build_prompt_local_ar");
  if (ar_window <= 0) throw ValidationError("N_AR must be positive");
  CFConfig cfg;
  cfg.ar_window = ar_window;
  return build_with(layout, MaskKind::PromptLocalAr, cfg);
}

AttentionMask build_cf_training(const SequenceLayout& layout, const CFConfig& cfg) {
  if (cfg.ar_window < cfg.span) throw ValidationError("build_cf_training: N_AR must be >= G");
  if (layout.span() != cfg.span) throw ValidationError("build_cf_training: layout/config G mismatch");
  return build_with(layout, MaskKind::CfTraining, cfg);
}

AttentionMask build_prompt_local_nar(const SequenceLayout& layout, std::optional<int> nar_window) {
  require_no_w(layout, "build_prompt_local_nar");
  if (nar_window && *nar_window <= 0) throw ValidationError("N_NAR must be positive");
  CFConfig cfg;
  cfg.nar_window = nar_window;
  return build_with(layout, MaskKind::PromptLocalNar, cfg);
}

AttentionMask build_ar_mask(const SequenceLayout& layout, const CFConfig& cfg) {
  switch (cfg.mode) {
    case Mode::Dense: return build_dense_causal(layout);
    case Mode::Window: return build_prompt_local_ar(layout, cfg.ar_window);
    case Mode::CompressedToFine: return build_cf_training(layout, cfg);
  }
  throw ValidationError("unknown mode");
}

// ---------------------------------------------------------------------------
// Oracle. Deliberately avoids raw_index/span/num_prompt bookkeeping and
// recounts everything from the slot kinds.

namespace {

bool is_prompt_kind(SlotKind k) {
  return k == SlotKind::TextPrompt || k == SlotKind::SpeechPrompt || k == SlotKind::Bos;
}

// Number of Raw slots strictly before position p.
int raws_before(const SequenceLayout& layout, size_t p) {
  int n = 0;
  for (size_t i = 0; i < p; ++i) n += layout[i].kind == SlotKind::Raw ? 1 : 0;
  return n;
}

}  // namespace

bool visibility_oracle(const SequenceLayout& layout, MaskKind kind, const CFConfig& cfg, size_t q,
                       size_t k) {
  const SlotKind qk = layout[q].kind;
  const SlotKind kk = layout[k].kind;

  if (kind == MaskKind::DenseCausal) return k <= q;

  if (is_prompt_kind(qk)) {
    if (kind == MaskKind::PromptLocalNar) return is_prompt_kind(kk);
    return k <= q;
  }

  if (qk == SlotKind::W) {
    // Keys are the raw slots between the previous W (or the prompt) and this W.
    if (kk != SlotKind::Raw || k >= q) return false;
    for (size_t i = k + 1; i < q; ++i) {
      if (layout[i].kind != SlotKind::Raw) return false;
    }
    return true;
  }

  // Raw or EOS query.
  if (is_prompt_kind(kk)) return kind == MaskKind::PromptLocalNar || k < q;

  if (kk == SlotKind::W) return kind == MaskKind::CfTraining && k < q;

  // Raw/EOS key: compare ordinals among raw-like slots.
  const int t = raws_before(layout, q);
  const int s = raws_before(layout, k);
  if (kind == MaskKind::PromptLocalNar) {
    if (!cfg.nar_window) return true;
    const int d = t > s ? t - s : s - t;
    return d <= *cfg.nar_window;
  }
  return s <= t && t - s <= cfg.ar_window;
}

}  // namespace cflm
