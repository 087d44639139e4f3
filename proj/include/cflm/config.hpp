// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <charconv>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cflm {

/// Thrown for any user-facing validation failure (bad config, bad shapes,
/// bad ids). The CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Mode : uint8_t { Dense = 0, Window = 1, CompressedToFine = 2 };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

struct Rational {
  int64_t num = 0;
  int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool is_integer() const { return den == 1; }
  bool operator==(const Rational&) const = default;
};

// Hyperparameters of the compressed-to-fine mechanism. Windows are counted in
// raw speech tokens; W slots never consume window budget.
struct CFConfig {
  int span = 0;            // G: raw tokens summarized by one W
  int ar_window = 0;       // N_AR
  std::optional<int> nar_window;  // N_NAR; absent means dense bidirectional NAR
  int frame_rate = 0;
  Mode mode = Mode::CompressedToFine;
  Rational compression_rate;  // frame_rate / G, reduced

  bool operator==(const CFConfig&) const = default;
};

/// Validates and builds a CFConfig. Rejects non-positive counts and, in cf
/// mode, N_AR < G (raw tokens older than the window would be uncovered).
CFConfig make_cf_config(int span, int ar_window, std::optional<int> nar_window, int frame_rate,
                        Mode mode);

/// Number of long-range spans fully outside the local window when predicting
/// raw token t: max(0, floor((t - N_AR) / G)).
int span_count(int t, const CFConfig& cfg);

// Flat token id space used by AR inputs:
//   [0, text_size)                         text symbols
//   [text_size, text_size + speech_size)   first-layer speech codewords
//   then BOS, EOS, PAD, W.
struct Vocabulary {
  int text_size = 0;
  int speech_size = 0;
  int num_layers = 1;

  enum class Special : int { Bos = 0, Eos = 1, Pad = 2, W = 3 };
  static constexpr int kNumSpecials = 4;

  int text_id(int symbol) const;
  int speech_id(int codeword) const;
  int special_id(Special s) const { return text_size + speech_size + static_cast<int>(s); }
  int bos() const { return special_id(Special::Bos); }
  int eos() const { return special_id(Special::Eos); }
  int pad() const { return special_id(Special::Pad); }
  int w() const { return special_id(Special::W); }
  int size() const { return text_size + speech_size + kNumSpecials; }

  bool is_text(int id) const { return id >= 0 && id < text_size; }
  bool is_speech(int id) const { return id >= text_size && id < text_size + speech_size; }
  bool is_special(int id) const { return id >= text_size + speech_size && id < size(); }

  // AR output head covers the speech codewords plus EOS (last index).
  int ar_output_size() const { return speech_size + 1; }
  int eos_output() const { return speech_size; }

  void validate() const;
  bool operator==(const Vocabulary&) const = default;
};

enum class SlotKind : uint8_t { TextPrompt, SpeechPrompt, Bos, Raw, W, Eos };

char slot_kind_letter(SlotKind kind);

struct Slot {
  int position = 0;
  SlotKind kind = SlotKind::TextPrompt;
  // Index among raw generated tokens. Raw slots carry their own index; the EOS
  // slot carries gen_len (it sits where the next raw token would). -1 otherwise.
  int raw_index = -1;
  int span = -1;   // W slots only
  int layer = 0;   // codebook layer (0 = first layer)
};

enum class LayoutKind : uint8_t { Training, Inference };

// Interleaved position map [text | speech prompt | BOS | raw (+W) | EOS].
class SequenceLayout {
 public:
  SequenceLayout() = default;

  const std::vector<Slot>& slots() const { return slots_; }
  const Slot& operator[](size_t i) const { return slots_[i]; }
  size_t size() const { return slots_.size(); }

  int num_prompt() const { return num_prompt_; }  // N_p, includes BOS
  int text_len() const { return text_len_; }
  int speech_prompt_len() const { return speech_prompt_len_; }
  int gen_len() const { return gen_len_; }
  int num_w() const { return static_cast<int>(w_positions_.size()); }
  int span() const { return span_; }
  Mode mode() const { return mode_; }
  bool has_eos() const { return has_eos_; }
  bool has_w() const { return !w_positions_.empty(); }

  int raw_position(int raw_index) const { return raw_positions_.at(static_cast<size_t>(raw_index)); }
  int w_position(int span_index) const { return w_positions_.at(static_cast<size_t>(span_index)); }
  int bos_position() const { return num_prompt_ - 1; }
  int eos_position() const;

  /// Closed-form position of W_j: N_p + (j + 1) * G + j.
  static int w_position_closed_form(int num_prompt, int span, int j) {
    return num_prompt + (j + 1) * span + j;
  }

  friend SequenceLayout build_layout(int text_len, int speech_prompt_len, int gen_len,
                                     const CFConfig& cfg, LayoutKind kind);

 private:
  std::vector<Slot> slots_;
  std::vector<int> raw_positions_;
  std::vector<int> w_positions_;
  int num_prompt_ = 0;
  int text_len_ = 0;
  int speech_prompt_len_ = 0;
  int gen_len_ = 0;
  int span_ = 0;
  Mode mode_ = Mode::Dense;
  bool has_eos_ = false;
};

/// Builds the slot list. W slots only appear in cf mode, one after each
/// complete span of G raw slots; EOS only in training layouts.
SequenceLayout build_layout(int text_len, int speech_prompt_len, int gen_len, const CFConfig& cfg,
                            LayoutKind kind = LayoutKind::Training);

struct ModelConfig {
  int dim = 64;
  int num_blocks = 2;
  int num_heads = 4;
  int ffn_mult = 2;
  int max_positions = 4096;
  int num_layers = 1;

  int head_dim() const { return dim / num_heads; }
  int ffn_dim() const { return dim * ffn_mult; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Optimizer and data settings read from the same config file.
struct TrainConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  double warmup_fraction = 0.01;
  int batch_size = 8;
  int prompt_len = 0;  // speech prompt frames taken from a same-speaker utterance
};

struct RunConfig {
  CFConfig cf;
  ModelConfig model;
  TrainConfig train;
  Vocabulary vocab;
  uint64_t seed = 0;
};

/// Parses flat "key = value" text ('#' starts a comment). Unknown keys and
/// malformed values raise ValidationError.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);
std::string format_run_config(const RunConfig& cfg);

/// Shared low-level "key = value" reader used by config and synth spec files.
std::map<std::string, std::string> parse_key_values(std::string_view text);

/// Whole-string numeric parse of a config value.
template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ValidationError("invalid value '" + value + "' for key '" + key + "'");
  }
  return out;
}

}  // namespace cflm
