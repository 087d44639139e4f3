// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cflm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace cflm {

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Dense: return "dense";
    case Mode::Window: return "window";
    case Mode::CompressedToFine: return "cf";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  if (text == "dense") return Mode::Dense;
  if (text == "window") return Mode::Window;
  if (text == "cf") return Mode::CompressedToFine;
  throw ValidationError("unknown mode '" + std::string(text) + "' (expected dense, window or cf)");
}

CFConfig make_cf_config(int span, int ar_window, std::optional<int> nar_window, int frame_rate,
                        Mode mode) {
  if (span <= 0) throw ValidationError("G must be positive");
  if (ar_window <= 0) throw ValidationError("N_AR must be positive");
  if (frame_rate <= 0) throw ValidationError("frame_rate must be positive");
  if (nar_window && *nar_window <= 0) throw ValidationError("N_NAR must be positive when set");
  if (mode == Mode::CompressedToFine && ar_window < span) {
    throw ValidationError("cf mode requires N_AR >= G (got N_AR=" + std::to_string(ar_window) +
                          ", G=" + std::to_string(span) + ")");
  }
  CFConfig cfg;
  cfg.span = span;
  cfg.ar_window = ar_window;
  cfg.nar_window = nar_window;
  cfg.frame_rate = frame_rate;
  cfg.mode = mode;
  const int64_t g = std::gcd<int64_t, int64_t>(frame_rate, span);
  cfg.compression_rate = Rational{frame_rate / g, span / g};
  return cfg;
}

int span_count(int t, const CFConfig& cfg) {
  if (t < 0) throw ValidationError("span_count: t must be non-negative");
  const int past = t - cfg.ar_window;
  return past <= 0 ? 0 : past / cfg.span;
}

int Vocabulary::text_id(int symbol) const {
  if (symbol < 0 || symbol >= text_size) {
    throw ValidationError("text symbol " + std::to_string(symbol) + " out of range");
  }
  return symbol;
}

int Vocabulary::speech_id(int codeword) const {
  if (codeword < 0 || codeword >= speech_size) {
    throw ValidationError("speech codeword " + std::to_string(codeword) + " out of range");
  }
  return text_size + codeword;
}

void Vocabulary::validate() const {
  if (text_size <= 0) throw ValidationError("text_size must be positive");
  if (speech_size <= 0) throw ValidationError("speech_size must be positive");
  if (num_layers < 1) throw ValidationError("num_layers must be >= 1");
}

char slot_kind_letter(SlotKind kind) {
  switch (kind) {
    case SlotKind::TextPrompt: return 'T';
    case SlotKind::SpeechPrompt: return 'P';
    case SlotKind::Bos: return 'B';
    case SlotKind::Raw: return 'C';
    case SlotKind::W: return 'W';
    case SlotKind::Eos: return 'E';
  }
  return '?';
}

int SequenceLayout::eos_position() const {
  if (!has_eos_) throw ValidationError("layout has no EOS slot");
  return static_cast<int>(slots_.size()) - 1;
}

SequenceLayout build_layout(int text_len, int speech_prompt_len, int gen_len, const CFConfig& cfg,
                            LayoutKind kind) {
  if (text_len < 0 || speech_prompt_len < 0 || gen_len < 0) {
    throw ValidationError("layout lengths must be non-negative");
  }
  if (cfg.span <= 0 || cfg.ar_window <= 0) throw ValidationError("invalid CFConfig");

  SequenceLayout out;
  out.text_len_ = text_len;
  out.speech_prompt_len_ = speech_prompt_len;
  out.gen_len_ = gen_len;
  out.span_ = cfg.span;
  out.mode_ = cfg.mode;
  out.has_eos_ = kind == LayoutKind::Training;
  out.num_prompt_ = text_len + speech_prompt_len + 1;

  const bool with_w = cfg.mode == Mode::CompressedToFine;
  const int num_w = with_w ? gen_len / cfg.span : 0;
  out.slots_.reserve(static_cast<size_t>(out.num_prompt_ + gen_len + num_w + 1));
  out.raw_positions_.reserve(static_cast<size_t>(gen_len));
  out.w_positions_.reserve(static_cast<size_t>(num_w));

  auto push = [&](SlotKind k, int raw_index, int span) {
    Slot s;
    s.position = static_cast<int>(out.slots_.size());
    s.kind = k;
    s.raw_index = raw_index;
    s.span = span;
    out.slots_.push_back(s);
    return s.position;
  };

  for (int i = 0; i < text_len; ++i) push(SlotKind::TextPrompt, -1, -1);
  for (int i = 0; i < speech_prompt_len; ++i) push(SlotKind::SpeechPrompt, -1, -1);
  push(SlotKind::Bos, -1, -1);
  for (int t = 0; t < gen_len; ++t) {
    out.raw_positions_.push_back(push(SlotKind::Raw, t, -1));
    if (with_w && (t + 1) % cfg.span == 0) {
      out.w_positions_.push_back(push(SlotKind::W, -1, (t + 1) / cfg.span - 1));
    }
  }
  if (out.has_eos_) push(SlotKind::Eos, gen_len, -1);
  return out;
}

void ModelConfig::validate() const {
  if (dim <= 0 || num_blocks <= 0 || num_heads <= 0 || ffn_mult <= 0 || max_positions <= 0) {
    throw ValidationError("model dimensions must be positive");
  }
  if (dim % num_heads != 0) throw ValidationError("dim must be divisible by num_heads");
  if (head_dim() % 2 != 0) throw ValidationError("head dim must be even for rotary encoding");
  if (num_layers < 1) throw ValidationError("num_layers must be >= 1");
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ValidationError("line " + std::to_string(lineno) + ": empty key or value");
    }
    if (!out.emplace(key, value).second) {
      throw ValidationError("duplicate key '" + key + "'");
    }
  }
  return out;
}

RunConfig parse_run_config(std::string_view text) {
  const auto kv = parse_key_values(text);
  int g = 10, n_ar = 50, frame_rate = 50;
  std::optional<int> n_nar;
  Mode mode = Mode::CompressedToFine;
  RunConfig cfg;

  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters = {
      {"g", [&](auto& k, auto& v) { g = parse_number<int>(k, v); }},
      {"n_ar", [&](auto& k, auto& v) { n_ar = parse_number<int>(k, v); }},
      {"n_nar",
       [&](auto& k, auto& v) {
         if (v == "none" || v == "-") n_nar.reset();
         else n_nar = parse_number<int>(k, v);
       }},
      {"frame_rate", [&](auto& k, auto& v) { frame_rate = parse_number<int>(k, v); }},
      {"mode", [&](auto&, auto& v) { mode = parse_mode(v); }},
      {"dim", [&](auto& k, auto& v) { cfg.model.dim = parse_number<int>(k, v); }},
      {"num_blocks", [&](auto& k, auto& v) { cfg.model.num_blocks = parse_number<int>(k, v); }},
      {"num_heads", [&](auto& k, auto& v) { cfg.model.num_heads = parse_number<int>(k, v); }},
      {"ffn_mult", [&](auto& k, auto& v) { cfg.model.ffn_mult = parse_number<int>(k, v); }},
      {"num_layers", [&](auto& k, auto& v) { cfg.model.num_layers = parse_number<int>(k, v); }},
      {"max_positions",
       [&](auto& k, auto& v) { cfg.model.max_positions = parse_number<int>(k, v); }},
      {"seed", [&](auto& k, auto& v) { cfg.seed = parse_number<uint64_t>(k, v); }},
      {"text_size", [&](auto& k, auto& v) { cfg.vocab.text_size = parse_number<int>(k, v); }},
      {"speech_size", [&](auto& k, auto& v) { cfg.vocab.speech_size = parse_number<int>(k, v); }},
      {"lr", [&](auto& k, auto& v) { cfg.train.learning_rate = parse_number<double>(k, v); }},
      {"beta1", [&](auto& k, auto& v) { cfg.train.beta1 = parse_number<double>(k, v); }},
      {"beta2", [&](auto& k, auto& v) { cfg.train.beta2 = parse_number<double>(k, v); }},
      {"weight_decay",
       [&](auto& k, auto& v) { cfg.train.weight_decay = parse_number<double>(k, v); }},
      {"clip_norm", [&](auto& k, auto& v) { cfg.train.clip_norm = parse_number<double>(k, v); }},
      {"warmup", [&](auto& k, auto& v) { cfg.train.warmup_fraction = parse_number<double>(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { cfg.train.batch_size = parse_number<int>(k, v); }},
      {"prompt_len", [&](auto& k, auto& v) { cfg.train.prompt_len = parse_number<int>(k, v); }},
  };

  for (const auto& [key, value] : kv) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError("unknown config key '" + key + "'");
    it->second(key, value);
  }
  cfg.cf = make_cf_config(g, n_ar, n_nar, frame_rate, mode);
  cfg.vocab.num_layers = cfg.model.num_layers;
  cfg.model.validate();
  if (cfg.train.batch_size <= 0) throw ValidationError("batch_size must be positive");
  if (cfg.train.prompt_len < 0) throw ValidationError("prompt_len must be non-negative");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "g = " << cfg.cf.span << "\n"
      << "n_ar = " << cfg.cf.ar_window << "\n"
      << "n_nar = " << (cfg.cf.nar_window ? std::to_string(*cfg.cf.nar_window) : "none") << "\n"
      << "frame_rate = " << cfg.cf.frame_rate << "\n"
      << "mode = " << to_string(cfg.cf.mode) << "\n"
      << "dim = " << cfg.model.dim << "\n"
      << "num_blocks = " << cfg.model.num_blocks << "\n"
      << "num_heads = " << cfg.model.num_heads << "\n"
      << "ffn_mult = " << cfg.model.ffn_mult << "\n"
      << "num_layers = " << cfg.model.num_layers << "\n"
      << "max_positions = " << cfg.model.max_positions << "\n"
      << "seed = " << cfg.seed << "\n";
  if (cfg.vocab.text_size > 0) out << "text_size = " << cfg.vocab.text_size << "\n";
  if (cfg.vocab.speech_size > 0) out << "speech_size = " << cfg.vocab.speech_size << "\n";
  out << "lr = " << cfg.train.learning_rate << "\n"
      << "batch_size = " << cfg.train.batch_size << "\n"
      << "prompt_len = " << cfg.train.prompt_len << "\n";
  return out.str();
}

}  // namespace cflm
