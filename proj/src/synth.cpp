// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cflm/synth.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"

namespace cflm {

void SynthSpec::validate() const {
  if (alphabet < 1) throw ValidationError("synth: alphabet must be >= 1");
  if (motif_min < 2 || motif_max < motif_min) throw ValidationError("synth: need 2 <= motif_min <= motif_max");
  if (repeat_min < 1 || repeat_max < repeat_min) throw ValidationError("synth: need 1 <= repeat_min <= repeat_max");
  if (!(silence_prob >= 0.0 && silence_prob <= 1.0)) throw ValidationError("synth: silence_prob must be in [0, 1]");
  if (silence_min < 1 || silence_max < silence_min) throw ValidationError("synth: need 1 <= silence_min <= silence_max");
  if (num_speakers < 1) throw ValidationError("synth: num_speakers must be >= 1");
  if (num_layers < 1) throw ValidationError("synth: num_layers must be >= 1");
}

double SynthSpec::expected_frames(int n) const {
  if (n <= 0) return 0.0;
  const double run = 0.5 * (silence_min + silence_max);
  return n * mean_motif_len() * mean_repeat() + (n - 1) * silence_prob * run;
}

SynthSpec parse_synth_spec(std::string_view text) {
  SynthSpec s;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters = {
      {"alphabet", [&](auto& k, auto& v) { s.alphabet = parse_number<int>(k, v); }},
      {"motif_min", [&](auto& k, auto& v) { s.motif_min = parse_number<int>(k, v); }},
      {"motif_max", [&](auto& k, auto& v) { s.motif_max = parse_number<int>(k, v); }},
      {"repeat_min", [&](auto& k, auto& v) { s.repeat_min = parse_number<int>(k, v); }},
      {"repeat_max", [&](auto& k, auto& v) { s.repeat_max = parse_number<int>(k, v); }},
      {"silence_prob", [&](auto& k, auto& v) { s.silence_prob = parse_number<double>(k, v); }},
      {"silence_min", [&](auto& k, auto& v) { s.silence_min = parse_number<int>(k, v); }},
      {"silence_max", [&](auto& k, auto& v) { s.silence_max = parse_number<int>(k, v); }},
      {"num_speakers", [&](auto& k, auto& v) { s.num_speakers = parse_number<int>(k, v); }},
      {"num_layers", [&](auto& k, auto& v) { s.num_layers = parse_number<int>(k, v); }},
      {"seed", [&](auto& k, auto& v) { s.seed = parse_number<uint64_t>(k, v); }},
  };
  for (const auto& [key, value] : parse_key_values(text)) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError("unknown synth spec key '" + key + "'");
    it->second(key, value);
  }
  s.validate();
  return s;
}

SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open synth spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synth_spec(ss.str());
}

std::string format_synth_spec(const SynthSpec& s) {
  std::ostringstream out;
  out << "alphabet = " << s.alphabet << "\nmotif_min = " << s.motif_min << "\nmotif_max = " << s.motif_max
      << "\nrepeat_min = " << s.repeat_min << "\nrepeat_max = " << s.repeat_max
      << "\nsilence_prob = " << s.silence_prob << "\nsilence_min = " << s.silence_min
      << "\nsilence_max = " << s.silence_max << "\nnum_speakers = " << s.num_speakers
      << "\nnum_layers = " << s.num_layers << "\nseed = " << s.seed << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Randomness

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void shuffle(std::vector<int>& v, std::mt19937_64& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(rng, 0, i))]);
  }
}

}  // namespace

uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index) {
  return splitmix(splitmix(splitmix(seed) ^ stream) ^ index);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  if (hi < lo) throw ValidationError("uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
  // Reject the top partial bucket so every value is equally likely.
  const uint64_t limit = UINT64_MAX - (UINT64_MAX % span + 1) % span;
  uint64_t x;
  do {
    x = rng();
  } while (x > limit);
  return lo + static_cast<int>(x % span);
}

double uniform_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// ---------------------------------------------------------------------------
// Motif table

int MotifTable::recolor(int speaker, int layer, int codeword) const {
  if (layer < 2) throw ValidationError("recolor: layer must be >= 2");
  const auto& by_layer = perm.at(static_cast<size_t>(speaker));
  return by_layer.at(static_cast<size_t>(layer - 2)).at(static_cast<size_t>(codeword));
}

MotifTable build_motif_table(const SynthSpec& spec) {
  spec.validate();
  MotifTable t;
  t.speech_size = spec.speech_size();
  t.owner_symbol.assign(static_cast<size_t>(t.speech_size), -1);
  t.owner_index.assign(static_cast<size_t>(t.speech_size), -1);

  std::mt19937_64 rng(derive_seed(spec.seed, 0, 0));
  std::vector<int> pool(static_cast<size_t>(t.speech_size - 1));
  for (size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i) + 1;
  shuffle(pool, rng);
  size_t next = 0;
  for (int s = 0; s < spec.alphabet; ++s) {
    const int len = uniform_int(rng, spec.motif_min, spec.motif_max);
    std::vector<int> motif;
    for (int i = 0; i < len; ++i) {
      const int c = pool[next++];
      t.owner_symbol[static_cast<size_t>(c)] = s;
      t.owner_index[static_cast<size_t>(c)] = i;
      motif.push_back(c);
    }
    t.motifs.push_back(std::move(motif));
  }

  for (int spk = 0; spk < spec.num_speakers; ++spk) {
    std::vector<std::vector<int>> layers;
    for (int l = 2; l <= spec.num_layers; ++l) {
      std::mt19937_64 prng(derive_seed(spec.seed, 2, static_cast<uint64_t>(spk * spec.num_layers + l)));
      std::vector<int> p(static_cast<size_t>(t.speech_size));
      for (size_t i = 0; i < p.size(); ++i) p[i] = static_cast<int>(i);
      shuffle(p, prng);
      layers.push_back(std::move(p));
    }
    t.perm.push_back(std::move(layers));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Generation

Utterance synthesize(const SynthSpec& spec, const MotifTable& table, const std::vector<int>& text,
                     int speaker, std::mt19937_64& rng) {
  if (speaker < 0 || speaker >= spec.num_speakers) throw ValidationError("synthesize: speaker out of range");
  Utterance u;
  u.text = text;
  u.speaker = speaker;
  u.speech.assign(static_cast<size_t>(spec.num_layers), {});
  auto& l1 = u.speech[0];
  for (size_t i = 0; i < text.size(); ++i) {
    const int sym = text[i];
    if (sym < 0 || sym >= spec.alphabet) throw ValidationError("synthesize: text symbol out of range");
    if (i > 0 && uniform_unit(rng) < spec.silence_prob) {
      l1.insert(l1.end(), static_cast<size_t>(uniform_int(rng, spec.silence_min, spec.silence_max)), kSilence);
    }
    for (int c : table.motifs[static_cast<size_t>(sym)]) {
      l1.insert(l1.end(), static_cast<size_t>(uniform_int(rng, spec.repeat_min, spec.repeat_max)), c);
    }
  }
  for (int l = 2; l <= spec.num_layers; ++l) {
    auto& out = u.speech[static_cast<size_t>(l - 1)];
    out.reserve(l1.size());
    for (int c : l1) out.push_back(table.recolor(speaker, l, c));
  }
  return u;
}

std::vector<Utterance> gen_corpus(const SynthSpec& spec, int n_sequences, LengthRange len, uint64_t first_index) {
  spec.validate();
  if (n_sequences < 0) throw ValidationError("gen_corpus: negative sequence count");
  if (len.min < 1 || len.max < len.min) throw ValidationError("gen_corpus: need 1 <= min length <= max length");
  const MotifTable table = build_motif_table(spec);
  std::vector<Utterance> out;
  out.reserve(static_cast<size_t>(n_sequences));
  for (int i = 0; i < n_sequences; ++i) {
    std::mt19937_64 rng(derive_seed(spec.seed, 1, first_index + static_cast<uint64_t>(i)));
    std::vector<int> text(static_cast<size_t>(uniform_int(rng, len.min, len.max)));
    for (int& s : text) s = uniform_int(rng, 0, spec.alphabet - 1);
    const int speaker = uniform_int(rng, 0, spec.num_speakers - 1);
    out.push_back(synthesize(spec, table, text, speaker, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

std::vector<int> decode_symbols(const std::vector<int>& first_layer, const MotifTable& table) {
  std::vector<int> out;
  int prev_code = -2, cur_sym = -2, cur_idx = -1;
  for (int c : first_layer) {
    if (c == prev_code) continue;
    prev_code = c;
    if (c == kSilence) continue;
    const bool known = c > 0 && c < table.speech_size && table.owner_symbol[static_cast<size_t>(c)] >= 0;
    if (!known) {
      out.push_back(-1);
      cur_sym = -2;
      continue;
    }
    const int sym = table.owner_symbol[static_cast<size_t>(c)];
    const int idx = table.owner_index[static_cast<size_t>(c)];
    if (sym != cur_sym || idx <= cur_idx) out.push_back(sym);
    cur_sym = sym;
    cur_idx = idx;
  }
  return out;
}

size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1] ? 1u : 0u)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double symbol_error_rate(const std::vector<int>& generated, const std::vector<int>& reference_text,
                         const MotifTable& table) {
  const std::vector<int> hyp = decode_symbols(generated, table);
  if (reference_text.empty()) return hyp.empty() ? 0.0 : 1.0;
  const double r = static_cast<double>(levenshtein(hyp, reference_text)) / static_cast<double>(reference_text.size());
  return std::min(1.0, r);
}

double speaker_match_rate(const std::vector<int>& layer1, const std::vector<int>& layer2, int speaker,
                          const MotifTable& table) {
  if (table.perm.empty() || table.perm[0].empty()) throw ValidationError("speaker_match_rate needs L >= 2");
  if (layer1.size() != layer2.size()) throw ValidationError("speaker_match_rate: layer lengths differ");
  if (layer1.empty()) return 0.0;
  size_t hits = 0;
  for (size_t t = 0; t < layer1.size(); ++t) {
    const int c = layer1[t];
    if (c < 0 || c >= table.speech_size) continue;
    hits += table.recolor(speaker, 2, c) == layer2[t];
  }
  return static_cast<double>(hits) / static_cast<double>(layer1.size());
}

// ---------------------------------------------------------------------------
// JSONL

void write_corpus(std::ostream& out, const std::vector<Utterance>& corpus) {
  for (const auto& u : corpus) {
    nlohmann::json j;
    j["text"] = u.text;
    j["speaker"] = u.speaker;
    j["speech"] = u.speech;
    out << j.dump() << "\n";
  }
}

std::vector<Utterance> read_corpus(std::istream& in) {
  std::vector<Utterance> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Utterance u;
      u.text = j.at("text").get<std::vector<int>>();
      u.speaker = j.at("speaker").get<int>();
      u.speech = j.at("speech").get<std::vector<std::vector<int>>>();
      if (u.speech.empty()) throw ValidationError("no speech layers");
      for (const auto& layer : u.speech) {
        if (layer.size() != u.speech[0].size()) throw ValidationError("speech layers differ in length");
      }
      out.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("corpus line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_corpus(const std::string& path, const std::vector<Utterance>& corpus) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write corpus '" + path + "'");
  write_corpus(out, corpus);
}

std::vector<Utterance> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus '" + path + "'");
  return read_corpus(in);
}

}  // namespace cflm
