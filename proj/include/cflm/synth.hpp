// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cflm/data.hpp"

namespace cflm {

// Synthetic text-to-codeword generator settings. Codeword 0 is silence; each
// text symbol owns a motif of distinct codewords, and every motif token is
// held for a random number of frames.
struct SynthSpec {
  int alphabet = 8;
  int motif_min = 2, motif_max = 3;
  int repeat_min = 2, repeat_max = 4;
  double silence_prob = 0.2;
  int silence_min = 1, silence_max = 3;
  int num_speakers = 4;
  int num_layers = 2;
  uint64_t seed = 1;

  void validate() const;
  /// Codewords per layer: silence plus room for the longest motifs.
  int speech_size() const { return 1 + alphabet * motif_max; }
  double mean_motif_len() const { return 0.5 * (motif_min + motif_max); }
  double mean_repeat() const { return 0.5 * (repeat_min + repeat_max); }
  /// Expected frame count for a text of n symbols.
  double expected_frames(int n) const;
  bool operator==(const SynthSpec&) const = default;
};

/// Keys: alphabet, motif_min, motif_max, repeat_min, repeat_max, silence_prob,
/// silence_min, silence_max, num_speakers, num_layers, seed.
SynthSpec parse_synth_spec(std::string_view text);
SynthSpec load_synth_spec(const std::string& path);
std::string format_synth_spec(const SynthSpec& spec);

inline constexpr int kSilence = 0;

// Lookup tables derived from a spec: symbol motifs, the inverse map, and the
// speaker recolorings used for layers 2..L.
struct MotifTable {
  int speech_size = 0;
  std::vector<std::vector<int>> motifs;           // [symbol] -> codewords
  std::vector<int> owner_symbol, owner_index;     // [codeword], -1 when unused
  std::vector<std::vector<std::vector<int>>> perm;  // [speaker][layer-2][codeword]

  /// Layer `layer` (2..L) codeword for a first-layer codeword.
  int recolor(int speaker, int layer, int codeword) const;
};

MotifTable build_motif_table(const SynthSpec& spec);

/// Seed for stream `stream`, item `index`; each sequence draws from its own.
uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index);

/// Unbiased integer in [lo, hi].
int uniform_int(std::mt19937_64& rng, int lo, int hi);
double uniform_unit(std::mt19937_64& rng);

struct LengthRange {
  int min = 4, max = 8;  // text symbols per sequence
};

/// Sequences are generated independently from derived seeds, so the output is
/// byte-identical for the same spec. `first_index` offsets the derivation to
/// draw disjoint splits from one spec.
std::vector<Utterance> gen_corpus(const SynthSpec& spec, int n_sequences, LengthRange len,
                                  uint64_t first_index = 0);

/// Speech for a given text and speaker (sequence randomness from `rng`).
Utterance synthesize(const SynthSpec& spec, const MotifTable& table, const std::vector<int>& text,
                     int speaker, std::mt19937_64& rng);

/// Collapses repeats, drops silence, and splits into groups at a symbol
/// change or motif-index restart. Unknown codewords decode to -1.
std::vector<int> decode_symbols(const std::vector<int>& first_layer, const MotifTable& table);

size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b);

/// Edit distance of the decoded symbols to the reference over the reference
/// length, capped at 1. An empty reference scores 0 for empty output, else 1.
double symbol_error_rate(const std::vector<int>& generated, const std::vector<int>& reference_text,
                         const MotifTable& table);

/// Fraction of frames whose layer-2 codeword equals the speaker's recoloring
/// of the layer-1 codeword (0 for an empty sequence). Needs L >= 2.
double speaker_match_rate(const std::vector<int>& layer1, const std::vector<int>& layer2, int speaker,
                          const MotifTable& table);

// One JSON object per line: {"text":[...],"speaker":k,"speech":[[...],...]}.
void write_corpus(std::ostream& out, const std::vector<Utterance>& corpus);
std::vector<Utterance> read_corpus(std::istream& in);
void save_corpus(const std::string& path, const std::vector<Utterance>& corpus);
std::vector<Utterance> load_corpus(const std::string& path);

}  // namespace cflm
