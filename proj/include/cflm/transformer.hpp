// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cflm/config.hpp"
#include "cflm/mask.hpp"
#include "cflm/tensor.hpp"

namespace cflm {

inline constexpr double kRopeBase = 10000.0;
inline constexpr double kNormEps = 1e-5;

template <typename T>
struct BlockParams {
  Tensor<T> attn_norm;  // [dim]
  Tensor<T> wq, wk, wv, wo;  // [dim x dim], y = x W^T
  Tensor<T> ffn_norm;   // [dim]
  Tensor<T> w_gate, w_up;  // [ffn x dim]
  Tensor<T> w_down;     // [dim x ffn]
};

// Decoder weights. One instance serves either the AR decoder (head 0, with
// EOS) or the NAR decoder (heads 1..L-1 plus the layer-index embedding).
template <typename T>
struct Parameters {
  ModelConfig config;
  Vocabulary vocab;

  Tensor<T> text_emb;                 // [text_size x dim]
  std::vector<Tensor<T>> speech_emb;  // L x [speech_size x dim]
  Tensor<T> special_emb;              // [4 x dim]: BOS, EOS, PAD, W
  Tensor<T> layer_emb;                // [L x dim]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> final_norm;               // [dim]
  std::vector<Tensor<T>> heads;       // head 0: [speech_size + 1 x dim], others [speech_size x dim]

  static Parameters zeros(const ModelConfig& cfg, const Vocabulary& vocab);
  /// Scaled-normal init from a seed; norm gains start at 1.
  static Parameters random(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed);

  /// Visits every tensor with a stable dotted name ("blocks.0.wq", ...).
  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;

  size_t count() const;
  bool all_finite() const;

  template <typename U>
  Parameters<U> cast() const;
};

enum class EmbTable : uint8_t { Text, Speech, Special, LayerIndex };

struct EmbRef {
  EmbTable table = EmbTable::Text;
  int layer = 0;
  int row = 0;
};

// Input vector of one slot: the sum of up to kMaxRefs embedding rows.
struct SlotInput {
  static constexpr int kMaxRefs = 12;
  std::array<EmbRef, kMaxRefs> refs{};
  int count = 0;

  void add(EmbRef r);
  std::span<const EmbRef> view() const { return {refs.data(), static_cast<size_t>(count)}; }
};

/// Maps a flat AR token id (see Vocabulary) to its embedding row.
SlotInput ar_slot_input(const Vocabulary& vocab, int token_id);

// Softmax weights of one attention call, stored sparsely along the mask's
// visible-key lists: probs[h][row_offset[q] + i] is the weight of key
// keys[q][i] for head h.
template <typename T>
struct AttentionProbs {
  std::vector<std::vector<int>> keys;
  std::vector<size_t> row_offset;
  std::vector<std::vector<T>> probs;
};

/// Multi-head attention under a mask. q, k, v are [n x dim] projections
/// before rotary encoding; rotary encoding with the given absolute positions is
/// applied here. Invisible keys receive exactly zero weight. Rejects masks with
/// an empty row.
template <typename T>
Matrix<T> masked_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                           const AttentionMask& mask, std::span<const int> positions,
                           int num_heads, AttentionProbs<T>* probs_out = nullptr);

/// Pre-softmax scores q_i . k_j / sqrt(head_dim) of one head after rotary
/// encoding; used to check the relative-position property.
template <typename T>
Matrix<T> attention_scores(const Matrix<T>& q, const Matrix<T>& k, std::span<const int> positions,
                           int num_heads, int head);

template <typename T>
void apply_rope(T* vec, int position, int num_heads, int head_dim, bool inverse = false);

template <typename T>
struct BlockActivations {
  Matrix<T> x_in, h1, q, k, v, attn_out, x_mid, h2, gate, up, act;
  std::vector<T> rms1, rms2;
  AttentionProbs<T> probs;
};

template <typename T>
struct Activations {
  std::vector<SlotInput> inputs;
  std::vector<int> positions;
  int head = 0;
  std::vector<BlockActivations<T>> blocks;
  Matrix<T> x_final, h_final, logits;
  std::vector<T> rms_final;
};

/// Full-sequence forward pass. Returns activations including logits
/// [n x head_size]. Rejects positions beyond max_positions and empty mask rows.
template <typename T>
Activations<T> forward(const Parameters<T>& params, std::span<const SlotInput> inputs,
                       std::span<const int> positions, const AttentionMask& mask, int head);

/// Accumulates parameter gradients of sum(dlogits * logits) into grads.
template <typename T>
void backward(const Parameters<T>& params, const Activations<T>& acts, const Matrix<T>& dlogits,
              Parameters<T>& grads);

/// AR forward over a flat-id token sequence laid out by `layout`.
template <typename T>
Activations<T> forward_ar(std::span<const int> tokens, const SequenceLayout& layout,
                          const AttentionMask& mask, const Parameters<T>& params);

/// NAR forward for codebook layer `layer` (1-based, 2..L). `inputs` carries the
/// summed lower-layer embeddings per slot; the layer-index embedding is added
/// here. Returns logits over layer-`layer` codewords.
template <typename T>
Activations<T> forward_nar(std::span<const SlotInput> inputs, int layer,
                           const SequenceLayout& layout, const AttentionMask& mask,
                           const Parameters<T>& params);

// --- Incremental decoding --------------------------------------------------

// Ordered key/value rows an incremental query attends over. When `mask` is
// set, mask[i] gates entry i (mask-only decoding); otherwise all are visible.
template <typename T>
struct KeyValueView {
  std::vector<const T*> keys;
  std::vector<const T*> values;
  const uint8_t* mask = nullptr;
};

// Storage side of incremental decoding, implemented by the KV caches.
template <typename T>
class KvSource {
 public:
  virtual ~KvSource() = default;
  /// Stores the current slot's post-rotary key and value for `block`.
  virtual void store(int block, const T* key, const T* value) = 0;
  /// Fills the entries visible to the current query in position order.
  virtual void view(int block, KeyValueView<T>& out) = 0;
};

template <typename T>
struct StepOutput {
  std::vector<T> logits;
  // Optional per-block, per-head weights over the view entries.
  bool keep_weights = false;
  std::vector<std::vector<std::vector<double>>> weights;
};

/// One decoding step for a single slot at `position`.
template <typename T>
void forward_step(const Parameters<T>& params, const SlotInput& input, int position,
                  KvSource<T>& source, int head, StepOutput<T>& out);

}  // namespace cflm
