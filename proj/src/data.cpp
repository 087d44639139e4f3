// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cflm/data.hpp"

namespace cflm {

std::vector<int> ar_token_ids(const Example& ex, const SequenceLayout& layout, const Vocabulary& vocab) {
  if (layout.text_len() != static_cast<int>(ex.text.size()) ||
      layout.speech_prompt_len() != ex.prompt_frames()) {
    throw ValidationError("ar_token_ids: layout does not match example prompt");
  }
  if (layout.gen_len() > ex.frames()) throw ValidationError("ar_token_ids: layout longer than example");
  std::vector<int> ids;
  ids.reserve(layout.size());
  int text_i = 0, prompt_i = 0;
  for (const Slot& s : layout.slots()) {
    switch (s.kind) {
      case SlotKind::TextPrompt: ids.push_back(vocab.text_id(ex.text[static_cast<size_t>(text_i++)])); break;
      case SlotKind::SpeechPrompt:
        ids.push_back(vocab.speech_id(ex.prompt[0][static_cast<size_t>(prompt_i++)]));
        break;
      case SlotKind::Bos: ids.push_back(vocab.bos()); break;
      case SlotKind::Raw: ids.push_back(vocab.speech_id(ex.speech[0][static_cast<size_t>(s.raw_index)])); break;
      case SlotKind::W: ids.push_back(vocab.w()); break;
      case SlotKind::Eos: ids.push_back(vocab.eos()); break;
    }
  }
  return ids;
}

std::vector<SlotInput> nar_slot_inputs(const std::vector<int>& text,
                                       const std::vector<std::vector<int>>& prompt,
                                       const std::vector<std::vector<int>>& codes, int layer,
                                       const SequenceLayout& layout, const Vocabulary& vocab) {
  if (layer < 2 || layer > vocab.num_layers) throw ValidationError("nar_slot_inputs: layer out of range");
  if (static_cast<int>(codes.size()) < layer - 1) throw ValidationError("nar_slot_inputs: missing lower layers");
  const int prompt_frames = prompt.empty() ? 0 : static_cast<int>(prompt[0].size());
  if (prompt_frames > 0 && static_cast<int>(prompt.size()) != vocab.num_layers) {
    throw ValidationError("nar_slot_inputs: prompt must carry all codebook layers");
  }
  auto check = [&](int c) {
    if (c < 0 || c >= vocab.speech_size) throw ValidationError("codeword out of range");
    return c;
  };
  std::vector<SlotInput> out;
  out.reserve(layout.size());
  int text_i = 0, prompt_i = 0;
  for (const Slot& s : layout.slots()) {
    SlotInput in;
    switch (s.kind) {
      case SlotKind::TextPrompt:
        in.add({EmbTable::Text, 0, vocab.text_id(text[static_cast<size_t>(text_i++)])});
        break;
      case SlotKind::SpeechPrompt:
        for (int l = 0; l < vocab.num_layers; ++l) {
          in.add({EmbTable::Speech, l, check(prompt[static_cast<size_t>(l)][static_cast<size_t>(prompt_i)])});
        }
        ++prompt_i;
        break;
      case SlotKind::Bos: in.add({EmbTable::Special, 0, static_cast<int>(Vocabulary::Special::Bos)}); break;
      case SlotKind::Raw:
        for (int l = 0; l < layer - 1; ++l) {
          in.add({EmbTable::Speech, l, check(codes[static_cast<size_t>(l)][static_cast<size_t>(s.raw_index)])});
        }
        break;
      case SlotKind::Eos: in.add({EmbTable::Special, 0, static_cast<int>(Vocabulary::Special::Eos)}); break;
      case SlotKind::W: throw ValidationError("NAR layouts never contain W");
    }
    out.push_back(in);
  }
  return out;
}

}  // namespace cflm
