// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "cflm/config.hpp"
#include "cflm/transformer.hpp"

namespace cflm {

inline constexpr uint32_t kCheckpointVersion = 1;

// Binary layout (all integers u32 little-endian):
//   "CFLM", version,
//   dim, num_blocks, num_heads, ffn_mult, max_positions, num_layers, text_size, speech_size,
//   G, N_AR, N_NAR (0 = absent), frame_rate, mode,
//   blob count, then per blob: name length, name bytes, rank, dims, f32 data.
// AR blobs are prefixed "ar.", NAR blobs "nar.".
struct Checkpoint {
  CFConfig cf;
  Parameters<float> ar;
  std::optional<Parameters<float>> nar;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
/// Throws ValidationError on bad magic, version, shapes, or missing/extra blobs.
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cflm
