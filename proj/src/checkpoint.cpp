// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cflm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace cflm {
namespace {

constexpr char kMagic[4] = {'C', 'F', 'L', 'M'};
constexpr uint32_t kMaxNameLen = 4096;
constexpr uint32_t kMaxRank = 8;

void put_u32(std::ostream& out, uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("checkpoint: truncated file");
  return uint32_t{b[0]} | (uint32_t{b[1]} << 8) | (uint32_t{b[2]} << 16) | (uint32_t{b[3]} << 24);
}

uint32_t to_u32(int v, const char* what) {
  if (v < 0) throw ValidationError(std::string("checkpoint: negative ") + what);
  return static_cast<uint32_t>(v);
}

int to_int(uint32_t v, const char* what) {
  if (v > static_cast<uint32_t>(INT32_MAX)) throw ValidationError(std::string("checkpoint: bad ") + what);
  return static_cast<int>(v);
}

struct Blob {
  std::vector<size_t> shape;
  std::vector<float> data;
};

void write_params(std::ostream& out, const Parameters<float>& p, const std::string& prefix) {
  p.visit([&](const std::string& name, const Tensor<float>& t) {
    const std::string full = prefix + name;
    put_u32(out, static_cast<uint32_t>(full.size()));
    out.write(full.data(), static_cast<std::streamsize>(full.size()));
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (size_t d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    for (float x : t.data) put_u32(out, std::bit_cast<uint32_t>(x));
  });
}

size_t count_blobs(const Parameters<float>& p) {
  size_t n = 0;
  p.visit([&](const std::string&, const Tensor<float>&) { ++n; });
  return n;
}

Parameters<float> fill_params(const ModelConfig& mc, const Vocabulary& vocab, std::map<std::string, Blob>& blobs,
                              const std::string& prefix) {
  Parameters<float> p = Parameters<float>::zeros(mc, vocab);
  p.visit([&](const std::string& name, Tensor<float>& t) {
    auto it = blobs.find(prefix + name);
    if (it == blobs.end()) throw ValidationError("checkpoint: missing tensor '" + prefix + name + "'");
    if (it->second.shape != t.shape) throw ValidationError("checkpoint: shape mismatch for '" + prefix + name + "'");
    t.data = std::move(it->second.data);
    blobs.erase(it);
  });
  if (!p.all_finite()) throw ValidationError("checkpoint: non-finite parameter values");
  return p;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const ModelConfig& mc = ckpt.ar.config;
  const Vocabulary& v = ckpt.ar.vocab;
  if (ckpt.nar && (!(ckpt.nar->config == mc) || !(ckpt.nar->vocab == v))) {
    throw ValidationError("checkpoint: AR and NAR parameter shapes differ");
  }
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (int x : {mc.dim, mc.num_blocks, mc.num_heads, mc.ffn_mult, mc.max_positions, mc.num_layers, v.text_size,
                v.speech_size}) {
    put_u32(out, to_u32(x, "model field"));
  }
  put_u32(out, to_u32(ckpt.cf.span, "G"));
  put_u32(out, to_u32(ckpt.cf.ar_window, "N_AR"));
  put_u32(out, ckpt.cf.nar_window ? to_u32(*ckpt.cf.nar_window, "N_NAR") : 0u);
  put_u32(out, to_u32(ckpt.cf.frame_rate, "frame_rate"));
  put_u32(out, static_cast<uint32_t>(ckpt.cf.mode));
  put_u32(out, static_cast<uint32_t>(count_blobs(ckpt.ar) + (ckpt.nar ? count_blobs(*ckpt.nar) : 0)));
  write_params(out, ckpt.ar, "ar.");
  if (ckpt.nar) write_params(out, *ckpt.nar, "nar.");
  if (!out) throw ValidationError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("checkpoint: bad magic");
  const uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig mc;
  mc.dim = to_int(get_u32(in), "dim");
  mc.num_blocks = to_int(get_u32(in), "num_blocks");
  mc.num_heads = to_int(get_u32(in), "num_heads");
  mc.ffn_mult = to_int(get_u32(in), "ffn_mult");
  mc.max_positions = to_int(get_u32(in), "max_positions");
  mc.num_layers = to_int(get_u32(in), "num_layers");
  mc.validate();
  Vocabulary vocab;
  vocab.text_size = to_int(get_u32(in), "text_size");
  vocab.speech_size = to_int(get_u32(in), "speech_size");
  vocab.num_layers = mc.num_layers;
  vocab.validate();

  const int g = to_int(get_u32(in), "G");
  const int n_ar = to_int(get_u32(in), "N_AR");
  const uint32_t n_nar = get_u32(in);
  const int frame_rate = to_int(get_u32(in), "frame_rate");
  const uint32_t mode = get_u32(in);
  if (mode > static_cast<uint32_t>(Mode::CompressedToFine)) throw ValidationError("checkpoint: bad mode");
  Checkpoint ckpt;
  ckpt.cf = make_cf_config(g, n_ar, n_nar ? std::optional<int>(to_int(n_nar, "N_NAR")) : std::nullopt, frame_rate,
                           static_cast<Mode>(mode));

  const uint32_t count = get_u32(in);
  std::map<std::string, Blob> blobs;
  bool has_nar = false;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = get_u32(in);
    if (len == 0 || len > kMaxNameLen) throw ValidationError("checkpoint: bad tensor name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ValidationError("checkpoint: truncated file");
    const uint32_t rank = get_u32(in);
    if (rank == 0 || rank > kMaxRank) throw ValidationError("checkpoint: bad rank for '" + name + "'");
    Blob b;
    size_t n = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      b.shape.push_back(get_u32(in));
      n *= b.shape.back();
    }
    if (n > (size_t{1} << 30)) throw ValidationError("checkpoint: tensor '" + name + "' too large");
    b.data.resize(n);
    for (float& x : b.data) x = std::bit_cast<float>(get_u32(in));
    if (name.rfind("nar.", 0) == 0) has_nar = true;
    if (!blobs.emplace(name, std::move(b)).second) throw ValidationError("checkpoint: duplicate tensor '" + name + "'");
  }
  ckpt.ar = fill_params(mc, vocab, blobs, "ar.");
  if (has_nar) ckpt.nar = fill_params(mc, vocab, blobs, "nar.");
  if (!blobs.empty()) throw ValidationError("checkpoint: unexpected tensor '" + blobs.begin()->first + "'");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace cflm
