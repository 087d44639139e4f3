// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cflm/transformer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "cflm/kernels.hpp"

namespace cflm {

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
Parameters<T> Parameters<T>::zeros(const ModelConfig& cfg, const Vocabulary& vocab) {
  cfg.validate();
  vocab.validate();
  if (vocab.num_layers != cfg.num_layers) {
    throw ValidationError("vocabulary and model disagree on num_layers");
  }
  const size_t d = static_cast<size_t>(cfg.dim);
  const size_t f = static_cast<size_t>(cfg.ffn_dim());
  const size_t layers = static_cast<size_t>(cfg.num_layers);
  Parameters p;
  p.config = cfg;
  p.vocab = vocab;
  p.text_emb = Tensor<T>::matrix(static_cast<size_t>(vocab.text_size), d);
  for (size_t l = 0; l < layers; ++l) {
    p.speech_emb.push_back(Tensor<T>::matrix(static_cast<size_t>(vocab.speech_size), d));
  }
  p.special_emb = Tensor<T>::matrix(Vocabulary::kNumSpecials, d);
  p.layer_emb = Tensor<T>::matrix(layers, d);
  for (int b = 0; b < cfg.num_blocks; ++b) {
    BlockParams<T> blk;
    blk.attn_norm = Tensor<T>::vector(d);
    blk.wq = Tensor<T>::matrix(d, d);
    blk.wk = Tensor<T>::matrix(d, d);
    blk.wv = Tensor<T>::matrix(d, d);
    blk.wo = Tensor<T>::matrix(d, d);
    blk.ffn_norm = Tensor<T>::vector(d);
    blk.w_gate = Tensor<T>::matrix(f, d);
    blk.w_up = Tensor<T>::matrix(f, d);
    blk.w_down = Tensor<T>::matrix(d, f);
    p.blocks.push_back(std::move(blk));
  }
  p.final_norm = Tensor<T>::vector(d);
  for (size_t l = 0; l < layers; ++l) {
    const size_t out = l == 0 ? static_cast<size_t>(vocab.ar_output_size())
                              : static_cast<size_t>(vocab.speech_size);
    p.heads.push_back(Tensor<T>::matrix(out, d));
  }
  return p;
}

template <typename T>
Parameters<T> Parameters<T>::random(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed) {
  Parameters p = zeros(cfg, vocab);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Tensor<T>& t, double stddev) {
    for (auto& x : t.data) x = static_cast<T>(normal(rng) * stddev);
  };
  const double d = cfg.dim;
  const double f = cfg.ffn_dim();
  const double resid = 1.0 / std::sqrt(2.0 * cfg.num_blocks);
  fill(p.text_emb, 1.0);
  for (auto& e : p.speech_emb) fill(e, 1.0);
  fill(p.special_emb, 1.0);
  fill(p.layer_emb, 1.0);
  for (auto& blk : p.blocks) {
    blk.attn_norm.fill(T(1));
    blk.ffn_norm.fill(T(1));
    fill(blk.wq, 1.0 / std::sqrt(d));
    fill(blk.wk, 1.0 / std::sqrt(d));
    fill(blk.wv, 1.0 / std::sqrt(d));
    fill(blk.wo, resid / std::sqrt(d));
    fill(blk.w_gate, 1.0 / std::sqrt(d));
    fill(blk.w_up, 1.0 / std::sqrt(d));
    fill(blk.w_down, resid / std::sqrt(f));
  }
  p.final_norm.fill(T(1));
  for (auto& h : p.heads) fill(h, 1.0 / std::sqrt(d));
  return p;
}

namespace {

template <typename P, typename Fn>
void visit_impl(P& p, const Fn& fn) {
  fn("text_emb", p.text_emb);
  for (size_t l = 0; l < p.speech_emb.size(); ++l) fn("speech_emb." + std::to_string(l), p.speech_emb[l]);
  fn("special_emb", p.special_emb);
  fn("layer_emb", p.layer_emb);
  for (size_t b = 0; b < p.blocks.size(); ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    auto& blk = p.blocks[b];
    fn(pre + "attn_norm", blk.attn_norm);
    fn(pre + "wq", blk.wq);
    fn(pre + "wk", blk.wk);
    fn(pre + "wv", blk.wv);
    fn(pre + "wo", blk.wo);
    fn(pre + "ffn_norm", blk.ffn_norm);
    fn(pre + "w_gate", blk.w_gate);
    fn(pre + "w_up", blk.w_up);
    fn(pre + "w_down", blk.w_down);
  }
  fn("final_norm", p.final_norm);
  for (size_t l = 0; l < p.heads.size(); ++l) fn("head." + std::to_string(l), p.heads[l]);
}

}  // namespace

template <typename T>
void Parameters<T>::visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  visit_impl(*this, fn);
}

template <typename T>
void Parameters<T>::visit(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
  visit_impl(*this, fn);
}

template <typename T>
size_t Parameters<T>::count() const {
  size_t n = 0;
  visit([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
bool Parameters<T>::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Tensor<T>& t) {
    for (T x : t.data) ok = ok && std::isfinite(static_cast<double>(x));
  });
  return ok;
}

template <typename T>
template <typename U>
Parameters<U> Parameters<T>::cast() const {
  Parameters<U> out = Parameters<U>::zeros(config, vocab);
  std::vector<const Tensor<T>*> src;
  visit([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  size_t i = 0;
  out.visit([&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
  return out;
}

void SlotInput::add(EmbRef r) {
  if (count >= kMaxRefs) throw ValidationError("too many embedding references for one slot");
  refs[static_cast<size_t>(count++)] = r;
}

SlotInput ar_slot_input(const Vocabulary& vocab, int token_id) {
  SlotInput in;
  if (vocab.is_text(token_id)) {
    in.add({EmbTable::Text, 0, token_id});
  } else if (vocab.is_speech(token_id)) {
    in.add({EmbTable::Speech, 0, token_id - vocab.text_size});
  } else if (vocab.is_special(token_id)) {
    in.add({EmbTable::Special, 0, token_id - vocab.text_size - vocab.speech_size});
  } else {
    throw ValidationError("unknown token id " + std::to_string(token_id));
  }
  return in;
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

template <typename T>
const Tensor<T>& table_for(const Parameters<T>& p, const EmbRef& r) {
  switch (r.table) {
    case EmbTable::Text: return p.text_emb;
    case EmbTable::Speech: return p.speech_emb.at(static_cast<size_t>(r.layer));
    case EmbTable::Special: return p.special_emb;
    case EmbTable::LayerIndex: return p.layer_emb;
  }
  throw ValidationError("bad embedding table");
}

template <typename T>
Tensor<T>& table_for(Parameters<T>& p, const EmbRef& r) {
  return const_cast<Tensor<T>&>(table_for(static_cast<const Parameters<T>&>(p), r));
}

template <typename T>
void embed_into(const Parameters<T>& p, const SlotInput& in, T* out) {
  const size_t d = static_cast<size_t>(p.config.dim);
  std::fill(out, out + d, T(0));
  for (const EmbRef& r : in.view()) {
    const Tensor<T>& tab = table_for(p, r);
    if (r.row < 0 || static_cast<size_t>(r.row) >= tab.rows()) {
      throw ValidationError("embedding row out of range");
    }
    kernels::axpy(T(1), tab.row(static_cast<size_t>(r.row)), out, d);
  }
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::matrix(a.cols(), a.rows());
  for (size_t i = 0; i < a.rows(); ++i) {
    for (size_t j = 0; j < a.cols(); ++j) out.data[j * a.rows() + i] = a.data[i * a.cols() + j];
  }
  return out;
}

// y[n x out] = x[n x in] * w^T
template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Tensor<T>& w) {
  const size_t n = x.rows(), in = x.cols(), out = w.rows();
  const Tensor<T> wt = transpose(w);
  Matrix<T> y = Matrix<T>::matrix(n, out);
  kernels::gemm(n, out, in, x.data.data(), in, wt.data.data(), out, y.data.data(), out, false);
  return y;
}

// dx += dy * w, dw += dy^T * x
template <typename T>
void linear_backward(const Matrix<T>& x, const Tensor<T>& w, const Matrix<T>& dy, Matrix<T>* dx,
                     Tensor<T>& dw) {
  const size_t n = x.rows(), in = x.cols(), out = w.rows();
  if (dx != nullptr) {
    kernels::gemm(n, in, out, dy.data.data(), out, w.data.data(), in, dx->data.data(), in, true);
  }
  const Tensor<T> dyt = transpose(dy);
  kernels::gemm(out, in, n, dyt.data.data(), n, x.data.data(), in, dw.data.data(), in, true);
}

template <typename T>
T rms_row(const T* x, const T* gain, T* y, size_t d) {
  double ss = 0.0;
  for (size_t i = 0; i < d; ++i) ss += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  const T r = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(d) + kNormEps));
  for (size_t i = 0; i < d; ++i) y[i] = x[i] * r * gain[i];
  return r;
}

template <typename T>
Matrix<T> rmsnorm(const Matrix<T>& x, const Tensor<T>& gain, std::vector<T>& rms) {
  Matrix<T> y = Matrix<T>::matrix(x.rows(), x.cols());
  rms.resize(x.rows());
  for (size_t i = 0; i < x.rows(); ++i) rms[i] = rms_row(x.row(i), gain.data.data(), y.row(i), x.cols());
  return y;
}

// dx += d(rmsnorm)/dx . dy, dgain += ...
template <typename T>
void rmsnorm_backward(const Matrix<T>& x, const std::vector<T>& rms, const Tensor<T>& gain,
                      const Matrix<T>& dy, Matrix<T>& dx, Tensor<T>& dgain) {
  const size_t d = x.cols();
  for (size_t i = 0; i < x.rows(); ++i) {
    const T* xr = x.row(i);
    const T* dyr = dy.row(i);
    T* dxr = dx.row(i);
    const double r = rms[i];
    double dot = 0.0;
    for (size_t j = 0; j < d; ++j) {
      dot += static_cast<double>(gain.data[j]) * dyr[j] * xr[j];
      dgain.data[j] += static_cast<T>(dyr[j] * xr[j] * r);
    }
    const double coef = r * r * r * dot / static_cast<double>(d);
    for (size_t j = 0; j < d; ++j) {
      dxr[j] += static_cast<T>(r * gain.data[j] * dyr[j] - xr[j] * coef);
    }
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename T>
void check_positions(const ModelConfig& cfg, std::span<const int> positions) {
  for (int p : positions) {
    if (p < 0 || p >= cfg.max_positions) {
      throw ValidationError("position " + std::to_string(p) + " exceeds max_positions " +
                            std::to_string(cfg.max_positions));
    }
  }
}

// Softmax attention of rotated q/k along the mask's key lists.
template <typename T>
Matrix<T> attend(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                 const std::vector<std::vector<int>>& keys, int num_heads, AttentionProbs<T>& probs) {
  const size_t n = q.rows();
  const size_t d = q.cols();
  const size_t hd = d / static_cast<size_t>(num_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  probs.keys = keys;
  probs.row_offset.assign(n + 1, 0);
  for (size_t i = 0; i < n; ++i) probs.row_offset[i + 1] = probs.row_offset[i] + keys[i].size();
  probs.probs.assign(static_cast<size_t>(num_heads), std::vector<T>(probs.row_offset[n], T(0)));

  Matrix<T> out = Matrix<T>::matrix(n, d);
  std::vector<double> scores;
  for (size_t i = 0; i < n; ++i) {
    const auto& ks = keys[i];
    if (ks.empty()) throw ValidationError("attention mask row has no visible key");
    scores.resize(ks.size());
    for (int h = 0; h < num_heads; ++h) {
      const size_t off = static_cast<size_t>(h) * hd;
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t a = 0; a < ks.size(); ++a) {
        scores[a] = static_cast<double>(kernels::dot(q.row(i) + off, k.row(static_cast<size_t>(ks[a])) + off, hd)) * scale;
        mx = std::max(mx, scores[a]);
      }
      double sum = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        sum += s;
      }
      T* prow = probs.probs[static_cast<size_t>(h)].data() + probs.row_offset[i];
      T* orow = out.row(i) + off;
      for (size_t a = 0; a < ks.size(); ++a) {
        prow[a] = static_cast<T>(scores[a] / sum);
        kernels::axpy(prow[a], v.row(static_cast<size_t>(ks[a])) + off, orow, hd);
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
void apply_rope(T* vec, int position, int num_heads, int head_dim, bool inverse) {
  const int half = head_dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(kRopeBase, -2.0 * i / head_dim);
    const double angle = position * freq;
    const double c = std::cos(angle);
    const double s = inverse ? -std::sin(angle) : std::sin(angle);
    for (int h = 0; h < num_heads; ++h) {
      T* pair = vec + h * head_dim + 2 * i;
      const double x0 = pair[0], x1 = pair[1];
      pair[0] = static_cast<T>(x0 * c - x1 * s);
      pair[1] = static_cast<T>(x0 * s + x1 * c);
    }
  }
}

template <typename T>
Matrix<T> masked_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                           const AttentionMask& mask, std::span<const int> positions,
                           int num_heads, AttentionProbs<T>* probs_out) {
  if (mask.n_q() != q.rows() || mask.n_k() != k.rows() || k.rows() != v.rows() ||
      positions.size() != q.rows() || q.rows() != k.rows()) {
    throw ValidationError("masked_attention: shape mismatch");
  }
  if (num_heads <= 0 || q.cols() % static_cast<size_t>(num_heads) != 0) {
    throw ValidationError("masked_attention: dim not divisible by heads");
  }
  mask.require_nonempty_rows();
  const int hd = static_cast<int>(q.cols()) / num_heads;
  Matrix<T> qr = q, kr = k;
  for (size_t i = 0; i < q.rows(); ++i) {
    apply_rope(qr.row(i), positions[i], num_heads, hd);
    apply_rope(kr.row(i), positions[i], num_heads, hd);
  }
  AttentionProbs<T> local;
  AttentionProbs<T>& probs = probs_out ? *probs_out : local;
  return attend(qr, kr, v, mask.key_lists(), num_heads, probs);
}

template <typename T>
Matrix<T> attention_scores(const Matrix<T>& q, const Matrix<T>& k, std::span<const int> positions,
                           int num_heads, int head) {
  const int hd = static_cast<int>(q.cols()) / num_heads;
  Matrix<T> qr = q, kr = k;
  for (size_t i = 0; i < q.rows(); ++i) {
    apply_rope(qr.row(i), positions[i], num_heads, hd);
    apply_rope(kr.row(i), positions[i], num_heads, hd);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix<T> s = Matrix<T>::matrix(q.rows(), k.rows());
  const size_t off = static_cast<size_t>(head * hd);
  for (size_t i = 0; i < q.rows(); ++i) {
    for (size_t j = 0; j < k.rows(); ++j) {
      double acc = 0.0;
      for (int c = 0; c < hd; ++c) {
        acc += static_cast<double>(qr.row(i)[off + static_cast<size_t>(c)]) *
               static_cast<double>(kr.row(j)[off + static_cast<size_t>(c)]);
      }
      s.at(i, j) = static_cast<T>(acc * scale);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Full forward / backward

template <typename T>
Activations<T> forward(const Parameters<T>& params, std::span<const SlotInput> inputs,
                       std::span<const int> positions, const AttentionMask& mask, int head) {
  const ModelConfig& cfg = params.config;
  const size_t n = inputs.size();
  const size_t d = static_cast<size_t>(cfg.dim);
  if (positions.size() != n || mask.n_q() != n || mask.n_k() != n) {
    throw ValidationError("forward: inputs, positions and mask disagree on length");
  }
  if (head < 0 || static_cast<size_t>(head) >= params.heads.size()) {
    throw ValidationError("forward: head index out of range");
  }
  check_positions<T>(cfg, positions);
  const auto keys = mask.key_lists();

  Activations<T> acts;
  acts.inputs.assign(inputs.begin(), inputs.end());
  acts.positions.assign(positions.begin(), positions.end());
  acts.head = head;

  Matrix<T> x = Matrix<T>::matrix(n, d);
  for (size_t i = 0; i < n; ++i) embed_into(params, inputs[i], x.row(i));

  const int hd = cfg.head_dim();
  acts.blocks.resize(params.blocks.size());
  for (size_t b = 0; b < params.blocks.size(); ++b) {
    const BlockParams<T>& blk = params.blocks[b];
    BlockActivations<T>& a = acts.blocks[b];
    a.x_in = x;
    a.h1 = rmsnorm(x, blk.attn_norm, a.rms1);
    a.q = linear(a.h1, blk.wq);
    a.k = linear(a.h1, blk.wk);
    a.v = linear(a.h1, blk.wv);
    for (size_t i = 0; i < n; ++i) {
      apply_rope(a.q.row(i), positions[i], cfg.num_heads, hd);
      apply_rope(a.k.row(i), positions[i], cfg.num_heads, hd);
    }
    a.attn_out = attend(a.q, a.k, a.v, keys, cfg.num_heads, a.probs);
    Matrix<T> proj = linear(a.attn_out, blk.wo);
    a.x_mid = x;
    for (size_t i = 0; i < a.x_mid.size(); ++i) a.x_mid.data[i] += proj.data[i];
    a.h2 = rmsnorm(a.x_mid, blk.ffn_norm, a.rms2);
    a.gate = linear(a.h2, blk.w_gate);
    a.up = linear(a.h2, blk.w_up);
    a.act = Matrix<T>::matrix(n, a.gate.cols());
    for (size_t i = 0; i < a.act.size(); ++i) {
      const double g = a.gate.data[i];
      a.act.data[i] = static_cast<T>(g * sigmoid(g) * a.up.data[i]);
    }
    Matrix<T> down = linear(a.act, blk.w_down);
    x = a.x_mid;
    for (size_t i = 0; i < x.size(); ++i) x.data[i] += down.data[i];
  }
  acts.x_final = x;
  acts.h_final = rmsnorm(x, params.final_norm, acts.rms_final);
  acts.logits = linear(acts.h_final, params.heads[static_cast<size_t>(head)]);
  return acts;
}

template <typename T>
void backward(const Parameters<T>& params, const Activations<T>& acts, const Matrix<T>& dlogits,
              Parameters<T>& grads) {
  const ModelConfig& cfg = params.config;
  const size_t n = acts.inputs.size();
  const size_t d = static_cast<size_t>(cfg.dim);
  const size_t head = static_cast<size_t>(acts.head);
  if (!dlogits.same_shape(acts.logits)) throw ValidationError("backward: dlogits shape mismatch");

  Matrix<T> dh = Matrix<T>::matrix(n, d);
  linear_backward(acts.h_final, params.heads[head], dlogits, &dh, grads.heads[head]);
  Matrix<T> dx = Matrix<T>::matrix(n, d);
  rmsnorm_backward(acts.x_final, acts.rms_final, params.final_norm, dh, dx, grads.final_norm);

  const int hd = cfg.head_dim();
  const size_t uhd = static_cast<size_t>(hd);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  for (size_t bi = params.blocks.size(); bi-- > 0;) {
    const BlockParams<T>& blk = params.blocks[bi];
    BlockParams<T>& gblk = grads.blocks[bi];
    const BlockActivations<T>& a = acts.blocks[bi];

    // x_out = x_mid + act * w_down^T
    Matrix<T> dact = Matrix<T>::matrix(n, a.act.cols());
    linear_backward(a.act, blk.w_down, dx, &dact, gblk.w_down);
    Matrix<T> dgate = Matrix<T>::matrix(n, a.gate.cols());
    Matrix<T> dup = Matrix<T>::matrix(n, a.up.cols());
    for (size_t i = 0; i < dact.size(); ++i) {
      const double g = a.gate.data[i];
      const double s = sigmoid(g);
      const double silu = g * s;
      dup.data[i] = static_cast<T>(dact.data[i] * silu);
      dgate.data[i] = static_cast<T>(dact.data[i] * a.up.data[i] * s * (1.0 + g * (1.0 - s)));
    }
    Matrix<T> dh2 = Matrix<T>::matrix(n, d);
    linear_backward(a.h2, blk.w_gate, dgate, &dh2, gblk.w_gate);
    linear_backward(a.h2, blk.w_up, dup, &dh2, gblk.w_up);
    Matrix<T> dx_mid = dx;
    rmsnorm_backward(a.x_mid, a.rms2, blk.ffn_norm, dh2, dx_mid, gblk.ffn_norm);

    // x_mid = x_in + attn_out * wo^T
    Matrix<T> dattn = Matrix<T>::matrix(n, d);
    linear_backward(a.attn_out, blk.wo, dx_mid, &dattn, gblk.wo);

    Matrix<T> dq = Matrix<T>::matrix(n, d);
    Matrix<T> dk = Matrix<T>::matrix(n, d);
    Matrix<T> dv = Matrix<T>::matrix(n, d);
    std::vector<double> dp;
    for (size_t i = 0; i < n; ++i) {
      const auto& ks = a.probs.keys[i];
      dp.resize(ks.size());
      for (int h = 0; h < cfg.num_heads; ++h) {
        const size_t off = static_cast<size_t>(h) * uhd;
        const T* prow = a.probs.probs[static_cast<size_t>(h)].data() + a.probs.row_offset[i];
        const T* dout = dattn.row(i) + off;
        double pd = 0.0;
        for (size_t j = 0; j < ks.size(); ++j) {
          const size_t kj = static_cast<size_t>(ks[j]);
          dp[j] = static_cast<double>(kernels::dot(dout, a.v.row(kj) + off, uhd));
          pd += static_cast<double>(prow[j]) * dp[j];
          kernels::axpy(prow[j], dout, dv.row(kj) + off, uhd);
        }
        for (size_t j = 0; j < ks.size(); ++j) {
          const size_t kj = static_cast<size_t>(ks[j]);
          const T ds = static_cast<T>(static_cast<double>(prow[j]) * (dp[j] - pd) * scale);
          kernels::axpy(ds, a.k.row(kj) + off, dq.row(i) + off, uhd);
          kernels::axpy(ds, a.q.row(i) + off, dk.row(kj) + off, uhd);
        }
      }
    }
    for (size_t i = 0; i < n; ++i) {
      apply_rope(dq.row(i), acts.positions[i], cfg.num_heads, hd, /*inverse=*/true);
      apply_rope(dk.row(i), acts.positions[i], cfg.num_heads, hd, /*inverse=*/true);
    }
    Matrix<T> dh1 = Matrix<T>::matrix(n, d);
    linear_backward(a.h1, blk.wq, dq, &dh1, gblk.wq);
    linear_backward(a.h1, blk.wk, dk, &dh1, gblk.wk);
    linear_backward(a.h1, blk.wv, dv, &dh1, gblk.wv);
    dx = dx_mid;
    rmsnorm_backward(a.x_in, a.rms1, blk.attn_norm, dh1, dx, gblk.attn_norm);
  }

  for (size_t i = 0; i < n; ++i) {
    for (const EmbRef& r : acts.inputs[i].view()) {
      Tensor<T>& tab = table_for(grads, r);
      kernels::axpy(T(1), dx.row(i), tab.row(static_cast<size_t>(r.row)), d);
    }
  }
}

template <typename T>
Activations<T> forward_ar(std::span<const int> tokens, const SequenceLayout& layout,
                          const AttentionMask& mask, const Parameters<T>& params) {
  if (tokens.size() != layout.size()) throw ValidationError("forward_ar: token/layout length mismatch");
  std::vector<SlotInput> inputs;
  std::vector<int> positions;
  inputs.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    inputs.push_back(ar_slot_input(params.vocab, tokens[i]));
    positions.push_back(layout[i].position);
  }
  return forward(params, inputs, positions, mask, 0);
}

template <typename T>
Activations<T> forward_nar(std::span<const SlotInput> inputs, int layer,
                           const SequenceLayout& layout, const AttentionMask& mask,
                           const Parameters<T>& params) {
  if (layer < 2 || layer > params.config.num_layers) {
    throw ValidationError("forward_nar: layer " + std::to_string(layer) + " out of range 2.." +
                          std::to_string(params.config.num_layers));
  }
  if (inputs.size() != layout.size()) throw ValidationError("forward_nar: input/layout length mismatch");
  std::vector<SlotInput> with_layer(inputs.begin(), inputs.end());
  std::vector<int> positions;
  positions.reserve(inputs.size());
  for (size_t i = 0; i < with_layer.size(); ++i) {
    with_layer[i].add({EmbTable::LayerIndex, 0, layer - 1});
    positions.push_back(layout[i].position);
  }
  return forward(params, with_layer, positions, mask, layer - 1);
}

// ---------------------------------------------------------------------------
// Incremental step

template <typename T>
void forward_step(const Parameters<T>& params, const SlotInput& input, int position,
                  KvSource<T>& source, int head, StepOutput<T>& out) {
  const ModelConfig& cfg = params.config;
  const size_t d = static_cast<size_t>(cfg.dim);
  const size_t f = static_cast<size_t>(cfg.ffn_dim());
  const int hd = cfg.head_dim();
  const size_t uhd = static_cast<size_t>(hd);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  if (position < 0 || position >= cfg.max_positions) {
    throw ValidationError("position " + std::to_string(position) + " exceeds max_positions " +
                          std::to_string(cfg.max_positions));
  }

  std::vector<T> x(d), h(d), q(d), k(d), v(d), attn(d), g(f), u(f);
  embed_into(params, input, x.data());
  KeyValueView<T> view;
  std::vector<double> scores;
  if (out.keep_weights) out.weights.assign(params.blocks.size(), {});

  auto matvec = [](const Tensor<T>& w, const T* in, T* y) {
    for (size_t o = 0; o < w.rows(); ++o) y[o] = kernels::dot(w.row(o), in, w.cols());
  };

  for (size_t b = 0; b < params.blocks.size(); ++b) {
    const BlockParams<T>& blk = params.blocks[b];
    rms_row(x.data(), blk.attn_norm.data.data(), h.data(), d);
    matvec(blk.wq, h.data(), q.data());
    matvec(blk.wk, h.data(), k.data());
    matvec(blk.wv, h.data(), v.data());
    apply_rope(q.data(), position, cfg.num_heads, hd);
    apply_rope(k.data(), position, cfg.num_heads, hd);
    source.store(static_cast<int>(b), k.data(), v.data());
    view.keys.clear();
    view.values.clear();
    view.mask = nullptr;
    source.view(static_cast<int>(b), view);
    const size_t m = view.keys.size();
    if (m == 0) throw ValidationError("decode step has no visible key");
    scores.resize(m);
    std::fill(attn.begin(), attn.end(), T(0));
    if (out.keep_weights) out.weights[b].assign(static_cast<size_t>(cfg.num_heads), std::vector<double>(m, 0.0));

    for (int hh = 0; hh < cfg.num_heads; ++hh) {
      const size_t off = static_cast<size_t>(hh) * uhd;
      for (size_t j = 0; j < m; ++j) {
        scores[j] = static_cast<double>(kernels::dot(q.data() + off, view.keys[j] + off, uhd)) * scale;
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < m; ++j) {
        if (!view.mask || view.mask[j]) mx = std::max(mx, scores[j]);
      }
      if (!std::isfinite(mx)) throw ValidationError("decode step has no visible key");
      double sum = 0.0;
      for (size_t j = 0; j < m; ++j) {
        if (view.mask && !view.mask[j]) continue;
        scores[j] = std::exp(scores[j] - mx);
        sum += scores[j];
      }
      for (size_t j = 0; j < m; ++j) {
        if (view.mask && !view.mask[j]) continue;
        const T p = static_cast<T>(scores[j] / sum);
        kernels::axpy(p, view.values[j] + off, attn.data() + off, uhd);
        if (out.keep_weights) out.weights[b][static_cast<size_t>(hh)][j] = static_cast<double>(p);
      }
    }
    matvec(blk.wo, attn.data(), h.data());
    for (size_t i = 0; i < d; ++i) x[i] += h[i];
    rms_row(x.data(), blk.ffn_norm.data.data(), h.data(), d);
    matvec(blk.w_gate, h.data(), g.data());
    matvec(blk.w_up, h.data(), u.data());
    for (size_t i = 0; i < f; ++i) {
      const double gg = g[i];
      g[i] = static_cast<T>(gg * sigmoid(gg) * u[i]);
    }
    matvec(blk.w_down, g.data(), h.data());
    for (size_t i = 0; i < d; ++i) x[i] += h[i];
  }
  rms_row(x.data(), params.final_norm.data.data(), h.data(), d);
  const Tensor<T>& w = params.heads.at(static_cast<size_t>(head));
  out.logits.resize(w.rows());
  matvec(w, h.data(), out.logits.data());
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define CFLM_INSTANTIATE(T)                                                                      \
  template struct Parameters<T>;                                                                 \
  template void apply_rope<T>(T*, int, int, int, bool);                                          \
  template Matrix<T> masked_attention<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,   \
                                         const AttentionMask&, std::span<const int>, int,        \
                                         AttentionProbs<T>*);                                    \
  template Matrix<T> attention_scores<T>(const Matrix<T>&, const Matrix<T>&,                     \
                                         std::span<const int>, int, int);                        \
  template Activations<T> forward<T>(const Parameters<T>&, std::span<const SlotInput>,           \
                                     std::span<const int>, const AttentionMask&, int);           \
  template void backward<T>(const Parameters<T>&, const Activations<T>&, const Matrix<T>&,       \
                            Parameters<T>&);                                                     \
  template Activations<T> forward_ar<T>(std::span<const int>, const SequenceLayout&,             \
                                        const AttentionMask&, const Parameters<T>&);             \
  template Activations<T> forward_nar<T>(std::span<const SlotInput>, int, const SequenceLayout&, \
                                         const AttentionMask&, const Parameters<T>&);            \
  template void forward_step<T>(const Parameters<T>&, const SlotInput&, int, KvSource<T>&, int,  \
                                StepOutput<T>&);

CFLM_INSTANTIATE(float)
CFLM_INSTANTIATE(double)
#undef CFLM_INSTANTIATE

template Parameters<double> Parameters<float>::cast<double>() const;
template Parameters<float> Parameters<double>::cast<float>() const;
template Parameters<float> Parameters<float>::cast<float>() const;

}  // namespace cflm
