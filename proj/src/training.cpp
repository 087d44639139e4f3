// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cflm/training.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cflm/mask.hpp"

namespace cflm {

size_t TargetPlan::active() const {
  size_t n = 0;
  for (uint8_t w : weight) n += w;
  return n;
}

TargetPlan build_targets(const SequenceLayout& layout, std::span<const int> raw_codewords,
                         const Vocabulary& vocab) {
  if (static_cast<int>(raw_codewords.size()) != layout.gen_len()) {
    throw ValidationError("build_targets: got " + std::to_string(raw_codewords.size()) +
                          " raw tokens for a layout with " + std::to_string(layout.gen_len()));
  }
  const int n = layout.gen_len();
  auto next_target = [&](int t) {  // target for the slot whose input is raw token t-1
    if (t >= n) return vocab.eos_output();
    const int c = raw_codewords[static_cast<size_t>(t)];
    if (c < 0 || c >= vocab.speech_size) throw ValidationError("build_targets: codeword out of range");
    return c;
  };
  TargetPlan plan;
  plan.target.assign(layout.size(), kIgnoreTarget);
  plan.weight.assign(layout.size(), 0);
  for (const Slot& s : layout.slots()) {
    const auto i = static_cast<size_t>(s.position);
    if (s.kind == SlotKind::Bos) {
      plan.target[i] = next_target(0);
      plan.weight[i] = 1;
    } else if (s.kind == SlotKind::Raw) {
      plan.target[i] = next_target(s.raw_index + 1);
      plan.weight[i] = 1;
    }
  }
  return plan;
}

TargetPlan build_nar_targets(const SequenceLayout& layout, std::span<const int> layer_codewords) {
  if (static_cast<int>(layer_codewords.size()) != layout.gen_len()) {
    throw ValidationError("build_nar_targets: length mismatch");
  }
  TargetPlan plan;
  plan.target.assign(layout.size(), kIgnoreTarget);
  plan.weight.assign(layout.size(), 0);
  for (const Slot& s : layout.slots()) {
    if (s.kind != SlotKind::Raw) continue;
    const auto i = static_cast<size_t>(s.position);
    plan.target[i] = layer_codewords[static_cast<size_t>(s.raw_index)];
    plan.weight[i] = 1;
  }
  return plan;
}

template <typename T>
LossResult<T> masked_cross_entropy(const Matrix<T>& logits, const TargetPlan& plan) {
  if (plan.target.size() != logits.rows() || plan.weight.size() != logits.rows()) {
    throw ValidationError("masked_cross_entropy: plan/logits row mismatch");
  }
  LossResult<T> out;
  out.count = plan.active();
  if (out.count == 0) throw ValidationError("masked_cross_entropy: all weights are zero");
  out.dlogits = Matrix<T>::matrix(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(out.count);
  const size_t v = logits.cols();
  double total = 0.0;
  for (size_t i = 0; i < logits.rows(); ++i) {
    if (!plan.weight[i]) continue;
    const int tgt = plan.target[i];
    if (tgt < 0 || static_cast<size_t>(tgt) >= v) throw ValidationError("masked_cross_entropy: bad target");
    const T* row = logits.row(i);
    double mx = -INFINITY;
    for (size_t j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (size_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(sum);
    total += lse - static_cast<double>(row[static_cast<size_t>(tgt)]);
    T* drow = out.dlogits.row(i);
    for (size_t j = 0; j < v; ++j) {
      double p = std::exp(static_cast<double>(row[j]) - lse);
      if (static_cast<int>(j) == tgt) p -= 1.0;
      drow[j] = static_cast<T>(p * inv);
    }
  }
  out.loss = total * inv;
  return out;
}

template <typename T>
double ar_example_loss(const Example& ex, const CFConfig& cfg, const Parameters<T>& params,
                       Parameters<T>* grads, double scale, size_t* count) {
  const SequenceLayout layout = build_layout(static_cast<int>(ex.text.size()), ex.prompt_frames(),
                                             ex.frames(), cfg, LayoutKind::Training);
  const auto ids = ar_token_ids(ex, layout, params.vocab);
  const AttentionMask mask = build_ar_mask(layout, cfg);
  const Activations<T> acts = forward_ar<T>(ids, layout, mask, params);
  const TargetPlan plan = build_targets(layout, ex.speech[0], params.vocab);
  LossResult<T> lr = masked_cross_entropy(acts.logits, plan);
  if (count) *count = lr.count;
  if (grads) {
    for (auto& x : lr.dlogits.data) x = static_cast<T>(x * scale);
    backward(params, acts, lr.dlogits, *grads);
  }
  return lr.loss;
}

namespace {

CFConfig nar_layout_config(const CFConfig& cfg) {
  CFConfig c = cfg;
  c.mode = Mode::Window;
  return c;
}

}  // namespace

template <typename T>
double nar_example_loss(const Example& ex, int layer, const CFConfig& cfg, const Parameters<T>& params,
                        Parameters<T>* grads, double scale, size_t* count) {
  const SequenceLayout layout = build_layout(static_cast<int>(ex.text.size()), ex.prompt_frames(),
                                             ex.frames(), nar_layout_config(cfg), LayoutKind::Inference);
  const auto inputs = nar_slot_inputs(ex.text, ex.prompt, ex.speech, layer, layout, params.vocab);
  const AttentionMask mask = build_prompt_local_nar(layout, cfg.nar_window);
  const Activations<T> acts = forward_nar<T>(inputs, layer, layout, mask, params);
  const TargetPlan plan = build_nar_targets(layout, ex.speech[static_cast<size_t>(layer - 1)]);
  LossResult<T> lr = masked_cross_entropy(acts.logits, plan);
  if (count) *count = lr.count;
  if (grads) {
    for (auto& x : lr.dlogits.data) x = static_cast<T>(x * scale);
    backward(params, acts, lr.dlogits, *grads);
  }
  return lr.loss;
}

OptimizerState make_optimizer(const Parameters<float>& params, const TrainConfig& hp,
                              int64_t total_steps) {
  OptimizerState s;
  s.m = Parameters<float>::zeros(params.config, params.vocab);
  s.v = Parameters<float>::zeros(params.config, params.vocab);
  s.total_steps = std::max<int64_t>(1, total_steps);
  s.hp = hp;
  return s;
}

double adamw_update(Parameters<float>& params, Parameters<float>& grads, OptimizerState& opt) {
  std::vector<Tensor<float>*> p, g, m, v;
  std::vector<bool> decay;
  params.visit([&](const std::string& name, Tensor<float>& t) {
    p.push_back(&t);
    decay.push_back(name.find("norm") == std::string::npos);
  });
  grads.visit([&](const std::string&, Tensor<float>& t) { g.push_back(&t); });
  opt.m.visit([&](const std::string&, Tensor<float>& t) { m.push_back(&t); });
  opt.v.visit([&](const std::string&, Tensor<float>& t) { v.push_back(&t); });

  double sq = 0.0;
  for (auto* t : g) {
    for (float x : t->data) sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  const double clip = (opt.hp.clip_norm > 0.0 && norm > opt.hp.clip_norm) ? opt.hp.clip_norm / norm : 1.0;

  const auto warmup = std::max<int64_t>(
      1, static_cast<int64_t>(std::ceil(opt.hp.warmup_fraction * static_cast<double>(opt.total_steps))));
  opt.step += 1;
  const double lr = opt.hp.learning_rate * std::min(1.0, static_cast<double>(opt.step) / static_cast<double>(warmup));
  const double b1 = opt.hp.beta1, b2 = opt.hp.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.step));

  for (size_t i = 0; i < p.size(); ++i) {
    auto& pd = p[i]->data;
    auto& gd = g[i]->data;
    auto& md = m[i]->data;
    auto& vd = v[i]->data;
    const double wd = decay[i] ? opt.hp.weight_decay : 0.0;
    for (size_t j = 0; j < pd.size(); ++j) {
      const double gj = gd[j] * clip;
      md[j] = static_cast<float>(b1 * md[j] + (1.0 - b1) * gj);
      vd[j] = static_cast<float>(b2 * vd[j] + (1.0 - b2) * gj * gj);
      const double mhat = md[j] / c1;
      const double vhat = vd[j] / c2;
      pd[j] = static_cast<float>(pd[j] - lr * (mhat / (std::sqrt(vhat) + opt.hp.epsilon) + wd * pd[j]));
    }
  }
  return norm;
}

namespace {

template <typename LossFn>
double run_step(std::span<const Example> batch, Parameters<float>& params, OptimizerState& opt,
                const LossFn& loss_fn, const char* what) {
  if (batch.empty()) throw ValidationError(std::string(what) + ": empty batch");
  Parameters<float> grads = Parameters<float>::zeros(params.config, params.vocab);
  const double loss = loss_fn(grads);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << what << ": non-finite loss " << loss << " at optimizer step " << opt.step
        << " (lr=" << opt.hp.learning_rate << ", params finite=" << params.all_finite() << ")";
    throw std::runtime_error(msg.str());
  }
  adamw_update(params, grads, opt);
  return loss;
}

}  // namespace

double train_step_ar(std::span<const Example> batch, const CFConfig& cfg, Parameters<float>& params,
                     OptimizerState& opt) {
  return run_step(batch, params, opt, [&](Parameters<float>& grads) {
    double total = 0.0;
    for (const auto& ex : batch) total += ex.frames() + 1;
    double loss = 0.0;
    for (const auto& ex : batch) {
      const double w = (ex.frames() + 1) / total;
      loss += w * ar_example_loss<float>(ex, cfg, params, &grads, w);
    }
    return loss;
  }, "train_step_ar");
}

double train_step_nar(std::span<const Example> batch, const CFConfig& cfg, Parameters<float>& params,
                      OptimizerState& opt, std::mt19937_64& rng) {
  const int num_layers = params.config.num_layers;
  if (num_layers < 2) throw ValidationError("train_step_nar requires at least two codebook layers");
  std::vector<int> layers;
  for (size_t i = 0; i < batch.size(); ++i) {
    layers.push_back(2 + static_cast<int>(rng() % static_cast<uint64_t>(num_layers - 1)));
  }
  return run_step(batch, params, opt, [&](Parameters<float>& grads) {
    double total = 0.0;
    for (const auto& ex : batch) total += ex.frames();
    if (total <= 0) throw ValidationError("train_step_nar: batch has no generated frames");
    double loss = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
      if (batch[i].frames() == 0) continue;
      const double w = batch[i].frames() / total;
      loss += w * nar_example_loss<float>(batch[i], layers[i], cfg, params, &grads, w);
    }
    return loss;
  }, "train_step_nar");
}

namespace {

uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Example make_example(const std::vector<Utterance>& corpus, size_t index, int prompt_len, uint64_t salt) {
  const Utterance& u = corpus.at(index);
  Example ex;
  ex.text = u.text;
  ex.speech = u.speech;
  ex.speaker = u.speaker;
  ex.prompt.assign(u.speech.size(), {});
  if (prompt_len <= 0) return ex;
  std::vector<size_t> same;
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (i != index && corpus[i].speaker == u.speaker) same.push_back(i);
  }
  const Utterance& src = same.empty() ? u : corpus[same[mix(index ^ mix(salt)) % same.size()]];
  const int frames = std::min(prompt_len, src.frames());
  for (size_t l = 0; l < src.speech.size(); ++l) {
    ex.prompt[l].assign(src.speech[l].begin(), src.speech[l].begin() + frames);
  }
  return ex;
}

std::vector<Example> sample_batch(const std::vector<Utterance>& corpus, int batch_size,
                                  int prompt_len, std::mt19937_64& rng) {
  if (corpus.empty()) throw ValidationError("sample_batch: empty corpus");
  std::vector<Example> out;
  out.reserve(static_cast<size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const size_t idx = static_cast<size_t>(rng() % corpus.size());
    out.push_back(make_example(corpus, idx, prompt_len, rng()));
  }
  return out;
}

Vocabulary resolve_vocabulary(const RunConfig& cfg, const std::vector<Utterance>& corpus) {
  Vocabulary v = cfg.vocab;
  v.num_layers = cfg.model.num_layers;
  int max_text = -1, max_speech = -1;
  for (const auto& u : corpus) {
    for (int s : u.text) max_text = std::max(max_text, s);
    if (static_cast<int>(u.speech.size()) < v.num_layers) {
      throw ValidationError("corpus record has fewer codebook layers than num_layers");
    }
    for (const auto& layer : u.speech) {
      for (int c : layer) max_speech = std::max(max_speech, c);
    }
  }
  if (v.text_size <= 0) v.text_size = max_text + 1;
  if (v.speech_size <= 0) v.speech_size = max_speech + 1;
  if (max_text >= v.text_size || max_speech >= v.speech_size) {
    throw ValidationError("corpus ids exceed configured vocabulary sizes");
  }
  v.validate();
  return v;
}

TrainedModel train_model(const std::vector<Utterance>& corpus, const RunConfig& cfg,
                         const TrainOptions& opts) {
  const Vocabulary vocab = resolve_vocabulary(cfg, corpus);
  ModelConfig mc = cfg.model;
  mc.num_layers = vocab.num_layers;
  TrainedModel out{Parameters<float>::random(mc, vocab, cfg.seed), std::nullopt, {}, {}};

  using Clock = std::chrono::steady_clock;
  auto run = [&](Parameters<float>& params, int steps, std::vector<TrainLogRow>& log, bool nar) {
    OptimizerState opt = make_optimizer(params, cfg.train, steps);
    std::mt19937_64 rng(mix(cfg.seed ^ (nar ? 0xa5a5ULL : 0x5a5aULL)));
    const auto start = Clock::now();
    for (int step = 0; step < steps; ++step) {
      const auto batch = sample_batch(corpus, cfg.train.batch_size, cfg.train.prompt_len, rng);
      const double loss = nar ? train_step_nar(batch, cfg.cf, params, opt, rng)
                              : train_step_ar(batch, cfg.cf, params, opt);
      if (opts.log_every > 0 && (step % opts.log_every == 0 || step + 1 == steps)) {
        const double ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
        log.push_back({step, loss, ms});
      }
    }
  };

  run(out.ar, opts.steps, out.ar_log, false);
  const int nar_steps = opts.nar_steps < 0 ? opts.steps : opts.nar_steps;
  if (vocab.num_layers >= 2 && nar_steps > 0) {
    out.nar = Parameters<float>::random(mc, vocab, mix(cfg.seed + 1));
    run(*out.nar, nar_steps, out.nar_log, true);
  }
  return out;
}

std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream out;
  out << "step,loss,wall_ms\n";
  for (const auto& r : rows) out << r.step << "," << r.loss << "," << r.wall_ms << "\n";
  return out.str();
}

#define CFLM_INSTANTIATE(T)                                                                       \
  template LossResult<T> masked_cross_entropy<T>(const Matrix<T>&, const TargetPlan&);            \
  template double ar_example_loss<T>(const Example&, const CFConfig&, const Parameters<T>&,       \
                                     Parameters<T>*, double, size_t*);                            \
  template double nar_example_loss<T>(const Example&, int, const CFConfig&, const Parameters<T>&, \
                                      Parameters<T>*, double, size_t*);
CFLM_INSTANTIATE(float)
CFLM_INSTANTIATE(double)
#undef CFLM_INSTANTIATE

}  // namespace cflm
