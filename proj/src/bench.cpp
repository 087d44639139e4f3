// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cflm/bench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cflm/mask.hpp"

namespace cflm {
namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double idx = q * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(idx));
  const size_t hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (idx - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

InferStrategy effective_strategy(InferStrategy s, const CFConfig& cfg) {
  return cfg.mode == Mode::CompressedToFine ? s : InferStrategy::Vanilla;
}

}  // namespace

// ---------------------------------------------------------------------------
// bench

BenchReport bench(const Parameters<float>& params, const CFConfig& cfg, const BenchOptions& opts) {
  if (opts.grid.empty()) throw ValidationError("bench: empty grid");
  if (opts.repeats < 1 || opts.window < 0 || opts.warmup < 0) throw ValidationError("bench: bad options");
  if (opts.infer == InferStrategy::Faster && cfg.mode != Mode::CompressedToFine) {
    throw ValidationError("bench: faster inference needs cf mode");
  }
  for (int t : opts.grid) {
    if (t - opts.window < opts.warmup) {
      throw ValidationError("bench: grid point " + std::to_string(t) + " falls inside the warmup");
    }
  }
  const Vocabulary& vocab = params.vocab;
  std::vector<int> text(static_cast<size_t>(opts.text_len));
  for (size_t i = 0; i < text.size(); ++i) text[i] = static_cast<int>((i * 7 + 3) % static_cast<size_t>(vocab.text_size));
  std::vector<std::vector<int>> prompt(1, std::vector<int>(static_cast<size_t>(opts.prompt_len)));
  for (size_t i = 0; i < prompt[0].size(); ++i) {
    prompt[0][i] = static_cast<int>((i * 5 + 1) % static_cast<size_t>(vocab.speech_size));
  }

  GenerationParams gen;
  gen.max_raw_tokens = *std::max_element(opts.grid.begin(), opts.grid.end()) + opts.window + 2;
  gen.stop_at_eos = false;
  DecodeOptions dopts;
  dopts.record_timing = true;

  BenchReport rep;
  rep.mode = cfg.mode;
  rep.infer = opts.infer;
  std::vector<std::vector<double>> times;
  for (int r = 0; r < opts.repeats; ++r) {
    GenerationResult res = generate(opts.infer, text, prompt, params, cfg, gen, dopts);
    if (r == 0) {
      rep.tokens = res.tokens;
      rep.cache_length = res.cache_length;
    } else if (res.tokens != rep.tokens) {
      throw std::runtime_error("bench: token stream differs between repeats");
    }
    times.push_back(std::move(res.step_ms));
  }
  const size_t n = times[0].size();
  rep.step_ms.resize(n);
  std::vector<double> col(times.size());
  for (size_t t = 0; t < n; ++t) {
    for (size_t r = 0; r < times.size(); ++r) col[r] = times[r][t];
    rep.step_ms[t] = percentile(col, 0.5);
  }
  rep.num_prompt = static_cast<int>(text.size() + prompt[0].size()) + 1;

  for (int t : opts.grid) {
    std::vector<double> w(rep.step_ms.begin() + (t - opts.window), rep.step_ms.begin() + (t + opts.window + 1));
    BenchRow row;
    row.t = t;
    row.mean_ms = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    row.p50_ms = percentile(w, 0.5);
    row.p90_ms = percentile(w, 0.9);
    row.cache_length = rep.cache_length[static_cast<size_t>(t)];
    rep.rows.push_back(row);
  }
  const double timed_ms =
      std::accumulate(rep.step_ms.begin() + opts.warmup, rep.step_ms.end(), 0.0);
  rep.tokens_per_s = timed_ms > 0 ? 1000.0 * static_cast<double>(n - static_cast<size_t>(opts.warmup)) / timed_ms : 0.0;
  const double all_ms = std::accumulate(rep.step_ms.begin(), rep.step_ms.end(), 0.0);
  rep.rtf = (all_ms / 1000.0) / (static_cast<double>(n) / cfg.frame_rate);
  return rep;
}

std::string bench_csv(const BenchReport& r) {
  std::ostringstream out;
  out << "mode,infer,t,step_ms_mean,step_ms_p50,step_ms_p90,cache_len,tokens_per_s,rtf\n";
  for (const auto& row : r.rows) {
    out << to_string(r.mode) << "," << to_string(r.infer) << "," << row.t << "," << row.mean_ms << ","
        << row.p50_ms << "," << row.p90_ms << "," << row.cache_length << "," << r.tokens_per_s << "," << r.rtf
        << "\n";
  }
  return out.str();
}

std::string bench_steps_csv(const BenchReport& r, const CFConfig& cfg) {
  std::ostringstream out;
  out << "t,step_ms,cache_len,bound\n";
  for (size_t t = 0; t < r.step_ms.size(); ++t) {
    out << t << "," << r.step_ms[t] << "," << r.cache_length[t] << ",";
    if (r.infer == InferStrategy::Faster) {
      out << r.num_prompt + static_cast<int>(t) / cfg.span + cfg.ar_window + 1;
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// evaluate

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<Utterance>& corpus, const MotifTable& table,
                    const EvalOptions& opts) {
  if (corpus.empty()) throw ValidationError("evaluate: empty corpus");
  if (table.speech_size > ckpt.ar.vocab.speech_size) {
    throw ValidationError("evaluate: synth spec uses more codewords than the checkpoint vocabulary");
  }
  const size_t n = opts.limit < 0 ? corpus.size() : std::min(corpus.size(), static_cast<size_t>(opts.limit));
  const InferStrategy strategy = effective_strategy(opts.infer, ckpt.cf);
  const bool nar = ckpt.nar.has_value() && ckpt.ar.vocab.num_layers >= 2;
  EvalReport rep;
  double ser_sum = 0.0, spk_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Example ex = make_example(corpus, i, opts.prompt_len, opts.prompt_salt);
    GenerationParams gen;
    gen.max_raw_tokens = static_cast<int>(opts.max_len_factor * ex.frames()) + 16;
    const GenerationResult res = generate(strategy, ex.text, ex.prompt, ckpt.ar, ckpt.cf, gen);
    EvalRow row;
    row.index = i;
    row.reference_frames = ex.frames();
    row.generated_frames = static_cast<int>(res.tokens.size());
    row.ser = symbol_error_rate(res.tokens, ex.text, table);
    if (nar) {
      const auto codes = refine_nar(ex.text, ex.prompt, res.tokens, *ckpt.nar, ckpt.cf);
      row.speaker_match = speaker_match_rate(codes[0], codes[1], ex.speaker, table);
      spk_sum += *row.speaker_match;
    }
    ser_sum += row.ser;
    rep.rows.push_back(row);
  }
  rep.mean_ser = ser_sum / static_cast<double>(n);
  if (nar) rep.mean_speaker_match = spk_sum / static_cast<double>(n);
  return rep;
}

std::string eval_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "index,reference_frames,generated_frames,ser,speaker_match\n";
  for (const auto& row : r.rows) {
    out << row.index << "," << row.reference_frames << "," << row.generated_frames << "," << row.ser << ",";
    if (row.speaker_match) out << *row.speaker_match;
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// sweep

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "g" || s == "G") return SweepAxis::G;
  if (s == "n_ar") return SweepAxis::NAr;
  if (s == "n_nar") return SweepAxis::NNar;
  throw ValidationError("unknown sweep axis '" + s + "' (expected g, n_ar or n_nar)");
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::G: return "g";
    case SweepAxis::NAr: return "n_ar";
    case SweepAxis::NNar: return "n_nar";
  }
  return "?";
}

std::vector<SweepRow> sweep(const std::vector<Utterance>& train_corpus, const std::vector<Utterance>& eval_corpus,
                            const MotifTable& table, const RunConfig& base, SweepAxis axis,
                            const std::vector<int>& values, const TrainOptions& train, const EvalOptions& eval) {
  if (values.empty()) throw ValidationError("sweep: no values");
  std::vector<RunConfig> cells;
  for (int v : values) {
    RunConfig cfg = base;
    int g = cfg.cf.span, n_ar = cfg.cf.ar_window;
    std::optional<int> n_nar = cfg.cf.nar_window;
    if (axis == SweepAxis::G) g = v;
    if (axis == SweepAxis::NAr) n_ar = v;
    if (axis == SweepAxis::NNar) n_nar = v;
    cfg.cf = make_cf_config(g, n_ar, n_nar, cfg.cf.frame_rate, cfg.cf.mode);
    cells.push_back(cfg);
  }
  std::vector<SweepRow> rows;
  for (size_t i = 0; i < cells.size(); ++i) {
    TrainedModel m = train_model(train_corpus, cells[i], train);
    Checkpoint ckpt{cells[i].cf, std::move(m.ar), std::move(m.nar)};
    const EvalReport rep = evaluate(ckpt, eval_corpus, table, eval);
    SweepRow row;
    row.value = values[i];
    row.ser = rep.mean_ser;
    row.speaker_match = rep.mean_speaker_match;
    row.final_loss = m.ar_log.empty() ? 0.0 : m.ar_log.back().loss;
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "axis,value,ser,speaker_match,final_loss\n";
  for (const auto& r : rows) {
    out << to_string(axis) << "," << r.value << "," << r.ser << ",";
    if (r.speaker_match) out << *r.speaker_match;
    out << "," << r.final_loss << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// attn_viz

double AttnExport::monotonicity() const {
  if (steps < 2 || text_len == 0) return 1.0;
  int prev = -1, ok = 0;
  for (int s = 0; s < steps; ++s) {
    int best = 0;
    for (int c = 1; c < text_len; ++c) {
      if (at(s, c) > at(s, best)) best = c;
    }
    if (s > 0 && best >= prev) ++ok;
    prev = best;
  }
  return static_cast<double>(ok) / static_cast<double>(steps - 1);
}

AttnExport attn_viz(const Parameters<float>& params, const CFConfig& cfg, const Example& ex) {
  const SequenceLayout layout = build_layout(static_cast<int>(ex.text.size()), ex.prompt_frames(), ex.frames(),
                                             cfg, LayoutKind::Training);
  const auto ids = ar_token_ids(ex, layout, params.vocab);
  const AttentionMask mask = build_ar_mask(layout, cfg);
  const Activations<float> acts = forward_ar<float>(ids, layout, mask, params);

  AttnExport out;
  out.steps = ex.frames();
  out.text_len = static_cast<int>(ex.text.size());
  out.weights.assign(static_cast<size_t>(out.steps * out.text_len), 0.0);
  const double norm = 1.0 / static_cast<double>(acts.blocks.size() * static_cast<size_t>(params.config.num_heads));
  for (int s = 0; s < out.steps; ++s) {
    const size_t q = static_cast<size_t>(s == 0 ? layout.bos_position() : layout.raw_position(s - 1));
    for (const auto& blk : acts.blocks) {
      const auto& keys = blk.probs.keys[q];
      for (const auto& head : blk.probs.probs) {
        const float* p = head.data() + blk.probs.row_offset[q];
        for (size_t i = 0; i < keys.size(); ++i) {
          if (keys[i] < out.text_len) {
            out.weights[static_cast<size_t>(s * out.text_len + keys[i])] += norm * p[i];
          }
        }
      }
    }
  }
  return out;
}

std::string attn_csv(const AttnExport& a) {
  std::ostringstream out;
  out << "step";
  for (int c = 0; c < a.text_len; ++c) out << ",text_" << c;
  out << "\n";
  for (int s = 0; s < a.steps; ++s) {
    out << s;
    for (int c = 0; c < a.text_len; ++c) out << "," << a.at(s, c);
    out << "\n";
  }
  return out.str();
}

}  // namespace cflm
