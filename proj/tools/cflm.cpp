// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

// cflm: train, decode, benchmark and inspect compressed-to-fine speech LMs.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cflm/bench.hpp"
#include "cflm/checkpoint.hpp"
#include "cflm/inference.hpp"
#include "cflm/mask.hpp"
#include "cflm/synth.hpp"
#include "cflm/training.hpp"

namespace {

using namespace cflm;

constexpr int kExitValidation = 2;

struct Globals {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out = "-";
};

// Writes to --out, or stdout for "-".
void emit(const std::string& path, const std::string& text) {
  if (path == "-" || path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write '" + path + "'");
  f << text;
}

std::vector<int> parse_ids(const std::string& s) {
  std::vector<int> out;
  std::string tok;
  std::istringstream in(s);
  while (in >> tok) {
    std::istringstream parts(tok);
    std::string p;
    while (std::getline(parts, p, ',')) {
      if (!p.empty()) out.push_back(parse_number<int>("id", p));
    }
  }
  return out;
}

// Layers separated by ';'.
std::vector<std::vector<int>> parse_layers(const std::string& s) {
  std::vector<std::vector<int>> out;
  if (s.find_first_not_of(" \t") == std::string::npos) return out;
  std::istringstream in(s);
  std::string layer;
  while (std::getline(in, layer, ';')) out.push_back(parse_ids(layer));
  for (const auto& l : out) {
    if (l.size() != out[0].size()) throw ValidationError("speech prompt layers differ in length");
  }
  return out;
}

RunConfig load_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? parse_run_config("") : load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

void require_out(const Globals& g, const char* what) {
  if (g.out == "-" || g.out.empty()) throw ValidationError(std::string(what) + " needs --out <file>");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressed-to-fine speech-token language modeling toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Run config file (key = value)");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--out", g.out, "Output path ('-' for stdout)");

  // train
  auto* train = app.add_subcommand("train", "Train AR (and NAR when L >= 2) decoders");
  std::string corpus_path, mode_str, log_path;
  int steps = 1000, nar_steps = -1, log_every = 10;
  train->add_option("--corpus", corpus_path, "Training corpus (JSONL)")->required();
  train->add_option("--mode", mode_str, "dense, window or cf (overrides config)");
  train->add_option("--steps", steps, "AR optimizer steps");
  train->add_option("--nar-steps", nar_steps, "NAR optimizer steps (default: --steps, 0 skips)");
  train->add_option("--log", log_path, "Training log CSV (default stdout)");
  train->add_option("--log-every", log_every, "Log interval in steps");

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Decode speech tokens for a text");
  std::string ckpt_path, infer_str = "faster", text_str, prompt_str;
  int max_len = 256, top_k = 50;
  double temperature = 0.0;
  gen_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  gen_cmd->add_option("--infer", infer_str, "vanilla or faster");
  gen_cmd->add_option("--text", text_str, "Text symbol ids")->required();
  gen_cmd->add_option("--speech-prompt", prompt_str, "Prompt codewords, layers separated by ';'");
  gen_cmd->add_option("--max-len", max_len, "Maximum raw tokens");
  gen_cmd->add_option("--temperature", temperature, "Sampling temperature (0 = greedy)");
  gen_cmd->add_option("--top-k", top_k, "Top-k cutoff");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Per-step decoding latency");
  std::string grid_str = "20,200,2000", steps_out;
  BenchOptions bopts;
  bench_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  bench_cmd->add_option("--infer", infer_str, "vanilla or faster");
  bench_cmd->add_option("--grid", grid_str, "Raw-step indices to report");
  bench_cmd->add_option("--window", bopts.window, "Steps averaged on each side of a grid point");
  bench_cmd->add_option("--warmup", bopts.warmup, "Leading steps discarded");
  bench_cmd->add_option("--repeats", bopts.repeats, "Decoding repeats (per-step median)");
  bench_cmd->add_option("--text-len", bopts.text_len, "Synthetic text prompt length");
  bench_cmd->add_option("--prompt-len", bopts.prompt_len, "Synthetic speech prompt length");
  bench_cmd->add_option("--steps-out", steps_out, "Per-step CSV");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate one model per axis value");
  std::string eval_corpus_path, spec_path, axis_str, values_str;
  int prompt_len = 0, limit = -1;
  sweep_cmd->add_option("--corpus", corpus_path, "Training corpus")->required();
  sweep_cmd->add_option("--eval-corpus", eval_corpus_path, "Evaluation corpus")->required();
  sweep_cmd->add_option("--spec", spec_path, "Synth spec used to score outputs")->required();
  sweep_cmd->add_option("--axis", axis_str, "g, n_ar or n_nar")->required();
  sweep_cmd->add_option("--values", values_str, "Comma-separated values")->required();
  sweep_cmd->add_option("--steps", steps, "AR steps per cell");
  sweep_cmd->add_option("--nar-steps", nar_steps, "NAR steps per cell");
  sweep_cmd->add_option("--prompt-len", prompt_len, "Speech prompt frames at evaluation");
  sweep_cmd->add_option("--limit", limit, "Evaluate only the first N records");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Symbol error rate and speaker match on a corpus");
  std::string rows_out;
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval_cmd->add_option("--corpus", corpus_path, "Evaluation corpus")->required();
  eval_cmd->add_option("--spec", spec_path, "Synth spec")->required();
  eval_cmd->add_option("--infer", infer_str, "vanilla or faster");
  eval_cmd->add_option("--prompt-len", prompt_len, "Speech prompt frames");
  eval_cmd->add_option("--limit", limit, "Evaluate only the first N records");
  eval_cmd->add_option("--rows", rows_out, "Per-sequence CSV");

  // dump-mask
  auto* mask_cmd = app.add_subcommand("dump-mask", "Print an attention mask grid");
  int text_len = 0, speech_len = 0, gen_len = 0;
  bool nar_mask = false, inference_layout = false;
  mask_cmd->add_option("--text-len", text_len, "Text prompt length");
  mask_cmd->add_option("--prompt-len", speech_len, "Speech prompt length");
  mask_cmd->add_option("--gen-len", gen_len, "Raw generated tokens")->required();
  mask_cmd->add_option("--mode", mode_str, "dense, window or cf (overrides config)");
  mask_cmd->add_flag("--nar", nar_mask, "Bidirectional NAR mask instead of the AR mask");
  mask_cmd->add_flag("--no-eos", inference_layout, "Omit the trailing EOS slot");

  // attn-viz
  auto* attn_cmd = app.add_subcommand("attn-viz", "Text-attention map of one corpus record");
  int index = 0, count = 1;
  std::string score_out;
  attn_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  attn_cmd->add_option("--corpus", corpus_path, "Corpus")->required();
  attn_cmd->add_option("--index", index, "Record index");
  attn_cmd->add_option("--prompt-len", prompt_len, "Speech prompt frames");
  attn_cmd->add_option("--count", count, "Records scored into --score-out");
  attn_cmd->add_option("--score-out", score_out, "Monotonicity CSV for records [index, index+count)");

  // gen-corpus
  auto* corpus_cmd = app.add_subcommand("gen-corpus", "Write a synthetic JSONL corpus");
  int n_seq = 1000, min_len = 4, max_len_sym = 8;
  uint64_t first_index = 0;
  corpus_cmd->add_option("--spec", spec_path, "Synth spec file (defaults when omitted)");
  corpus_cmd->add_option("--n", n_seq, "Number of sequences");
  corpus_cmd->add_option("--min-len", min_len, "Minimum text symbols");
  corpus_cmd->add_option("--max-len", max_len_sym, "Maximum text symbols");
  corpus_cmd->add_option("--first-index", first_index, "Sequence index offset (disjoint splits)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*train) {
      RunConfig cfg = load_config(g);
      if (!mode_str.empty()) {
        cfg.cf = make_cf_config(cfg.cf.span, cfg.cf.ar_window, cfg.cf.nar_window, cfg.cf.frame_rate,
                                parse_mode(mode_str));
      }
      require_out(g, "train");
      if (steps < 0) throw ValidationError("--steps must be >= 0");
      const auto corpus = load_corpus(corpus_path);
      TrainOptions opts;
      opts.steps = steps;
      opts.nar_steps = nar_steps;
      opts.log_every = log_every;
      TrainedModel m = train_model(corpus, cfg, opts);
      save_checkpoint(g.out, Checkpoint{cfg.cf, m.ar, m.nar});
      std::string log = train_log_csv(m.ar_log);
      emit(log_path.empty() ? "-" : log_path, log);
      if (!m.nar_log.empty() && !log_path.empty()) emit(log_path + ".nar.csv", train_log_csv(m.nar_log));
    } else if (*gen_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      GenerationParams gp;
      gp.max_raw_tokens = max_len;
      gp.temperature = temperature;
      gp.top_k = top_k;
      gp.seed = g.seed.value_or(0);
      const auto text = parse_ids(text_str);
      const auto prompt = parse_layers(prompt_str);
      InferStrategy strategy = parse_infer_strategy(infer_str);
      if (ckpt.cf.mode != Mode::CompressedToFine && strategy == InferStrategy::Faster) {
        throw ValidationError("faster inference needs a cf checkpoint; use --infer vanilla");
      }
      const GenerationResult res = generate(strategy, text, prompt, ckpt.ar, ckpt.cf, gp);
      std::vector<std::vector<int>> codes{res.tokens};
      if (ckpt.nar && ckpt.ar.vocab.num_layers >= 2) {
        if (!prompt.empty() && static_cast<int>(prompt.size()) != ckpt.ar.vocab.num_layers) {
          throw ValidationError("NAR refinement needs every codebook layer of the speech prompt (separate with ';')");
        }
        codes = refine_nar(text, prompt, res.tokens, *ckpt.nar, ckpt.cf);
      }
      std::ostringstream out;
      for (const auto& layer : codes) {
        for (size_t i = 0; i < layer.size(); ++i) out << (i ? " " : "") << layer[i];
        out << "\n";
      }
      emit(g.out, out.str());
    } else if (*bench_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      bopts.grid = parse_ids(grid_str);
      bopts.infer = parse_infer_strategy(infer_str);
      if (ckpt.cf.mode != Mode::CompressedToFine) bopts.infer = InferStrategy::Vanilla;
      const BenchReport rep = bench(ckpt.ar, ckpt.cf, bopts);
      emit(g.out, bench_csv(rep));
      if (!steps_out.empty()) emit(steps_out, bench_steps_csv(rep, ckpt.cf));
    } else if (*sweep_cmd) {
      const RunConfig cfg = load_config(g);
      const auto train_corpus = load_corpus(corpus_path);
      const auto eval_corpus = load_corpus(eval_corpus_path);
      const MotifTable table = build_motif_table(load_synth_spec(spec_path));
      TrainOptions topts;
      topts.steps = steps;
      topts.nar_steps = nar_steps;
      EvalOptions eopts;
      eopts.prompt_len = prompt_len;
      eopts.limit = limit;
      const SweepAxis axis = parse_sweep_axis(axis_str);
      const auto rows = sweep(train_corpus, eval_corpus, table, cfg, axis, parse_ids(values_str), topts, eopts);
      emit(g.out, sweep_csv(axis, rows));
    } else if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const auto corpus = load_corpus(corpus_path);
      const MotifTable table = build_motif_table(load_synth_spec(spec_path));
      EvalOptions eopts;
      eopts.prompt_len = prompt_len;
      eopts.limit = limit;
      eopts.infer = parse_infer_strategy(infer_str);
      const EvalReport rep = evaluate(ckpt, corpus, table, eopts);
      std::ostringstream out;
      out << "metric,value\nsequences," << rep.rows.size() << "\nser," << rep.mean_ser << "\n";
      if (rep.mean_speaker_match) out << "speaker_match," << *rep.mean_speaker_match << "\n";
      emit(g.out, out.str());
      if (!rows_out.empty()) emit(rows_out, eval_csv(rep));
    } else if (*mask_cmd) {
      RunConfig cfg = load_config(g);
      if (!mode_str.empty()) {
        cfg.cf = make_cf_config(cfg.cf.span, cfg.cf.ar_window, cfg.cf.nar_window, cfg.cf.frame_rate,
                                parse_mode(mode_str));
      }
      if (text_len < 0 || speech_len < 0 || gen_len < 0) throw ValidationError("lengths must be >= 0");
      AttentionMask mask(0, 0);
      if (nar_mask) {
        CFConfig lc = cfg.cf;
        lc.mode = Mode::Window;
        const auto layout = build_layout(text_len, speech_len, gen_len, lc, LayoutKind::Inference);
        mask = build_prompt_local_nar(layout, cfg.cf.nar_window);
      } else {
        const auto layout = build_layout(text_len, speech_len, gen_len, cfg.cf,
                                         inference_layout ? LayoutKind::Inference : LayoutKind::Training);
        mask = build_ar_mask(layout, cfg.cf);
      }
      emit(g.out, mask.to_text());
    } else if (*attn_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const auto corpus = load_corpus(corpus_path);
      if (index < 0 || static_cast<size_t>(index) >= corpus.size()) throw ValidationError("--index out of range");
      if (count < 1) throw ValidationError("--count must be >= 1");
      const AttnExport a = attn_viz(ckpt.ar, ckpt.cf, make_example(corpus, static_cast<size_t>(index), prompt_len, 0));
      emit(g.out, attn_csv(a));
      if (!score_out.empty()) {
        std::ostringstream out;
        out << "index,steps,monotonicity\n";
        const size_t end = std::min(corpus.size(), static_cast<size_t>(index + count));
        for (size_t i = static_cast<size_t>(index); i < end; ++i) {
          const AttnExport e = attn_viz(ckpt.ar, ckpt.cf, make_example(corpus, i, prompt_len, 0));
          out << i << "," << e.steps << "," << e.monotonicity() << "\n";
        }
        emit(score_out, out.str());
      }
    } else if (*corpus_cmd) {
      SynthSpec spec = spec_path.empty() ? SynthSpec{} : load_synth_spec(spec_path);
      if (g.seed) spec.seed = *g.seed;
      require_out(g, "gen-corpus");
      save_corpus(g.out, gen_corpus(spec, n_seq, {min_len, max_len_sym}, first_index));
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
