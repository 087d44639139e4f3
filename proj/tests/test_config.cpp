// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <string>

#include "cflm/config.hpp"

namespace cflm {
namespace {

std::string kinds(const SequenceLayout& layout) {
  std::string s;
  for (const Slot& slot : layout.slots()) s += slot_kind_letter(slot.kind);
  return s;
}

TEST(CFConfig, CompressionRateOfCodecSettings) {
  const auto a = make_cf_config(10, 50, std::nullopt, 50, Mode::CompressedToFine);
  EXPECT_EQ(a.compression_rate, (Rational{5, 1}));
  const auto b = make_cf_config(15, 75, 75, 75, Mode::CompressedToFine);
  EXPECT_EQ(b.compression_rate, (Rational{5, 1}));
  const auto c = make_cf_config(16, 80, 80, 80, Mode::CompressedToFine);
  EXPECT_EQ(c.compression_rate, (Rational{5, 1}));
  EXPECT_TRUE(c.compression_rate.is_integer());
}

TEST(CFConfig, NonIntegralRateStaysRational) {
  const auto c = make_cf_config(4, 8, std::nullopt, 50, Mode::CompressedToFine);
  EXPECT_EQ(c.compression_rate, (Rational{25, 2}));
  EXPECT_DOUBLE_EQ(c.compression_rate.value(), 12.5);
}

TEST(CFConfig, RejectsUncoveredWindow) {
  EXPECT_THROW(make_cf_config(10, 5, std::nullopt, 50, Mode::CompressedToFine), ValidationError);
  // Window and dense modes never insert W, so the coverage rule does not apply.
  EXPECT_NO_THROW(make_cf_config(10, 5, std::nullopt, 50, Mode::Window));
}

TEST(CFConfig, RejectsNonPositive) {
  EXPECT_THROW(make_cf_config(0, 5, std::nullopt, 50, Mode::Window), ValidationError);
  EXPECT_THROW(make_cf_config(2, 0, std::nullopt, 50, Mode::Window), ValidationError);
  EXPECT_THROW(make_cf_config(2, 4, 0, 50, Mode::Window), ValidationError);
  EXPECT_THROW(make_cf_config(2, 4, std::nullopt, -1, Mode::Window), ValidationError);
}

TEST(Layout, InterleavesWAfterCompleteSpans) {
  const auto cfg = make_cf_config(2, 2, std::nullopt, 50, Mode::CompressedToFine);
  const auto layout = build_layout(2, 0, 5, cfg, LayoutKind::Training);
  EXPECT_EQ(kinds(layout), "TTBCCWCCWCE");
  EXPECT_EQ(layout.num_prompt(), 3);
  EXPECT_EQ(layout.num_w(), 2);
  EXPECT_EQ(layout[5].span, 0);
  EXPECT_EQ(layout[8].span, 1);
  EXPECT_EQ(layout[10].raw_index, 5);  // EOS sits at raw index gen_len
}

TEST(Layout, DenseHasNoW) {
  const auto cfg = make_cf_config(2, 2, std::nullopt, 50, Mode::Dense);
  const auto layout = build_layout(2, 0, 5, cfg, LayoutKind::Training);
  EXPECT_EQ(layout.size(), 9u);
  EXPECT_EQ(kinds(layout), "TTBCCCCCE");
}

TEST(Layout, EmptyGeneration) {
  const auto cfg = make_cf_config(3, 3, std::nullopt, 50, Mode::CompressedToFine);
  const auto layout = build_layout(2, 3, 0, cfg, LayoutKind::Training);
  EXPECT_EQ(kinds(layout), "TTPPPBE");
  EXPECT_EQ(kinds(build_layout(2, 3, 0, cfg, LayoutKind::Inference)), "TTPPPB");
}

TEST(Layout, TrailingPartialSpanHasNoW) {
  const auto cfg = make_cf_config(3, 3, std::nullopt, 50, Mode::CompressedToFine);
  EXPECT_EQ(kinds(build_layout(0, 0, 8, cfg, LayoutKind::Inference)), "BCCCWCCCWCC");
}

TEST(Layout, LengthAndWPositionsMatchClosedForm) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int g = 1 + static_cast<int>(rng() % 9);
    const auto cfg = make_cf_config(g, g + static_cast<int>(rng() % 5), std::nullopt, 50, Mode::CompressedToFine);
    const int text = static_cast<int>(rng() % 6), prompt = static_cast<int>(rng() % 6);
    const int gen = static_cast<int>(rng() % 60);
    const bool training = rng() % 2;
    const auto layout = build_layout(text, prompt, gen, cfg, training ? LayoutKind::Training : LayoutKind::Inference);
    ASSERT_EQ(static_cast<int>(layout.size()), text + prompt + 1 + gen + gen / g + (training ? 1 : 0));
    ASSERT_EQ(layout.num_w(), gen / g);
    int j = 0, raw = 0;
    for (const Slot& s : layout.slots()) {
      if (s.kind == SlotKind::W) {
        ASSERT_EQ(s.position, SequenceLayout::w_position_closed_form(layout.num_prompt(), g, j));
        ASSERT_EQ(s.span, j);
        ++j;
      }
      if (s.kind == SlotKind::Raw) {
        ASSERT_EQ(s.raw_index, raw);
        ++raw;
      }
    }
    // Stripping W, BOS and EOS recovers the raw count.
    ASSERT_EQ(raw, gen);
  }
}

TEST(SpanCount, Examples) {
  const auto a = make_cf_config(10, 50, std::nullopt, 50, Mode::CompressedToFine);
  EXPECT_EQ(span_count(60, a), 1);
  EXPECT_EQ(span_count(50, a), 0);
  EXPECT_EQ(span_count(0, a), 0);
  const auto b = make_cf_config(15, 75, std::nullopt, 75, Mode::CompressedToFine);
  EXPECT_EQ(span_count(275, b), 13);
}

// Counts spans [jG, (j+1)G) lying entirely before raw index t - N_AR.
int brute_force_spans(int t, int g, int n_ar) {
  int k = 0;
  for (int j = 0; (j + 1) * g <= t; ++j) {
    if ((j + 1) * g - 1 < t - n_ar) ++k;
  }
  return k;
}

TEST(SpanCount, MatchesBruteForceAndStepsByOne) {
  for (int g = 1; g <= 16; ++g) {
    for (int n_ar = g; n_ar <= 40; n_ar += 3) {
      const auto cfg = make_cf_config(g, n_ar, std::nullopt, 50, Mode::CompressedToFine);
      int prev = 0;
      for (int t = 0; t <= 400; ++t) {
        const int k = span_count(t, cfg);
        ASSERT_EQ(k, brute_force_spans(t, g, n_ar)) << "g=" << g << " n_ar=" << n_ar << " t=" << t;
        ASSERT_GE(k, prev);
        const bool crosses = t - n_ar > 0 && (t - n_ar) % g == 0;
        ASSERT_EQ(k - prev, crosses ? 1 : 0);
        prev = k;
      }
    }
  }
}

TEST(RunConfigFile, ParsesKnownKeys) {
  const auto cfg = parse_run_config(
      "# desk model\n"
      "g = 15\nn_ar = 75\nn_nar = 20\nframe_rate = 75\nmode = cf\n"
      "dim = 32\nnum_blocks = 3\nnum_heads = 4\nffn_mult = 2\nnum_layers = 2\nseed = 9\n");
  EXPECT_EQ(cfg.cf.span, 15);
  EXPECT_EQ(cfg.cf.nar_window, 20);
  EXPECT_EQ(cfg.model.dim, 32);
  EXPECT_EQ(cfg.model.num_layers, 2);
  EXPECT_EQ(cfg.seed, 9u);
  const auto again = parse_run_config(format_run_config(cfg));
  EXPECT_EQ(again.cf, cfg.cf);
  EXPECT_EQ(again.model, cfg.model);
}

TEST(RunConfigFile, RejectsUnknownAndDuplicateKeys) {
  EXPECT_THROW(parse_run_config("g = 2\nwidth = 3\n"), ValidationError);
  EXPECT_THROW(parse_run_config("g = 2\ng = 3\n"), ValidationError);
  EXPECT_THROW(parse_run_config("g = two\n"), ValidationError);
  EXPECT_THROW(parse_run_config("dim = 30\nnum_heads = 4\n"), ValidationError);
}

TEST(RunConfigFile, AbsentNarWindow) {
  EXPECT_FALSE(parse_run_config("n_nar = none\n").cf.nar_window.has_value());
}

TEST(Vocabulary, DisjointRanges) {
  Vocabulary v{5, 7, 1};
  EXPECT_EQ(v.text_id(4), 4);
  EXPECT_EQ(v.speech_id(0), 5);
  EXPECT_EQ(v.bos(), 12);
  EXPECT_EQ(v.w(), 15);
  EXPECT_EQ(v.size(), 16);
  EXPECT_EQ(v.ar_output_size(), 8);
  EXPECT_THROW(v.text_id(5), ValidationError);
  EXPECT_THROW(v.speech_id(-1), ValidationError);
}

}  // namespace
}  // namespace cflm
