// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "cflm/mask.hpp"
#include "test_util.hpp"

namespace cflm {
namespace {

using testing::random_case;

std::set<int> visible(const AttentionMask& m, size_t q) {
  std::set<int> s;
  for (size_t k = 0; k < m.n_k(); ++k) {
    if (m.at(q, k)) s.insert(static_cast<int>(k));
  }
  return s;
}

CFConfig cf(int g, int n_ar, Mode mode = Mode::CompressedToFine) {
  return make_cf_config(g, n_ar, std::nullopt, 50, mode);
}

// Slots [p0, p1, BOS, c0, c1, W0, c2, c3, W1, c4, EOS].
class CfExample : public ::testing::Test {
 protected:
  CFConfig cfg = cf(2, 2);
  SequenceLayout layout = build_layout(0, 2, 5, cfg, LayoutKind::Training);
  AttentionMask mask = build_cf_training(layout, cfg);
};

TEST_F(CfExample, RawQuerySeesPromptWAndWindow) {
  EXPECT_EQ(visible(mask, 9), (std::set<int>{0, 1, 2, 5, 6, 7, 8, 9}));
}

TEST_F(CfExample, WQuerySeesOnlyItsSpan) {
  EXPECT_EQ(visible(mask, 5), (std::set<int>{3, 4}));
  EXPECT_EQ(visible(mask, 8), (std::set<int>{6, 7}));
}

TEST_F(CfExample, WindowMayOverlapCompressedSpan) {
  EXPECT_EQ(visible(mask, 6), (std::set<int>{0, 1, 2, 3, 4, 5, 6}));
}

TEST_F(CfExample, PromptIsCausal) {
  EXPECT_EQ(visible(mask, 0), (std::set<int>{0}));
  EXPECT_EQ(visible(mask, 2), (std::set<int>{0, 1, 2}));
}

TEST(DenseCausal, Shapes) {
  const auto c = cf(2, 2, Mode::Dense);
  const auto one = build_dense_causal(build_layout(0, 0, 0, c, LayoutKind::Inference));
  ASSERT_EQ(one.n_q(), 1u);
  EXPECT_TRUE(one.at(0, 0));
  const auto four = build_dense_causal(build_layout(1, 0, 2, c, LayoutKind::Inference));
  for (size_t q = 0; q < 4; ++q) {
    for (size_t k = 0; k < 4; ++k) EXPECT_EQ(four.at(q, k), k <= q);
    EXPECT_EQ(four.row_count(q), q + 1);
  }
}

TEST(DenseCausal, RejectsW) {
  const auto c = cf(2, 2);
  EXPECT_THROW(build_dense_causal(build_layout(0, 0, 4, c, LayoutKind::Training)), ValidationError);
  EXPECT_THROW(build_prompt_local_ar(build_layout(0, 0, 4, c, LayoutKind::Training), 2), ValidationError);
  EXPECT_THROW(build_prompt_local_nar(build_layout(0, 0, 4, c, LayoutKind::Training), 2), ValidationError);
}

TEST(PromptLocalAr, Examples) {
  const auto c = cf(2, 2, Mode::Window);
  const auto layout = build_layout(0, 2, 5, c, LayoutKind::Inference);  // p0 p1 BOS c0..c4
  const auto m = build_prompt_local_ar(layout, 2);
  EXPECT_EQ(visible(m, 7), (std::set<int>{0, 1, 2, 5, 6, 7}));  // raw#4
  EXPECT_EQ(visible(m, 3), (std::set<int>{0, 1, 2, 3}));        // raw#0
}

TEST(PromptLocalNar, Examples) {
  const auto c = cf(2, 2, Mode::Window);
  const auto layout = build_layout(0, 0, 5, c, LayoutKind::Inference);  // BOS c0..c4
  const auto m = build_prompt_local_nar(layout, 1);
  EXPECT_EQ(visible(m, 3), (std::set<int>{0, 2, 3, 4}));  // raw#2
  for (size_t q = 1; q < m.n_q(); ++q) {
    for (size_t k = 1; k < m.n_k(); ++k) EXPECT_EQ(m.at(q, k), m.at(k, q));
  }
  const auto dense = build_prompt_local_nar(layout, std::nullopt);
  EXPECT_EQ(build_prompt_local_nar(layout, 5), dense);
  for (size_t q = 0; q < dense.n_q(); ++q) EXPECT_EQ(dense.row_count(q), q == 0 ? 1u : dense.n_k());
}

TEST(MaskOracle, AllBuildersMatchPerCell) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    for (Mode mode : {Mode::Dense, Mode::Window, Mode::CompressedToFine}) {
      const auto c = random_case(rng, mode);
      const auto layout = build_layout(c.text_len, c.prompt_len, c.gen_len, c.cfg, c.kind);
      const AttentionMask m = build_ar_mask(layout, c.cfg);
      const MaskKind kind = mode == Mode::Dense    ? MaskKind::DenseCausal
                            : mode == Mode::Window ? MaskKind::PromptLocalAr
                                                   : MaskKind::CfTraining;
      for (size_t q = 0; q < m.n_q(); ++q) {
        for (size_t k = 0; k < m.n_k(); ++k) {
          ASSERT_EQ(m.at(q, k), visibility_oracle(layout, kind, c.cfg, q, k)) << "q=" << q << " k=" << k;
        }
      }
      if (mode == Mode::Window) {
        const AttentionMask nar = build_prompt_local_nar(layout, c.cfg.nar_window);
        for (size_t q = 0; q < nar.n_q(); ++q) {
          for (size_t k = 0; k < nar.n_k(); ++k) {
            ASSERT_EQ(nar.at(q, k), visibility_oracle(layout, MaskKind::PromptLocalNar, c.cfg, q, k));
          }
        }
      }
    }
  }
}

TEST(MaskOracle, FillRowMatchesBuilderOnPrefixes) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = random_case(rng, Mode::CompressedToFine);
    const auto layout = build_layout(c.text_len, c.prompt_len, c.gen_len, c.cfg, c.kind);
    const AttentionMask m = build_ar_mask(layout, c.cfg);
    for (size_t q = 0; q < m.n_q(); ++q) {
      std::vector<uint8_t> row(q + 1, 7);
      fill_mask_row(layout, MaskKind::CfTraining, c.cfg, q, row);
      for (size_t k = 0; k <= q; ++k) ASSERT_EQ(row[k] != 0, m.at(q, k));
    }
  }
}

TEST(MaskProperties, Degenerations) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const int gen = static_cast<int>(rng() % 40);
    const int text = static_cast<int>(rng() % 5), prompt = static_cast<int>(rng() % 5);
    const int g = gen + 1 + static_cast<int>(rng() % 3);
    const auto cfc = cf(g, g + static_cast<int>(rng() % 4));
    const auto win = cf(g, cfc.ar_window, Mode::Window);
    const auto lay_cf = build_layout(text, prompt, gen, cfc, LayoutKind::Training);
    const auto lay_w = build_layout(text, prompt, gen, win, LayoutKind::Training);
    ASSERT_EQ(build_cf_training(lay_cf, cfc), build_prompt_local_ar(lay_w, win.ar_window));
    ASSERT_EQ(build_prompt_local_ar(lay_w, std::max(1, gen + static_cast<int>(rng() % 3))), build_dense_causal(lay_w));
  }
}

TEST(MaskProperties, CoverageAndNonEmptyRows) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto c = random_case(rng, Mode::CompressedToFine);
    const auto layout = build_layout(c.text_len, c.prompt_len, c.gen_len, c.cfg, c.kind);
    const AttentionMask m = build_cf_training(layout, c.cfg);
    EXPECT_NO_THROW(m.require_nonempty_rows());
    for (const Slot& q : layout.slots()) {
      if (q.kind != SlotKind::Raw) continue;
      for (int s = 0; s < q.raw_index; ++s) {
        const bool in_window = m.at(static_cast<size_t>(q.position), static_cast<size_t>(layout.raw_position(s)));
        const int j = s / c.cfg.span;
        const bool w_seen = j < layout.num_w() &&
                            m.at(static_cast<size_t>(q.position), static_cast<size_t>(layout.w_position(j)));
        ASSERT_TRUE(in_window || w_seen) << "raw " << s << " uncovered for query raw " << q.raw_index;
      }
    }
  }
}

TEST(MaskText, RoundTrip) {
  const auto c = cf(3, 4);
  const auto m = build_cf_training(build_layout(2, 1, 7, c, LayoutKind::Training), c);
  EXPECT_EQ(AttentionMask::from_text(m.to_text()), m);
  EXPECT_THROW(AttentionMask::from_text("2 2\n10\n"), ValidationError);
  EXPECT_THROW(AttentionMask::from_text("1 2\n1x\n"), ValidationError);
}

std::string read_golden(const std::string& name) {
  std::ifstream in(std::string(CFLM_GOLDEN_DIR) + "/" + name);
  EXPECT_TRUE(in.good()) << name;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(MaskGolden, BitExact) {
  const auto c = cf(2, 2);
  EXPECT_EQ(build_cf_training(build_layout(0, 2, 5, c, LayoutKind::Training), c).to_text(),
            read_golden("cf_p2_gen5_g2_nar2.txt"));
  const auto w = cf(2, 2, Mode::Window);
  EXPECT_EQ(build_prompt_local_ar(build_layout(0, 2, 5, w, LayoutKind::Training), 2).to_text(),
            read_golden("window_p2_gen5_nar2.txt"));
  EXPECT_EQ(build_dense_causal(build_layout(0, 2, 5, w, LayoutKind::Training)).to_text(),
            read_golden("dense_p2_gen5.txt"));
  EXPECT_EQ(build_prompt_local_nar(build_layout(0, 2, 5, w, LayoutKind::Inference), 1).to_text(),
            read_golden("nar_p2_gen5_nnar1.txt"));
}

}  // namespace
}  // namespace cflm
