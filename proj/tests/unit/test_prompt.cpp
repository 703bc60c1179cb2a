#include <cmath>

#include <gtest/gtest.h>

#include "cfmimo/pretrain.hpp"
#include "cfmimo/prompt.hpp"

using namespace cfmimo;

namespace {

const PromptDims kFullDims{2, 4, 8, 4};

struct Fixture {
  SystemConfig sys;
  PilotBook book = walsh_hadamard_book(8);
  TaskConfig task;
  Block blk;

  Fixture(int ue_count, const AssignmentPolicy& pol, int bits = 8, std::uint64_t seed = 1) {
    task = draw_task(sys, sys.reference_noise_power(), seed, 0, ue_count);
    const int b[] = {bits};
    blk = simulate_block(sys, book, task, pol, b, seed, 0, 0);
  }
  PromptInputs inputs() const { return {blk.task, blk.assignment, book, blk.qframe, blk.profile}; }
};

}  // namespace

TEST(PromptDims, FullScaleArithmetic) {
  EXPECT_EQ(kFullDims.token_dim(), 17);
  EXPECT_EQ(kFullDims.seq_len(PromptLayout::kFull), 21);
  EXPECT_EQ(kFullDims.seq_len(PromptLayout::kNoLargeScale), 17);
  const PromptDims desk{2, 2, 4, 2};
  EXPECT_EQ(desk.token_dim(), 9);
  EXPECT_EQ(desk.seq_len(PromptLayout::kFull), 11);
  EXPECT_EQ((PromptDims{1, 1, 2, 2}).token_dim(), 3);
}

TEST(LargeScaleEncoding, Values) {
  EXPECT_EQ(encode_large_scale(1.0, 1.0), 0.0);
  EXPECT_NEAR(encode_large_scale(std::pow(10.0, 2.4), 1.0), 2.4, 1e-12);
  EXPECT_EQ(encode_large_scale(1e80, 1.0), 5.0);
  EXPECT_EQ(encode_large_scale(1e-80, 1.0), -5.0);
  EXPECT_EQ(encode_large_scale(0.0, 1.0), -5.0);
}

TEST(EncodePrompt, SingleUserHasEmptyColliderSlots) {
  Fixture f(1, policy::Orthogonal{});
  const TokenSequence seq = encode_prompt(f.inputs(), 0, kFullDims);
  ASSERT_EQ(seq.seq_len(), 21);
  ASSERT_EQ(seq.token_dim(), 17);
  EXPECT_TRUE(seq.valid[0]);
  for (int r = 1; r <= 3; ++r) {
    EXPECT_FALSE(seq.valid[r]);
    EXPECT_TRUE(seq.tokens.row(r).isZero(0.0));
  }
  for (int r = 4; r < 21; ++r) EXPECT_TRUE(seq.valid[r]);
}

TEST(EncodePrompt, QueryCarriesModulationIndex) {
  SystemConfig sys;
  sys.constellations = {ConstellationId::kBpsk};
  const PilotBook book = walsh_hadamard_book(8);
  const TaskConfig t = draw_task(sys, sys.reference_noise_power(), 2, 0, 2);
  const int b[] = {4};
  const Block blk = simulate_block(sys, book, t, policy::Orthogonal{}, b, 2, 0, 0);
  const PromptInputs in{blk.task, blk.assignment, book, blk.qframe, blk.profile};
  const TokenSequence seq = encode_prompt(in, 1, kFullDims);
  EXPECT_EQ(seq.tokens(20, 16), 0.0);

  sys.constellations = {ConstellationId::kQam64};
  const TaskConfig t2 = draw_task(sys, sys.reference_noise_power(), 2, 0, 2);
  const Block blk2 = simulate_block(sys, book, t2, policy::Orthogonal{}, b, 2, 0, 0);
  const PromptInputs in2{blk2.task, blk2.assignment, book, blk2.qframe, blk2.profile};
  EXPECT_EQ(encode_prompt(in2, 0, kFullDims).tokens(20, 16), 4.0);
}

TEST(EncodePrompt, LayoutAndZeroPadding) {
  Fixture f(4, policy::FixedReuse{2}, 4);
  const PromptInputs in = f.inputs();
  for (int k = 0; k < 4; ++k) {
    const TokenSequence seq = encode_prompt(in, k, kFullDims);
    // Large-scale tokens hold L values.
    for (int r = 0; r < 4; ++r) EXPECT_TRUE(seq.tokens.row(r).tail(13).isZero(0.0));
    for (int l = 0; l < 4; ++l) {
      EXPECT_EQ(seq.tokens(0, l), encode_large_scale(f.task.r(l, k), f.task.noise_power));
    }
    const int colliders = static_cast<int>(f.blk.assignment.collisions[k].size());
    for (int slot = 0; slot < 3; ++slot) EXPECT_EQ(seq.valid[1 + slot], slot < colliders);
    const Eigen::VectorXd phi = f.book.pilot(f.blk.assignment.pilot[k]);
    for (int i = 0; i < 8; ++i) {
      const int rx = 4 + 2 * i;
      EXPECT_EQ(seq.tokens(rx, 16), 0.0);
      EXPECT_EQ(seq.tokens(rx + 1, 0), phi[i]);
      EXPECT_TRUE(seq.tokens.row(rx + 1).tail(16).isZero(0.0));
    }
  }
}

TEST(EncodePrompt, CollidersSortedByDescendingMean) {
  Fixture f(4, policy::FixedReuse{3}, 8, 5);
  const TokenSequence seq = encode_prompt(f.inputs(), 0, kFullDims);
  double prev = 1e9;
  for (int slot = 1; slot <= 3; ++slot) {
    const double mean = seq.tokens.row(slot).head(4).mean();
    EXPECT_LE(mean, prev);
    prev = mean;
  }
}

TEST(EncodePrompt, ColliderOrderDoesNotMatter) {
  Fixture f(4, policy::FixedReuse{3}, 8, 6);
  PilotAssignment permuted = f.blk.assignment;
  for (auto& c : permuted.collisions) std::reverse(c.begin(), c.end());
  const PromptInputs a = f.inputs();
  const PromptInputs b{f.blk.task, permuted, f.book, f.blk.qframe, f.blk.profile};
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(encode_prompt(a, k, kFullDims).tokens, encode_prompt(b, k, kFullDims).tokens);
  }
}

TEST(EncodePrompt, NoLargeScaleSharesPairTokens) {
  Fixture f(3, policy::FixedReuse{1}, 3);
  const TokenSequence full = encode_prompt(f.inputs(), 1, kFullDims);
  const TokenSequence nols = encode_prompt_no_largescale(f.inputs(), 1, kFullDims);
  ASSERT_EQ(nols.seq_len(), 17);
  EXPECT_EQ(nols.layout, PromptLayout::kNoLargeScale);
  EXPECT_EQ(full.tokens.bottomRows(17), nols.tokens);
}

TEST(EncodePrompt, RoundTripThroughNormalization) {
  Fixture f(2, policy::Orthogonal{}, 5);
  const TokenSequence seq = encode_prompt(f.inputs(), 0, kFullDims);
  for (int i = 0; i < 8; ++i) {
    const CVec z = denormalize_signal(decode_received_token(seq, kFullDims, i), f.blk.profile, 2);
    EXPECT_LT((z - f.blk.qframe.Z_stacked.col(i)).norm(), 1e-12 * f.blk.qframe.Z_stacked.norm());
    EXPECT_EQ(decode_pilot_token(seq, kFullDims, i),
              f.book.pilot(f.blk.assignment.pilot[0])[i]);
  }
  const CVec y = denormalize_signal(decode_query_signal(seq, kFullDims), f.blk.profile, 2);
  EXPECT_LT((y - f.blk.qframe.y_stacked).norm(), 1e-12 * f.blk.qframe.y_stacked.norm());
}

TEST(EncodePrompt, NoiselessQueryDecodesToChannelTimesSymbol) {
  SystemConfig sys;
  const PilotBook book = walsh_hadamard_book(8);
  TaskConfig t = draw_task(sys, 0.0, 3, 0, 1);
  const int b[] = {0};
  const Block blk = simulate_block(sys, book, t, policy::Orthogonal{}, b, 3, 0, 0);
  const PromptInputs in{blk.task, blk.assignment, book, blk.qframe, blk.profile};
  const TokenSequence seq = encode_prompt(in, 0, kFullDims);
  const CVec y = denormalize_signal(decode_query_signal(seq, kFullDims), blk.profile, 2);
  CVec hx(8);
  for (int l = 0; l < 4; ++l) hx.segment(2 * l, 2) = blk.channels.at(l, 0) * blk.frame.x[0];
  EXPECT_LT((y - hx).norm(), 1e-12 * hx.norm());
}

TEST(EncodePrompt, NormalizedEntriesHaveUnitVariance) {
  SystemConfig sys;
  const PilotBook book = walsh_hadamard_book(8);
  const int b[] = {0};
  double acc = 0.0;
  long count = 0;
  for (int i = 0; i < 3000; ++i) {
    const TaskConfig t = draw_task(sys, sys.reference_noise_power(), 4, i);
    const Block blk = simulate_block(sys, book, t, policy::Orthogonal{}, b, 4, i, 0);
    const PromptInputs in{blk.task, blk.assignment, book, blk.qframe, blk.profile};
    const TokenSequence seq = encode_prompt(in, 0, kFullDims);
    const auto q = seq.tokens.row(20).head(16);
    acc += q.squaredNorm();
    count += 16;
  }
  EXPECT_NEAR(acc / count, 1.0, 0.1);
}

TEST(EncodePrompt, ShapeErrors) {
  Fixture f(2, policy::Orthogonal{});
  EXPECT_THROW(encode_prompt(f.inputs(), 2, kFullDims), Error);
  EXPECT_THROW(encode_prompt(f.inputs(), 0, PromptDims{2, 4, 4, 4}), Error);
  EXPECT_THROW(encode_prompt(f.inputs(), 0, PromptDims{2, 2, 8, 4}), Error);
  Fixture g(4, policy::FixedReuse{3});
  EXPECT_THROW(encode_prompt(g.inputs(), 0, PromptDims{2, 4, 8, 3}), Error);
}

TEST(Layout, VersionStrings) {
  EXPECT_EQ(parse_layout(layout_version(PromptLayout::kFull)), PromptLayout::kFull);
  EXPECT_EQ(parse_layout("no_ls"), PromptLayout::kNoLargeScale);
  EXPECT_THROW(parse_layout("bogus"), Error);
}
