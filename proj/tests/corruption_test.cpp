#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>
#include <vector>

#include "ehdiscrim/corruption.hpp"
#include "ehdiscrim/rng.hpp"
#include "ehdiscrim/vocab.hpp"
#include "support/stats.hpp"

using ehd::MaskAction;
using ehd::MaskPlan;
using ehd::Rng;
using ehd::TokenSequence;

namespace {

constexpr size_t kVocab = 40;  // ids 0-4 special, 5..39 real

TokenSequence single_char_words(size_t n, Rng& rng) {
  TokenSequence s;
  for (size_t i = 0; i < n; ++i) {
    s.ids.push_back(static_cast<int32_t>(5 + rng.uniform_int(kVocab - 5)));
    s.word_start.push_back(1);
  }
  return s;
}

// words of 1-3 pieces
TokenSequence multi_piece_words(size_t words, Rng& rng) {
  TokenSequence s;
  for (size_t w = 0; w < words; ++w) {
    const size_t pieces = 1 + rng.uniform_int(3);
    for (size_t p = 0; p < pieces; ++p) {
      s.ids.push_back(static_cast<int32_t>(5 + rng.uniform_int(kVocab - 5)));
      s.word_start.push_back(p == 0 ? 1 : 0);
    }
  }
  return s;
}

std::vector<std::vector<double>> uniform_probs(size_t rows, size_t v) {
  return std::vector<std::vector<double>>(
      rows, std::vector<double>(v, 1.0 / static_cast<double>(v)));
}

std::vector<std::vector<double>> point_mass_probs(const MaskPlan& plan,
                                                  const TokenSequence& seq,
                                                  size_t v, int32_t force = -1) {
  std::vector<std::vector<double>> probs;
  for (size_t t : plan.positions) {
    std::vector<double> row(v, 0.0);
    row[force >= 0 ? static_cast<size_t>(force)
                   : static_cast<size_t>(seq.ids[t])] = 1.0;
    probs.push_back(std::move(row));
  }
  return probs;
}

}  // namespace

TEST(SelectMask, ExactFifteenOnHundredSingles) {
  Rng rng(41);
  TokenSequence s = single_char_words(100, rng);
  for (int trial = 0; trial < 50; ++trial) {
    MaskPlan p = ehd::select_mask_positions(s, 0.15, rng);
    EXPECT_EQ(p.positions.size(), 15u);
  }
}

TEST(SelectMask, WholeWordsIncluded) {
  TokenSequence s;
  // one 3-piece word then single-char words
  for (int i = 0; i < 30; ++i) {
    s.ids.push_back(static_cast<int32_t>(5 + i % 20));
    s.word_start.push_back(i % 3 == 0 ? 1 : 0);
  }
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    MaskPlan p = ehd::select_mask_positions(s, 0.2, rng);
    std::set<size_t> pos(p.positions.begin(), p.positions.end());
    for (const auto& [b, e] : p.words) {
      EXPECT_EQ(e - b, 3u);
      for (size_t t = b; t < e; ++t) EXPECT_TRUE(pos.count(t));
    }
  }
}

TEST(SelectMask, PositionsSortedDistinct) {
  Rng rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    TokenSequence s = multi_piece_words(20 + rng.uniform_int(40), rng);
    MaskPlan p = ehd::select_mask_positions(s, 0.15, rng);
    for (size_t i = 1; i < p.positions.size(); ++i)
      EXPECT_LT(p.positions[i - 1], p.positions[i]);
  }
}

TEST(SelectMask, MeanFractionInBand) {
  Rng rng(44);
  double fraction_sum = 0.0;
  size_t trials = 0;
  for (int t = 0; t < 10000; ++t) {
    TokenSequence s = multi_piece_words(30 + rng.uniform_int(50), rng);
    MaskPlan p = ehd::select_mask_positions(s, 0.15, rng);
    fraction_sum += static_cast<double>(p.positions.size()) /
                    static_cast<double>(s.size());
    ++trials;
  }
  const double mean = fraction_sum / static_cast<double>(trials);
  EXPECT_GE(mean, 0.14);
  EXPECT_LE(mean, 0.17);
}

TEST(SelectMask, RateZeroMasksNothing) {
  Rng rng(45);
  TokenSequence s = single_char_words(64, rng);
  MaskPlan p = ehd::select_mask_positions(s, 0.0, rng);
  EXPECT_TRUE(p.positions.empty());
}

TEST(BuildMasked, MaskActionMasksEveryPiece) {
  TokenSequence s;
  for (int i = 0; i < 2; ++i) {
    s.ids.push_back(10 + i);
    s.word_start.push_back(i == 0 ? 1 : 0);
  }
  MaskPlan p{{{0, 2}}, {0, 1}};
  Rng rng(46);
  // p_mask = 1: the word action is always Mask
  auto r = ehd::build_masked_sequence(s, p, kVocab, rng, 1.0, 0.0);
  EXPECT_EQ(r.x.ids[0], ehd::Vocab::kMask);
  EXPECT_EQ(r.x.ids[1], ehd::Vocab::kMask);
  ASSERT_EQ(r.actions.size(), 1u);
  EXPECT_EQ(r.actions[0], MaskAction::Mask);
}

TEST(BuildMasked, KeepLeavesOriginal) {
  TokenSequence s;
  s.ids = {7, 8, 9};
  s.word_start = {1, 1, 1};
  MaskPlan p{{{1, 2}}, {1}};
  Rng rng(47);
  auto r = ehd::build_masked_sequence(s, p, kVocab, rng, 0.0, 0.0);  // Keep only
  EXPECT_EQ(r.x.ids, s.ids);
  EXPECT_EQ(r.actions[0], MaskAction::Keep);
}

TEST(BuildMasked, RandomNeverProducesSpecials) {
  Rng rng(48);
  TokenSequence s = single_char_words(50, rng);
  MaskPlan p;
  for (size_t i = 0; i < s.size(); ++i) {
    p.words.push_back({i, i + 1});
    p.positions.push_back(i);
  }
  for (int trial = 0; trial < 100; ++trial) {
    auto r = ehd::build_masked_sequence(s, p, kVocab, rng, 0.0, 1.0);  // Random
    for (int32_t id : r.x.ids) {
      EXPECT_GE(id, 5);
      EXPECT_LT(id, static_cast<int32_t>(kVocab));
    }
  }
}

TEST(BuildMasked, ActionFrequenciesEightyTenTen) {
  Rng rng(49);
  size_t counts[3] = {0, 0, 0};
  size_t total = 0;
  while (total < 20000) {
    TokenSequence s = multi_piece_words(40, rng);
    MaskPlan p = ehd::select_mask_positions(s, 0.15, rng);
    auto r = ehd::build_masked_sequence(s, p, kVocab, rng);
    for (MaskAction a : r.actions) ++counts[static_cast<int>(a)];
    total += r.actions.size();
  }
  const double n = static_cast<double>(total);
  EXPECT_NEAR(static_cast<double>(counts[0]) / n, 0.8, 0.02);
  EXPECT_NEAR(static_cast<double>(counts[1]) / n, 0.1, 0.02);
  EXPECT_NEAR(static_cast<double>(counts[2]) / n, 0.1, 0.02);
}

TEST(SampleReplacements, PointMassOnOriginalGivesNoFlags) {
  Rng rng(50);
  TokenSequence s = single_char_words(30, rng);
  MaskPlan p = ehd::select_mask_positions(s, 0.3, rng);
  auto probs = point_mass_probs(p, s, kVocab);
  auto r = ehd::sample_replacements<double>(probs, p, s, rng);
  EXPECT_EQ(r.x.ids, s.ids);
  for (uint8_t f : r.replaced_flags) EXPECT_EQ(f, 0);
}

TEST(SampleReplacements, PointMassElsewhereFlagsAll) {
  Rng rng(51);
  TokenSequence s = single_char_words(30, rng);
  // force every sampled token to id 6; make originals != 6
  for (auto& id : s.ids)
    if (id == 6) id = 7;
  MaskPlan p = ehd::select_mask_positions(s, 0.3, rng);
  auto probs = point_mass_probs(p, s, kVocab, 6);
  auto r = ehd::sample_replacements<double>(probs, p, s, rng);
  std::set<size_t> planned(p.positions.begin(), p.positions.end());
  for (size_t t = 0; t < s.size(); ++t) {
    if (planned.count(t)) {
      EXPECT_EQ(r.x.ids[t], 6);
      EXPECT_EQ(r.replaced_flags[t], 1);
    } else {
      EXPECT_EQ(r.x.ids[t], s.ids[t]);
      EXPECT_EQ(r.replaced_flags[t], 0);
    }
  }
}

TEST(SampleReplacements, MalformedDistributionThrows) {
  TokenSequence s;
  s.ids = {7};
  s.word_start = {1};
  MaskPlan p{{{0, 1}}, {0}};
  Rng rng(52);
  std::vector<std::vector<double>> bad = {std::vector<double>(kVocab, 0.5)};
  EXPECT_THROW(ehd::sample_replacements<double>(bad, p, s, rng),
               std::invalid_argument);
  std::vector<std::vector<double>> neg(1, std::vector<double>(kVocab, 0.0));
  neg[0][3] = 1.2;
  neg[0][4] = -0.2;
  EXPECT_THROW(ehd::sample_replacements<double>(neg, p, s, rng),
               std::invalid_argument);
}

// Goodness of fit of the categorical sampler against an uneven target
// distribution.
TEST(SampleReplacements, ChiSquareGoodnessOfFit) {
  const size_t v = 10;
  std::vector<double> dist = {0.02, 0.05, 0.08, 0.10, 0.15,
                              0.20, 0.12, 0.13, 0.10, 0.05};
  TokenSequence s;
  s.ids = {0};  // original id 0 so flag logic is exercised too
  s.word_start = {1};
  MaskPlan p{{{0, 1}}, {0}};
  std::vector<std::vector<double>> probs = {dist};
  Rng rng(53);
  std::vector<uint64_t> observed(v, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    auto r = ehd::sample_replacements<double>(probs, p, s, rng);
    ++observed[static_cast<size_t>(r.x.ids[0])];
  }
  const double stat = ehd_test::chi_square_statistic(observed, dist);
  const double pval = ehd_test::chi_square_pvalue(stat, static_cast<double>(v - 1));
  EXPECT_GT(pval, 0.01) << "stat " << stat;
}

TEST(Candidates, KZeroIsJustOriginal) {
  Rng rng(54);
  TokenSequence s = single_char_words(20, rng);
  MaskPlan p = ehd::select_mask_positions(s, 0.3, rng);
  auto sets = ehd::build_candidate_sets<double>(
      uniform_probs(p.positions.size(), kVocab), p, s, 0, rng);
  ASSERT_EQ(sets.size(), p.positions.size());
  for (size_t i = 0; i < sets.size(); ++i) {
    ASSERT_EQ(sets[i].size(), 1u);
    EXPECT_EQ(sets[i][0], s.ids[p.positions[i]]);
  }
}

TEST(Candidates, KFiveDistinctWithOriginal) {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    TokenSequence s = single_char_words(20, rng);
    MaskPlan p = ehd::select_mask_positions(s, 0.3, rng);
    auto sets = ehd::build_candidate_sets<double>(
        uniform_probs(p.positions.size(), kVocab), p, s, 5, rng);
    for (size_t i = 0; i < sets.size(); ++i) {
      ASSERT_EQ(sets[i].size(), 6u);
      EXPECT_EQ(sets[i][0], s.ids[p.positions[i]]);
      std::set<int32_t> uniq(sets[i].begin(), sets[i].end());
      EXPECT_EQ(uniq.size(), 6u);
    }
  }
}

TEST(Candidates, VocabSmallerThanKPlusOneThrows) {
  TokenSequence s;
  s.ids = {2};
  s.word_start = {1};
  MaskPlan p{{{0, 1}}, {0}};
  Rng rng(56);
  EXPECT_THROW(
      ehd::build_candidate_sets<double>(uniform_probs(1, 4), p, s, 4, rng),
      std::invalid_argument);
}

// Uniform generator over 10 tokens: each of the 9 non-original ids should be
// drawn into S_t with probability 5/9.
TEST(Candidates, UniformMembershipFrequency) {
  const size_t v = 10;
  TokenSequence s;
  s.ids = {3};
  s.word_start = {1};
  MaskPlan p{{{0, 1}}, {0}};
  Rng rng(57);
  std::vector<uint64_t> member(v, 0);
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) {
    auto sets = ehd::build_candidate_sets<double>(uniform_probs(1, v), p, s, 5,
                                                  rng);
    for (size_t j = 1; j < sets[0].size(); ++j)
      ++member[static_cast<size_t>(sets[0][j])];
  }
  EXPECT_EQ(member[3], 0u);
  for (size_t id = 0; id < v; ++id) {
    if (id == 3) continue;
    const double freq = static_cast<double>(member[id]) / trials;
    EXPECT_NEAR(freq, 5.0 / 9.0, 0.02) << id;
  }
}

namespace {

ehd::GeneratorFn<double> uniform_generator(size_t v) {
  return [v](const TokenSequence&, const std::vector<size_t>& pos) {
    return uniform_probs(pos.size(), v);
  };
}

}  // namespace

TEST(ContrastivePair, SameSeedsSameViews) {
  Rng data_rng(58);
  TokenSequence s = multi_piece_words(30, data_rng);
  Rng a(99), b(99);
  auto pair = ehd::make_contrastive_pair<double>(s, uniform_generator(kVocab),
                                                 kVocab, 5, 0.15, a, b);
  EXPECT_EQ(pair.view_i.x_masked, pair.view_j.x_masked);
  EXPECT_EQ(pair.view_i.x_replaced, pair.view_j.x_replaced);
  EXPECT_EQ(pair.view_i.replaced_flags, pair.view_j.replaced_flags);
  EXPECT_EQ(pair.view_i.candidates, pair.view_j.candidates);
}

TEST(ContrastivePair, IndependentSeedsDiffer) {
  Rng data_rng(59);
  TokenSequence s = single_char_words(128, data_rng);
  size_t differing = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    Rng a(ehd::hash_seed(60, t, 0)), b(ehd::hash_seed(60, t, 1));
    auto pair = ehd::make_contrastive_pair<double>(s, uniform_generator(kVocab),
                                                   kVocab, 5, 0.15, a, b);
    if (pair.view_i.plan.positions != pair.view_j.plan.positions) ++differing;
  }
  EXPECT_GE(differing, static_cast<size_t>(trials - 1));
}

TEST(ContrastivePair, RateZeroReturnsOriginals) {
  Rng data_rng(61);
  TokenSequence s = multi_piece_words(20, data_rng);
  Rng a(1), b(2);
  auto pair = ehd::make_contrastive_pair<double>(s, uniform_generator(kVocab),
                                                 kVocab, 5, 0.0, a, b);
  EXPECT_EQ(pair.view_i.x_replaced, s);
  EXPECT_EQ(pair.view_j.x_replaced, s);
  for (uint8_t f : pair.view_i.replaced_flags) EXPECT_EQ(f, 0);
}

TEST(ContrastivePair, DeterministicStream) {
  Rng data_rng(62);
  TokenSequence s = multi_piece_words(25, data_rng);
  auto run = [&](uint64_t seed) {
    std::vector<int32_t> stream;
    for (int t = 0; t < 20; ++t) {
      Rng a(ehd::hash_seed(seed, t, 0)), b(ehd::hash_seed(seed, t, 1));
      auto pair = ehd::make_contrastive_pair<double>(
          s, uniform_generator(kVocab), kVocab, 5, 0.15, a, b);
      stream.insert(stream.end(), pair.view_i.x_replaced.ids.begin(),
                    pair.view_i.x_replaced.ids.end());
      stream.insert(stream.end(), pair.view_j.x_replaced.ids.begin(),
                    pair.view_j.x_replaced.ids.end());
    }
    return stream;
  };
  EXPECT_EQ(run(77), run(77));
  EXPECT_NE(run(77), run(78));
}

// Whole-word atomicity: a replaced flag may appear only at planned positions,
// and the plan is a union of whole words.
TEST(ContrastivePair, WholeWordAtomicityNeverViolated) {
  Rng data_rng(63);
  size_t violations = 0;
  for (int t = 0; t < 10000; ++t) {
    TokenSequence s = multi_piece_words(8 + data_rng.uniform_int(20), data_rng);
    Rng a(ehd::hash_seed(64, t, 0)), b(ehd::hash_seed(64, t, 1));
    auto pair = ehd::make_contrastive_pair<double>(s, uniform_generator(kVocab),
                                                   kVocab, 5, 0.15, a, b);
    for (const ehd::CorruptionView* v : {&pair.view_i, &pair.view_j}) {
      std::set<size_t> planned(v->plan.positions.begin(),
                               v->plan.positions.end());
      // plan must be a union of the sequence's words
      for (const auto& [bgn, end] : v->plan.words) {
        if (!s.word_start[bgn]) ++violations;
        if (end < s.size() && !s.word_start[end]) ++violations;
        for (size_t q = bgn + 1; q < end; ++q)
          if (s.word_start[q]) ++violations;
      }
      for (size_t q = 0; q < s.size(); ++q) {
        if (v->replaced_flags[q] && !planned.count(q)) ++violations;
        if (v->replaced_flags[q] !=
            (v->x_replaced.ids[q] != s.ids[q] ? 1 : 0))
          ++violations;
      }
    }
  }
  EXPECT_EQ(violations, 0u);
}

TEST(ChiSquareHelper, MatchesKnownValues) {
  // Chi2 CDF reference points: P(X2_1 <= 3.841) = 0.95, P(X2_5 <= 11.070) = 0.95
  EXPECT_NEAR(ehd_test::chi_square_pvalue(3.841, 1), 0.05, 5e-4);
  EXPECT_NEAR(ehd_test::chi_square_pvalue(11.070, 5), 0.05, 5e-4);
  EXPECT_NEAR(ehd_test::chi_square_pvalue(0.0, 3), 1.0, 1e-12);
}
