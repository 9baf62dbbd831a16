// Copyright 2026 The emoctc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "emoctc/ctc.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "test_util.hpp"

namespace emoctc::ctc {
namespace {

using test::random_posterior;
using test::symbols;

// Two frames over {a, NULL}: [a:0.6, NULL:0.4], [a:0.3, NULL:0.7].
RowMatrix two_frame_example() {
  RowMatrix y(2, 2);
  y << 0.6, 0.4,
       0.3, 0.7;
  return y;
}

// Best path and the most probable labeling disagree here.
RowMatrix gap_example() {
  RowMatrix y(2, 2);
  y << 0.4, 0.6,
       0.4, 0.6;
  return y;
}

TEST(Alphabet, NullIsLastIndex) {
  const auto a = Alphabet::emotions4();
  EXPECT_EQ(a.num_labels(), 4);
  EXPECT_EQ(a.size(), 5);
  EXPECT_EQ(a.blank(), 4);
  EXPECT_EQ(a.name(4), "NULL");
  EXPECT_EQ(a.name(0), "anger");
  EXPECT_THROW(Alphabet({}), Error);
  EXPECT_THROW(Alphabet({"x", "NULL"}), Error);
}

TEST(Collapse, ExamplesFromTheMappingDefinition) {
  const int blank = 3;  // a, b, c, NULL
  EXPECT_EQ(collapse(symbols("-aa-b-b--ccc", blank), blank), symbols("abbc", blank));
  EXPECT_EQ(collapse(symbols("abb---bc-", blank), blank), symbols("abbc", blank));
}

TEST(Collapse, AllNullIsEmpty) {
  EXPECT_TRUE(collapse(symbols("-----", 2), 2).empty());
  EXPECT_TRUE(collapse(Path{}, 2).empty());
}

TEST(Collapse, IdempotentOnCleanSequencesAndNeverEmitsNull) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 3);
    const int len = static_cast<int>(rng() % 10);
    Path p(static_cast<std::size_t>(len));
    for (auto& s : p) s = static_cast<int>(rng() % static_cast<unsigned>(k + 1));
    const auto l = collapse(p, k);
    for (int s : l) EXPECT_NE(s, k);
    bool repeat_free = true;
    for (std::size_t i = 1; i < l.size(); ++i) repeat_free &= l[i] != l[i - 1];
    if (repeat_free) {
      EXPECT_EQ(collapse(l, k), l);
    }
  }
}

TEST(PathProb, TwoFrameExample) {
  const auto y = two_frame_example();
  EXPECT_NEAR(path_prob(y, symbols("a-", 1)), 0.42, 1e-15);
  EXPECT_NEAR(path_prob(y, symbols("aa", 1)), 0.18, 1e-15);
}

TEST(PathProb, ZeroProbabilitySymbolGivesMinusInfinity) {
  RowMatrix y(2, 2);
  y << 1.0, 0.0,
       0.5, 0.5;
  EXPECT_EQ(path_log_prob(y, symbols("-a", 1)), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(path_prob(y, symbols("-a", 1)), 0.0);
}

TEST(PathProb, LengthMismatch) {
  const auto y = two_frame_example();
  try {
    path_prob(y, symbols("a", 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLengthMismatch);
  }
}

// Hand enumeration of the four paths: aa=0.18, a-=0.42, -a=0.12, --=0.28.
TEST(BruteForce, TwoFrameExample) {
  const auto y = two_frame_example();
  EXPECT_NEAR(labeling_prob_bruteforce(y, symbols("a", 1)), 0.72, 1e-15);
  EXPECT_NEAR(labeling_prob_bruteforce(y, Labeling{}), 0.28, 1e-15);
  EXPECT_EQ(labeling_prob_bruteforce(y, symbols("aa", 1)), 0.0);
}

TEST(BruteForce, RefusesHugeEnumeration) {
  std::mt19937_64 rng(1);
  const auto y = random_posterior(rng, 12, 4);  // 5^12 > 1e7
  try {
    labeling_prob_bruteforce(y, Labeling{0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooLargeToEnumerate);
  }
}

TEST(Loss, SingleFrame) {
  RowMatrix y(1, 2);
  y << 0.6, 0.4;
  EXPECT_NEAR(ctc_loss_and_grad(y, Labeling{0}).loss, -std::log(0.6), 1e-15);
}

TEST(Loss, TwoFrameExampleMatchesEnumeration) {
  const auto r = ctc_loss_and_grad(two_frame_example(), Labeling{0}, 2);
  EXPECT_NEAR(r.loss, -std::log(0.72), 1e-14);
  EXPECT_NEAR(r.loss, 0.3285, 5e-5);
}

TEST(Loss, RepeatWithoutRoomForSeparatorIsInfeasible) {
  try {
    ctc_loss_and_grad(two_frame_example(), symbols("aa", 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInfeasibleLabeling);
  }
  EXPECT_THROW(ctc_loss_and_grad(two_frame_example(), Labeling{0}, 3), Error);
}

TEST(Loss, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 3);
    const int frames = 1 + static_cast<int>(rng() % 6);
    const auto y = random_posterior(rng, frames, k);
    for (const auto& l : test::all_labelings(k, 3)) {
      if (!feasible(l, frames)) continue;
      const double oracle = labeling_prob_bruteforce(y, l);
      const double dp = std::exp(-ctc_loss_and_grad(y, l).loss);
      EXPECT_LE(std::abs(dp - oracle) / oracle, 1e-9);
    }
  }
}

TEST(Loss, GradientWithRespectToPosteriorMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const double h = 1e-6;
  for (int trial = 0; trial < 30; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 3);
    const int frames = 2 + static_cast<int>(rng() % 5);
    const auto y = random_posterior(rng, frames, k);
    const Labeling l{static_cast<int>(rng() % static_cast<unsigned>(k))};
    const auto r = ctc_loss_and_grad(y, l);
    for (int t = 0; t < frames; ++t) {
      for (int c = 0; c <= k; ++c) {
        RowMatrix up = y, down = y;
        up(t, c) += h;
        down(t, c) -= h;
        // The loss is a polynomial in unnormalized y, so perturbing one entry is legal.
        const double fd = (ctc_loss_and_grad(up, l).loss - ctc_loss_and_grad(down, l).loss) / (2 * h);
        EXPECT_NEAR(r.grad(t, c), fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(Loss, LogitGradientMatchesFiniteDifferencesAndChainRule) {
  std::mt19937_64 rng(9);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 3);
    const int frames = 1 + static_cast<int>(rng() % 7);
    const auto u = test::random_logits(rng, frames, k + 1);
    const auto y = test::softmax_rows(u);
    Labeling l;
    const int len = static_cast<int>(rng() % 3);
    for (int i = 0; i < len; ++i) l.push_back(static_cast<int>(rng() % static_cast<unsigned>(k)));
    if (!feasible(l, frames)) continue;
    const auto direct = ctc_loss_and_logit_grad(y, l);
    const auto via_y = ctc_loss_and_grad(y, l);
    EXPECT_NEAR(direct.loss, via_y.loss, 1e-12);
    for (int t = 0; t < frames; ++t) {
      const double inner = via_y.grad.row(t).dot(y.row(t));
      for (int c = 0; c <= k; ++c) {
        const double chained = y(t, c) * (via_y.grad(t, c) - inner);
        RowMatrix up = u, down = u;
        up(t, c) += h;
        down(t, c) -= h;
        const double fd = (ctc_loss_and_logit_grad(test::softmax_rows(up), l).loss -
                           ctc_loss_and_logit_grad(test::softmax_rows(down), l).loss) / (2 * h);
        const double denom = std::max({1e-6, std::abs(fd), std::abs(direct.grad(t, c))});
        EXPECT_LE(std::abs(direct.grad(t, c) - fd) / denom, 1e-4);
        EXPECT_NEAR(direct.grad(t, c), chained, 1e-10);
      }
    }
  }
}

TEST(Loss, ProbabilitiesOfAllLabelingsSumToOne) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 2);
    const int frames = 1 + static_cast<int>(rng() % 6);
    const auto y = random_posterior(rng, frames, k);
    double total = 0.0;
    for (const auto& l : test::all_labelings(k, frames)) total += labeling_prob(y, l);
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Feasibility, NonEmptyPreimageIffEnoughFrames) {
  for (int k = 1; k <= 2; ++k) {
    for (int frames = 1; frames <= 5; ++frames) {
      std::set<Labeling> reachable;
      Path p(static_cast<std::size_t>(frames), 0);
      while (true) {
        reachable.insert(collapse(p, k));
        int pos = frames - 1;
        while (pos >= 0 && ++p[static_cast<std::size_t>(pos)] == k + 1) p[static_cast<std::size_t>(pos--)] = 0;
        if (pos < 0) break;
      }
      for (const auto& l : test::all_labelings(k, frames + 1)) {
        EXPECT_EQ(reachable.count(l) == 1, feasible(l, frames));
      }
    }
  }
}

TEST(Loss, PaddedRowsDoNotMatter) {
  std::mt19937_64 rng(3);
  auto y = random_posterior(rng, 8, 3);
  const Labeling l{1, 2};
  const auto a = ctc_loss_and_grad(y, l, 5);
  const auto best_before = best_path_decode(y, 5);
  const auto beam_before = beam_search_decode(y, 5, 4);
  const auto exact_before = exact_decode(y, 5);
  y.bottomRows(3) = random_posterior(rng, 3, 3);
  const auto b = ctc_loss_and_grad(y, l, 5);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad, b.grad);
  EXPECT_TRUE(a.grad.bottomRows(3).isZero());
  EXPECT_EQ(best_path_decode(y, 5), best_before);
  EXPECT_EQ(beam_search_decode(y, 5, 4), beam_before);
  EXPECT_EQ(exact_decode(y, 5), exact_before);
}

TEST(Decode, TwoFrameExample) {
  const auto y = two_frame_example();
  EXPECT_EQ(best_path_decode(y), Labeling{0});
  EXPECT_EQ(beam_search_decode(y, -1, 1), Labeling{0});
  EXPECT_EQ(exact_decode(y), Labeling{0});
}

TEST(Decode, BestPathGapExample) {
  const auto y = gap_example();
  EXPECT_TRUE(best_path_decode(y).empty());
  EXPECT_EQ(exact_decode(y), Labeling{0});
  EXPECT_EQ(beam_search_decode(y, -1, 4), Labeling{0});
  EXPECT_NEAR(labeling_prob(y, Labeling{0}), 0.64, 1e-15);
  EXPECT_NEAR(labeling_prob(y, Labeling{}), 0.36, 1e-15);
}

TEST(Decode, UniformRowsBreakTiesTowardLowestIndex) {
  const RowMatrix y = RowMatrix::Constant(3, 3, 1.0 / 3.0);
  EXPECT_EQ(best_path_decode(y), Labeling{0});
  EXPECT_EQ(beam_search_decode(y, -1, 1), Labeling{0});
}

TEST(Decode, OneHotPath) {
  RowMatrix y = RowMatrix::Zero(3, 3);
  y(0, 0) = 1.0;
  y(1, 2) = 1.0;
  y(2, 1) = 1.0;
  EXPECT_EQ(exact_decode(y), (Labeling{0, 1}));
  EXPECT_EQ(best_path_decode(y), (Labeling{0, 1}));
}

TEST(Decode, BadWidth) {
  try {
    beam_search_decode(gap_example(), -1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBadWidth);
  }
}

TEST(Decode, WidthOneIsBestPath) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 2000; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 4);
    const int frames = 1 + static_cast<int>(rng() % 20);
    const auto y = random_posterior(rng, frames, k);
    ASSERT_EQ(beam_search_decode(y, -1, 1), best_path_decode(y));
  }
}

TEST(Decode, ExhaustiveBeamIsExactAndExactDominatesBestPath) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 2);
    const int frames = 1 + static_cast<int>(rng() % 6);
    const auto y = random_posterior(rng, frames, k);
    const auto exact = exact_decode(y);
    EXPECT_EQ(beam_search_decode(y, -1, 1 << 20), exact);
    EXPECT_GE(labeling_prob(y, exact), labeling_prob(y, best_path_decode(y)));
  }
}

}  // namespace
}  // namespace emoctc::ctc
