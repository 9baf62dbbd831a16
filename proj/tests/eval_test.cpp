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

#include "emoctc/eval.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

namespace emoctc::eval {
namespace {

constexpr int A = 0, X = 1, N = 2, S = 3;  // anger, excitement, neutral, sadness

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kBadArgument;
}

TEST(AccuracyTest, Examples) {
  const std::vector<int> z{A, A, N, S}, h{A, N, N, S};
  EXPECT_DOUBLE_EQ(overall_accuracy(z, h), 0.75);
  EXPECT_NEAR(mean_class_accuracy(z, h), (0.5 + 1.0 + 1.0) / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(overall_accuracy(z, z), 1.0);
  EXPECT_DOUBLE_EQ(mean_class_accuracy(z, z), 1.0);
  const std::vector<int> disjoint{X, X, X, X};
  EXPECT_DOUBLE_EQ(overall_accuracy(z, disjoint), 0.0);
  const std::vector<int> all4{A, X, N, S, S, N, A}, constant(7, N);
  EXPECT_DOUBLE_EQ(mean_class_accuracy(all4, constant), 0.25);
}

TEST(AccuracyTest, Errors) {
  const std::vector<int> a{1, 2}, b{1};
  EXPECT_EQ(code_of([&] { overall_accuracy(a, b); }), ErrorCode::kLengthMismatch);
  EXPECT_EQ(code_of([&] { mean_class_accuracy(a, b); }), ErrorCode::kLengthMismatch);
  EXPECT_EQ(code_of([&] { overall_accuracy({}, {}); }), ErrorCode::kEmpty);
  EXPECT_EQ(code_of([&] { mean_class_accuracy({}, {}); }), ErrorCode::kEmpty);
}

TEST(AccuracyTest, RandomProperties) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cls(0, 3), len(1, 40);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = len(rng);
    std::vector<int> z(static_cast<std::size_t>(n)), h(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      z[static_cast<std::size_t>(i)] = cls(rng);
      h[static_cast<std::size_t>(i)] = cls(rng);
    }
    const auto m = confusion(z, h);
    long trace = 0, total = 0;
    for (int c = 0; c < 4; ++c) {
      trace += m[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
      long row = 0;
      for (long v : m[static_cast<std::size_t>(c)]) row += v;
      EXPECT_EQ(row, std::count(z.begin(), z.end(), c));
      total += row;
    }
    EXPECT_EQ(total, n);
    EXPECT_EQ(static_cast<double>(trace) / n, overall_accuracy(z, h));

    std::vector<int> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pz, ph;
    for (int i = 0; i < n; ++i) {
      pz.push_back(perm[static_cast<std::size_t>(z[static_cast<std::size_t>(i)])]);
      ph.push_back(perm[static_cast<std::size_t>(h[static_cast<std::size_t>(i)])]);
    }
    EXPECT_NEAR(mean_class_accuracy(pz, ph), mean_class_accuracy(z, h), 1e-15);

    // A constant predictor scores 1 / (classes present) when its class occurs.
    std::vector<int> constant(static_cast<std::size_t>(n), z[0]);
    const auto present = std::set<int>(z.begin(), z.end()).size();
    EXPECT_NEAR(mean_class_accuracy(z, constant), 1.0 / static_cast<double>(present), 1e-15);
  }
}

dataset::Corpus grouped_corpus(int groups, int per_group) {
  dataset::Corpus c;
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < per_group; ++i) {
      dataset::LabeledUtterance u;
      u.id = "g" + std::to_string(g) + "_" + std::to_string(i);
      u.group_id = "pair" + std::to_string(g);
      u.speaker_id = "spk" + std::to_string(2 * g + i % 2);
      u.final_label = to_raw(static_cast<Emotion>(i % 4));
      c.utterances.push_back(u);
    }
  }
  return c;
}

void expect_partition(const dataset::Corpus& c, const FoldSplit& split) {
  std::vector<int> tested(c.utterances.size(), 0);
  for (const auto& f : split.folds) {
    std::set<std::string> train_groups, test_groups, train_speakers, test_speakers;
    for (auto i : f.train) {
      train_groups.insert(c.utterances[i].group_id);
      train_speakers.insert(c.utterances[i].speaker_id);
    }
    for (auto i : f.test) {
      test_groups.insert(c.utterances[i].group_id);
      test_speakers.insert(c.utterances[i].speaker_id);
      ++tested[i];
    }
    EXPECT_EQ(f.train.size() + f.test.size(), c.utterances.size());
    for (const auto& g : test_groups) EXPECT_FALSE(train_groups.count(g)) << g;
    for (const auto& s : test_speakers) EXPECT_FALSE(train_speakers.count(s)) << s;
    EXPECT_EQ(std::vector<std::string>(test_groups.begin(), test_groups.end()), f.test_groups);
  }
  for (int t : tested) EXPECT_EQ(t, 1);
}

TEST(GroupedKFoldTest, FiveGroupsFiveFolds) {
  const auto c = grouped_corpus(5, 8);
  const auto split = grouped_kfold(c, 5, 1);
  ASSERT_EQ(split.folds.size(), 5u);
  for (const auto& f : split.folds) {
    EXPECT_EQ(f.test_groups.size(), 1u);
    EXPECT_EQ(f.test.size(), 8u);
  }
  expect_partition(c, split);
}

TEST(GroupedKFoldTest, PartitionOverSeedsAndSizes) {
  for (int groups : {5, 6, 9, 13}) {
    const auto c = grouped_corpus(groups, 5);
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      for (int k : {2, 3, 5}) {
        const auto split = grouped_kfold(c, k, seed);
        expect_partition(c, split);
        for (const auto& f : split.folds) {
          const auto n = static_cast<int>(f.test_groups.size());
          EXPECT_TRUE(n == groups / k || n == groups / k + 1);
        }
      }
    }
  }
  const auto c = grouped_corpus(9, 2);
  EXPECT_NE(grouped_kfold(c, 3, 1).folds[0].test_groups, grouped_kfold(c, 3, 2).folds[0].test_groups);
  EXPECT_EQ(grouped_kfold(c, 3, 1).folds[0].test_groups, grouped_kfold(c, 3, 1).folds[0].test_groups);
}

TEST(GroupedKFoldTest, SyntheticSpeakersStayOnOneSide) {
  const auto syn = dataset::generate_synthetic_corpus(dataset::SyntheticConfig{});
  expect_partition(syn.corpus, grouped_kfold(syn.corpus, 5, 7));
}

TEST(GroupedKFoldTest, TooFewGroups) {
  const auto c = grouped_corpus(4, 3);
  EXPECT_EQ(code_of([&] { grouped_kfold(c, 5); }), ErrorCode::kTooFewGroups);
}

// Twelve utterances whose expected tables were worked out by hand.
struct FixtureRow {
  std::vector<const char*> answers;
  int predicted;
};

dataset::Corpus fixture_corpus(const std::vector<FixtureRow>& rows, std::vector<int>& predicted) {
  dataset::Corpus c;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    dataset::LabeledUtterance u;
    u.id = "u" + std::to_string(i + 1);
    u.group_id = "g";
    int e = 0;
    for (const char* a : rows[i].answers) {
      u.experts.push_back({u.id, "E" + std::to_string(++e), *parse_raw_category(a)});
    }
    u.final_label = dataset::resolve_final_label(u.experts);
    u.agreement_count = dataset::agreement_count(u.experts, u.final_label);
    c.utterances.push_back(u);
    predicted.push_back(rows[i].predicted);
  }
  return c;
}

const std::vector<FixtureRow> kFixture = {
    {{"anger", "anger", "anger"}, A},
    {{"anger", "anger", "frustration"}, N},
    {{"anger", "anger", "excited", "anger"}, X},
    {{"anger", "anger", "sadness"}, A},
    {{"excited", "excited", "excited"}, X},
    {{"excited", "excited", "happiness"}, N},
    {{"excited", "excited", "neutral", "sadness"}, S},
    {{"neutral", "neutral", "neutral"}, A},
    {{"neutral", "neutral", "sadness"}, S},
    {{"neutral", "neutral", "anger"}, X},
    {{"sadness", "sadness", "sadness", "sadness"}, S},
    {{"sadness", "sadness", "frustration", "neutral"}, N},
};

TEST(ConfidenceTest, HandFixture) {
  std::vector<int> pred;
  const auto c = fixture_corpus(kFixture, pred);
  const auto t = misclassification_by_confidence(c, pred);
  EXPECT_EQ(t.max_dissent, 2);
  const std::vector<std::vector<int>> total{{1, 3, 0}, {1, 1, 1}, {1, 2, 0}, {1, 0, 1}};
  const std::vector<std::vector<int>> errors{{0, 2, 0}, {0, 1, 1}, {1, 2, 0}, {0, 0, 1}};
  EXPECT_EQ(t.total, total);
  EXPECT_EQ(t.errors, errors);
  EXPECT_NEAR(*t.error_rate(A, 1), 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(t.error_rate(A, 2).has_value());
  EXPECT_NEAR(t.overall_accuracy, 4.0 / 12.0, 1e-15);
  EXPECT_NEAR(*t.consistent_accuracy, 0.75, 1e-15);
}

TEST(ConfidenceTest, AllAgreePerfectModel) {
  std::vector<int> pred;
  const auto c = fixture_corpus({{{"anger", "anger", "anger"}, A}, {{"sadness", "sadness", "sadness"}, S}}, pred);
  const auto t = misclassification_by_confidence(c, pred);
  EXPECT_EQ(t.max_dissent, 0);
  EXPECT_EQ(*t.error_rate(A, 0), 0.0);
  EXPECT_EQ(*t.error_rate(S, 0), 0.0);
  EXPECT_FALSE(t.error_rate(N, 0).has_value());
}

TEST(ConfidenceTest, MissingExperts) {
  auto c = grouped_corpus(1, 2);
  const std::vector<int> pred{0, 1};
  EXPECT_EQ(code_of([&] { misclassification_by_confidence(c, pred); }), ErrorCode::kMissingExpertData);
  EXPECT_EQ(code_of([&] { residual_accuracy(c, pred); }), ErrorCode::kMissingExpertData);
}

TEST(ResidualTest, HandFixture) {
  std::vector<int> pred;
  const auto c = fixture_corpus(kFixture, pred);
  const auto r = residual_accuracy(c, pred);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(r[A].single_dissent, 3);
  EXPECT_EQ(r[A].considered, 2);
  EXPECT_EQ(r[A].errors, 1);
  EXPECT_EQ(r[A].coincident, 1);
  EXPECT_NEAR(*r[A].considered_ratio(), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r[X].single_dissent, 1);
  EXPECT_EQ(r[X].considered, 0);
  EXPECT_FALSE(r[X].coincidence_rate().has_value());
  EXPECT_EQ(r[N].single_dissent, 2);
  EXPECT_EQ(r[N].considered, 2);
  EXPECT_EQ(r[N].errors, 2);
  EXPECT_NEAR(*r[N].coincidence_rate(), 0.5, 1e-15);
  EXPECT_EQ(r[S].single_dissent, 0);
  EXPECT_FALSE(r[S].considered_ratio().has_value());
}

dataset::Corpus single_dissent_corpus(std::mt19937_64& rng, int n, std::vector<int>& dissent) {
  dataset::Corpus c;
  std::uniform_int_distribution<int> cls(0, 3), off(1, 3);
  for (int i = 0; i < n; ++i) {
    const int e = cls(rng);
    const int d = (e + off(rng)) % 4;
    dataset::LabeledUtterance u;
    u.id = "r" + std::to_string(i);
    u.group_id = "g";
    const auto fe = to_raw(static_cast<Emotion>(e));
    u.experts = {{u.id, "E1", fe}, {u.id, "E2", fe}, {u.id, "E3", to_raw(static_cast<Emotion>(d))}};
    u.final_label = fe;
    u.agreement_count = 2;
    c.utterances.push_back(u);
    dissent.push_back(d);
  }
  return c;
}

TEST(ResidualTest, ErrorsFollowingTheDissentCoincideFully) {
  std::mt19937_64 rng(3);
  std::vector<int> dissent;
  const auto c = single_dissent_corpus(rng, 200, dissent);
  const auto r = residual_accuracy(c, dissent);
  for (const auto& row : r) {
    EXPECT_EQ(row.considered, row.single_dissent);
    EXPECT_DOUBLE_EQ(*row.coincidence_rate(), 1.0);
  }
}

TEST(ResidualTest, UniformErrorsApproachOneThird) {
  std::mt19937_64 rng(4);
  std::vector<int> dissent;
  const auto c = single_dissent_corpus(rng, 10000, dissent);
  std::uniform_int_distribution<int> off(1, 3);
  std::vector<int> pred;
  for (const auto& u : c.utterances) pred.push_back((static_cast<int>(*u.emotion()) + off(rng)) % 4);
  int errors = 0, coincident = 0;
  for (const auto& row : residual_accuracy(c, pred)) {
    EXPECT_NEAR(*row.coincidence_rate(), kRandomCoincidence, 0.02);
    errors += row.errors;
    coincident += row.coincident;
  }
  EXPECT_EQ(errors, 10000);
  EXPECT_NEAR(static_cast<double>(coincident) / errors, kRandomCoincidence, 0.02);
}

TEST(MethodTest, ParseNames) {
  EXPECT_EQ(parse_method("ctc"), Method::kCtc);
  EXPECT_EQ(parse_method("onelabel"), Method::kOneLabel);
  EXPECT_EQ(method_name(Method::kFramewise), "framewise");
  EXPECT_EQ(code_of([] { parse_method("svm"); }), ErrorCode::kBadArgument);
}

TEST(ComparisonTest, ShapeAndInvariantsOnSyntheticCorpus) {
  dataset::SyntheticConfig sc;
  sc.n_per_class = 10;
  sc.max_duration_s = 2.0;
  const auto syn = dataset::generate_synthetic_corpus(sc);
  const auto seqs = features::extract_corpus(syn.corpus, features::FrameConfig{}, 1);
  ComparisonConfig cfg;
  cfg.network.hidden_size = 6;
  cfg.network.unified_len = 24;
  cfg.training.epochs = 2;
  cfg.forest.n_trees = 5;
  cfg.seed = 3;
  const auto report = run_comparison(syn.corpus, seqs, cfg);
  ASSERT_EQ(report.methods.size(), 4u);
  ASSERT_EQ(report.fold_groups.size(), 5u);
  for (const auto& m : report.methods) {
    ASSERT_EQ(m.folds.size(), 5u);
    double lo = 1.0, hi = 0.0, lo_c = 1.0, hi_c = 0.0;
    std::size_t tested = 0;
    for (const auto& f : m.folds) {
      lo = std::min(lo, f.overall_accuracy);
      hi = std::max(hi, f.overall_accuracy);
      lo_c = std::min(lo_c, f.mean_class_accuracy);
      hi_c = std::max(hi_c, f.mean_class_accuracy);
      tested += f.n_test;
    }
    EXPECT_EQ(tested, syn.corpus.size());
    EXPECT_GE(m.overall_accuracy, lo - 1e-12);
    EXPECT_LE(m.overall_accuracy, hi + 1e-12);
    EXPECT_GE(m.mean_class_accuracy, lo_c - 1e-12);
    EXPECT_LE(m.mean_class_accuracy, hi_c + 1e-12);
    for (int p : m.predictions) EXPECT_TRUE(p >= 0 && p < 4);
    long trace = 0;
    for (int c = 0; c < 4; ++c) trace += m.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    EXPECT_NEAR(static_cast<double>(trace) / static_cast<double>(syn.corpus.size()), m.pooled_overall, 1e-15);
  }
  const auto& dummy = report.methods[0];
  EXPECT_EQ(dummy.method, Method::kDummy);
  for (const auto& f : dummy.folds) EXPECT_DOUBLE_EQ(f.mean_class_accuracy, 0.25);

  test::TempDir dir("report");
  write_report(dir.path(), report, syn.corpus);
  const auto table = test::slurp(dir / "table1.csv");
  EXPECT_EQ(table.substr(0, table.find('\n')), "method,overall_accuracy,mean_class_accuracy");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 5);
  for (const char* f : {"folds.csv", "confusion_dummy.csv", "confusion_framewise.csv", "confusion_onelabel.csv",
                        "confusion_ctc.csv", "confidence_errors.csv", "residual.csv", "frame_probs_framewise.csv",
                        "frame_probs_ctc.csv", "report.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  const auto confusion_csv = test::slurp(dir / "confusion_ctc.csv");
  EXPECT_EQ(confusion_csv.substr(0, confusion_csv.find('\n')), "truth,anger,excitement,neutral,sadness");
  const auto json = nlohmann::json::parse(test::slurp(dir / "report.json"));
  EXPECT_EQ(json["methods"].size(), 4u);
  EXPECT_EQ(json["methods"][3]["method"], "ctc");
}

TEST(ComparisonTest, ParallelFoldsMatchSerial) {
  dataset::SyntheticConfig sc;
  sc.n_per_class = 5;
  sc.max_duration_s = 1.5;
  const auto syn = dataset::generate_synthetic_corpus(sc);
  const auto seqs = features::extract_corpus(syn.corpus, features::FrameConfig{}, 1);
  ComparisonConfig cfg;
  cfg.methods = {Method::kFramewise, Method::kCtc};
  cfg.folds = 3;  // five speakers, three pairs
  cfg.network.hidden_size = 4;
  cfg.network.unified_len = 16;
  cfg.training.epochs = 2;
  cfg.forest.n_trees = 3;
  const auto serial = run_comparison(syn.corpus, seqs, cfg);
  cfg.workers = 3;
  const auto parallel = run_comparison(syn.corpus, seqs, cfg);
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_EQ(serial.methods[m].predictions, parallel.methods[m].predictions);
    EXPECT_EQ(serial.methods[m].overall_accuracy, parallel.methods[m].overall_accuracy);
  }
}

}  // namespace
}  // namespace emoctc::eval
