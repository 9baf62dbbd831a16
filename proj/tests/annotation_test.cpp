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

#include "emoctc/annotation.hpp"

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "test_util.hpp"

namespace emoctc::annotation {
namespace {

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

// per_class utterances of each emotion, ids "<emotion>_<i>".
dataset::Corpus small_corpus(int per_class = 5) {
  dataset::Corpus c;
  for (int e = 0; e < kNumEmotions; ++e) {
    for (int i = 0; i < per_class; ++i) {
      dataset::LabeledUtterance u;
      u.id = std::string(kEmotionNames[static_cast<std::size_t>(e)]) + "_" + std::to_string(i);
      u.group_id = "g";
      u.final_label = to_raw(static_cast<Emotion>(e));
      c.utterances.push_back(u);
    }
  }
  return c;
}

ServiceConfig with_log(const std::filesystem::path& p, uint64_t seed = 1) {
  ServiceConfig cfg;
  cfg.seed = seed;
  cfg.log_path = p;
  return cfg;
}

// Answers every item served to the session with its true label.
int answer_all(AnnotationService& svc, const std::string& session) {
  int n = 0;
  for (auto item = svc.next(session); !item.done; item = svc.next(session)) {
    svc.submit(session, item.utterance_id, svc.truth(item.utterance_id));
    ++n;
  }
  return n;
}

std::vector<nlohmann::json> log_records(const std::filesystem::path& p, const std::string& type) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (j["type"] == type) out.push_back(j);
  }
  return out;
}

TEST(WarmupTest, EightItemsTwoPerEmotionOutsideMainPool) {
  AnnotationService svc(small_corpus(), ServiceConfig{});
  const auto& w = svc.warmup_pool();
  ASSERT_EQ(w.size(), 8u);
  std::array<int, 4> per{};
  for (const auto& id : w) ++per[static_cast<std::size_t>(svc.truth(id))];
  EXPECT_EQ(per, (std::array<int, 4>{2, 2, 2, 2}));
  EXPECT_EQ(svc.main_pool().size(), 12u);
  for (const auto& id : w) {
    EXPECT_EQ(std::count(svc.main_pool().begin(), svc.main_pool().end(), id), 0);
  }
  AnnotationService same(small_corpus(), ServiceConfig{});
  EXPECT_EQ(same.warmup_pool(), w);
  ServiceConfig other;
  other.seed = 2;
  EXPECT_NE(AnnotationService(small_corpus(), other).warmup_pool(), w);
  EXPECT_THROW(AnnotationService(small_corpus(1), ServiceConfig{}), Error);
}

TEST(SessionTest, AssessorsGetDistinctSessionsAndSameWarmup) {
  AnnotationService svc(small_corpus(), ServiceConfig{});
  const auto a = svc.start_session("alice");
  const auto b = svc.start_session("bob");
  EXPECT_NE(a.session_id, b.session_id);
  EXPECT_EQ(a.phase, Phase::kWarmup);
  EXPECT_EQ(svc.start_session("alice").session_id, a.session_id);
  std::set<std::string> wa, wb;
  for (int i = 0; i < 8; ++i) {
    const auto ia = svc.next(a.session_id);
    const auto ib = svc.next(b.session_id);
    EXPECT_TRUE(ia.warmup);
    EXPECT_EQ(ia.warmup_index, i + 1);
    wa.insert(ia.utterance_id);
    wb.insert(ib.utterance_id);
    svc.submit(a.session_id, ia.utterance_id, Emotion::kNeutral);
    svc.submit(b.session_id, ib.utterance_id, Emotion::kNeutral);
  }
  EXPECT_EQ(wa, wb);
  EXPECT_EQ(wa, std::set<std::string>(svc.warmup_pool().begin(), svc.warmup_pool().end()));
  EXPECT_EQ(svc.session(a.session_id).phase, Phase::kMain);
  EXPECT_EQ(code_of([&] { svc.start_session(""); }), ErrorCode::kBadArgument);
}

TEST(NextTest, WarmupThenMainThenDone) {
  AnnotationService svc(small_corpus(), ServiceConfig{});
  const auto s = svc.start_session("a").session_id;
  std::vector<bool> warmup_flags;
  std::set<std::string> seen;
  for (auto item = svc.next(s); !item.done; item = svc.next(s)) {
    EXPECT_EQ(svc.next(s).utterance_id, item.utterance_id);  // pending item is re-served
    EXPECT_TRUE(seen.insert(item.utterance_id).second);
    warmup_flags.push_back(item.warmup);
    svc.submit(s, item.utterance_id, Emotion::kAnger);
  }
  ASSERT_EQ(warmup_flags.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(warmup_flags[i], i < 8);
  EXPECT_TRUE(svc.next(s).done);
  EXPECT_EQ(svc.session(s).phase, Phase::kDone);
  EXPECT_EQ(code_of([&] { svc.next("nope"); }), ErrorCode::kUnknownSession);
}

TEST(NextTest, LeastCoveredItemsFirst) {
  AnnotationService svc(small_corpus(6), ServiceConfig{});  // 16 main items
  const auto a = svc.start_session("a").session_id;
  const auto b = svc.start_session("b").session_id;
  const auto c = svc.start_session("c").session_id;
  answer_all(svc, a);
  // b must first cover what nobody else has, which is nothing: every main
  // item now has coverage 1, so b sees them all; c then sees items covered
  // by a only before those covered by a and b.
  for (int i = 0; i < 8 + 5; ++i) {
    const auto item = svc.next(b);
    svc.submit(b, item.utterance_id, Emotion::kSadness);
  }
  const auto before = svc.stats().coverage;
  for (int i = 0; i < 8; ++i) svc.submit(c, svc.next(c).utterance_id, Emotion::kSadness);
  for (int i = 0; i < 11; ++i) {
    const auto item = svc.next(c);
    EXPECT_EQ(before.at(item.utterance_id), 1) << i;
    svc.submit(c, item.utterance_id, Emotion::kSadness);
  }
  const auto item = svc.next(c);
  EXPECT_EQ(before.at(item.utterance_id), 2);
  const auto st = svc.stats();
  EXPECT_EQ(st.min_coverage, 2);
  EXPECT_EQ(st.covered_twice, 16);
}

TEST(SubmitTest, FeedbackAndErrors) {
  AnnotationService svc(small_corpus(), ServiceConfig{});
  const auto s = svc.start_session("a").session_id;
  const auto item = svc.next(s);
  const auto truth = svc.truth(item.utterance_id);
  const auto r = svc.submit(s, item.utterance_id, truth);
  EXPECT_EQ(r.correct_label, truth);
  EXPECT_EQ(r.answer, truth);
  EXPECT_TRUE(r.warmup);
  EXPECT_EQ(code_of([&] { svc.submit(s, item.utterance_id, truth); }), ErrorCode::kDuplicateAnswer);
  EXPECT_EQ(svc.label_count(), 1u);
  const auto next = svc.next(s);
  const std::string other = next.utterance_id == "anger_0" ? "anger_1" : "anger_0";
  EXPECT_EQ(code_of([&] { svc.submit(s, other, truth); }), ErrorCode::kNotServed);
  EXPECT_EQ(code_of([&] { svc.submit("nope", next.utterance_id, truth); }), ErrorCode::kUnknownSession);
  // The answer need not match; feedback still carries the corpus label.
  const auto wrong = static_cast<Emotion>((static_cast<int>(svc.truth(next.utterance_id)) + 1) % 4);
  const auto r2 = svc.submit(s, next.utterance_id, wrong);
  EXPECT_EQ(r2.correct_label, svc.truth(next.utterance_id));
  EXPECT_EQ(r2.answer, wrong);
}

TEST(SubmitTest, IdempotencyKeyReplaysTheResponse) {
  AnnotationService svc(small_corpus(), ServiceConfig{});
  const auto s = svc.start_session("a").session_id;
  const auto item = svc.next(s);
  const auto r1 = svc.submit(s, item.utterance_id, Emotion::kNeutral, "k1");
  const auto r2 = svc.submit(s, item.utterance_id, Emotion::kNeutral, "k1");
  EXPECT_FALSE(r1.replayed);
  EXPECT_TRUE(r2.replayed);
  EXPECT_EQ(r2.correct_label, r1.correct_label);
  EXPECT_EQ(svc.label_count(), 1u);
  EXPECT_EQ(code_of([&] { svc.submit(s, "anger_0", Emotion::kNeutral, "k1"); }), ErrorCode::kBadArgument);
}

TEST(StatsTest, NoDataAndSingleLabel) {
  AnnotationService svc(small_corpus(), ServiceConfig{});
  EXPECT_EQ(code_of([&] { svc.stats(); }), ErrorCode::kNoData);
  const auto s = svc.start_session("a").session_id;
  for (int i = 0; i < 8; ++i) svc.submit(s, svc.next(s).utterance_id, Emotion::kAnger);
  EXPECT_EQ(code_of([&] { svc.stats(); }), ErrorCode::kNoData);  // warmup only
  const auto item = svc.next(s);
  svc.submit(s, item.utterance_id, svc.truth(item.utterance_id));
  const auto st = svc.stats();
  EXPECT_EQ(st.labels, 1);
  EXPECT_DOUBLE_EQ(st.overall_accuracy, 1.0);
  EXPECT_EQ(code_of([&] { svc.stats("b"); }), ErrorCode::kNoData);
}

TEST(StatsTest, HandFixtureOfTwelveLabels) {
  // Answers by true class, in serving order within the class.
  const std::map<Emotion, std::vector<Emotion>> script = {
      {Emotion::kAnger, {Emotion::kAnger, Emotion::kAnger, Emotion::kNeutral}},
      {Emotion::kExcitement, {Emotion::kExcitement, Emotion::kSadness, Emotion::kExcitement}},
      {Emotion::kNeutral, {Emotion::kNeutral, Emotion::kNeutral, Emotion::kNeutral}},
      {Emotion::kSadness, {Emotion::kNeutral, Emotion::kSadness, Emotion::kAnger}},
  };
  AnnotationService svc(small_corpus(), ServiceConfig{});
  const auto s = svc.start_session("a").session_id;
  for (int i = 0; i < 8; ++i) svc.submit(s, svc.next(s).utterance_id, Emotion::kAnger);
  std::map<Emotion, std::size_t> used;
  for (auto item = svc.next(s); !item.done; item = svc.next(s)) {
    const auto t = svc.truth(item.utterance_id);
    svc.submit(s, item.utterance_id, script.at(t)[used[t]++]);
  }
  const auto st = svc.stats();
  EXPECT_EQ(st.labels, 12);
  const eval::Confusion expected{{2, 0, 1, 0}, {0, 2, 0, 1}, {0, 0, 3, 0}, {1, 0, 1, 1}};
  EXPECT_EQ(st.confusion, expected);
  EXPECT_NEAR(st.overall_accuracy, 8.0 / 12.0, 1e-15);
  EXPECT_NEAR(st.mean_class_accuracy, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(st.min_coverage, 1);
}

TEST(PersistenceTest, RestartResumesSessions) {
  test::TempDir dir("annot");
  const auto log = dir / "labels.jsonl";
  std::string sa, pending;
  std::set<std::string> answered;
  {
    AnnotationService svc(small_corpus(), with_log(log));
    sa = svc.start_session("a").session_id;
    for (int i = 0; i < 10; ++i) {
      const auto item = svc.next(sa);
      answered.insert(item.utterance_id);
      svc.submit(sa, item.utterance_id, Emotion::kNeutral);
    }
    pending = svc.next(sa).utterance_id;
  }
  AnnotationService svc(small_corpus(), with_log(log));
  EXPECT_EQ(svc.start_session("a").session_id, sa);
  const auto info = svc.session(sa);
  EXPECT_EQ(info.warmup_answered, 8);
  EXPECT_EQ(info.main_answered, 2);
  EXPECT_EQ(svc.label_count(), 10u);
  EXPECT_EQ(svc.next(sa).utterance_id, pending);
  svc.submit(sa, pending, Emotion::kNeutral);
  for (auto item = svc.next(sa); !item.done; item = svc.next(sa)) {
    EXPECT_FALSE(answered.count(item.utterance_id)) << item.utterance_id;
    svc.submit(sa, item.utterance_id, Emotion::kNeutral);
  }
  EXPECT_EQ(log_records(log, "label").size(), 20u);
  EXPECT_EQ(log_records(log, "session").size(), 1u);
}

TEST(PersistenceTest, TornTrailingLineIsDropped) {
  test::TempDir dir("annot");
  const auto log = dir / "labels.jsonl";
  std::string s;
  {
    AnnotationService svc(small_corpus(), with_log(log));
    s = svc.start_session("a").session_id;
    svc.submit(s, svc.next(s).utterance_id, Emotion::kAnger);
  }
  const auto intact = test::slurp(log);
  {
    std::ofstream out(log, std::ios::app);
    out << R"({"type":"label","session":")" << s << R"(","utter)";
  }
  {
    AnnotationService svc(small_corpus(), with_log(log));
    EXPECT_EQ(svc.label_count(), 1u);
  }
  EXPECT_EQ(test::slurp(log), intact);
}

TEST(PersistenceTest, CorruptRecordIsAnError) {
  test::TempDir dir("annot");
  const auto log = dir / "labels.jsonl";
  {
    std::ofstream out(log);
    out << "not json\n" << R"({"type":"session","session":"s1","assessor":"a"})" << "\n";
  }
  EXPECT_EQ(code_of([&] { AnnotationService(small_corpus(), with_log(log)); }), ErrorCode::kParseError);
}

struct Crash {};

TEST(FaultTest, CrashAfterAppendLeavesExactlyOneRecord) {
  test::TempDir dir("annot");
  const auto log = dir / "labels.jsonl";
  std::string s, u;
  Emotion truth{};
  {
    auto cfg = with_log(log);
    cfg.fault_hook = [](FaultPoint p) {
      if (p == FaultPoint::kAfterAppend) throw Crash{};
    };
    AnnotationService svc(small_corpus(), cfg);
    s = svc.start_session("a").session_id;
    u = svc.next(s).utterance_id;
    truth = svc.truth(u);
    EXPECT_THROW(svc.submit(s, u, Emotion::kSadness, "key-1"), Crash);
  }
  AnnotationService svc(small_corpus(), with_log(log));
  EXPECT_EQ(svc.label_count(), 1u);
  const auto retry = svc.submit(s, u, Emotion::kSadness, "key-1");
  EXPECT_TRUE(retry.replayed);
  EXPECT_EQ(retry.correct_label, truth);
  EXPECT_EQ(code_of([&] { svc.submit(s, u, Emotion::kSadness); }), ErrorCode::kDuplicateAnswer);
  EXPECT_EQ(log_records(log, "label").size(), 1u);
}

TEST(FaultTest, CrashBeforeAppendLeavesNoRecord) {
  test::TempDir dir("annot");
  const auto log = dir / "labels.jsonl";
  std::string s, u;
  {
    auto cfg = with_log(log);
    cfg.fault_hook = [](FaultPoint p) {
      if (p == FaultPoint::kBeforeAppend) throw Crash{};
    };
    AnnotationService svc(small_corpus(), cfg);
    s = svc.start_session("a").session_id;
    u = svc.next(s).utterance_id;
    EXPECT_THROW(svc.submit(s, u, Emotion::kSadness, "key-1"), Crash);
  }
  EXPECT_TRUE(log_records(log, "label").empty());
  AnnotationService svc(small_corpus(), with_log(log));
  EXPECT_EQ(svc.next(s).utterance_id, u);
  EXPECT_FALSE(svc.submit(s, u, Emotion::kSadness, "key-1").replayed);
  EXPECT_EQ(log_records(log, "label").size(), 1u);
}

// Random interleavings of several assessors with crashes at both fault
// points and restarts from the log.
TEST(FaultTest, RandomInterleavingsKeepInvariants) {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    test::TempDir dir("annot");
    const auto log = dir / "labels.jsonl";
    std::mt19937_64 rng(trial);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double crash_rate = 0.0;
    auto make = [&] {
      auto cfg = with_log(log, 7);
      cfg.fault_hook = [&](FaultPoint) {
        if (u01(rng) < crash_rate) throw Crash{};
      };
      return std::make_unique<AnnotationService>(small_corpus(), cfg);
    };
    auto svc = make();
    const std::vector<std::string> assessors{"a", "b", "c", "d"};
    // assessor -> (key, utterance) of an answer whose response was lost
    std::map<std::string, std::pair<std::string, std::string>> in_flight;
    std::map<std::string, int> main_served_early;
    for (int step = 0; step < 300; ++step) {
      crash_rate = 0.15;
      const auto& who = assessors[rng() % assessors.size()];
      const auto s = svc->start_session(who).session_id;
      std::pair<std::string, std::string> attempt;
      if (auto it = in_flight.find(who); it != in_flight.end()) {
        attempt = it->second;  // the client retries before asking for more
      } else {
        const auto info = svc->session(s);
        const auto item = svc->next(s);
        if (item.done) continue;
        if (!item.warmup && info.warmup_answered < kWarmupSize) ++main_served_early[who];
        attempt = {who + "-" + std::to_string(step), item.utterance_id};
      }
      try {
        svc->submit(s, attempt.second, static_cast<Emotion>(rng() % 4), attempt.first);
        in_flight.erase(who);
      } catch (const Crash&) {
        in_flight[who] = attempt;
        crash_rate = 0.0;
        svc.reset();
        svc = make();
      }
    }
    crash_rate = 0.0;
    EXPECT_TRUE(main_served_early.empty());
    const auto labels = log_records(log, "label");
    std::set<std::pair<std::string, std::string>> pairs;
    int main_labels = 0;
    for (const auto& l : labels) {
      EXPECT_TRUE(pairs.emplace(l["assessor"], l["utterance"]).second) << l.dump();
      const bool warm = std::count(svc->warmup_pool().begin(), svc->warmup_pool().end(), l["utterance"]) > 0;
      EXPECT_EQ(l["warmup"].get<bool>(), warm);
      main_labels += !warm;
    }
    if (main_labels > 0) {
      const auto st = svc->stats();
      EXPECT_EQ(st.labels, main_labels);
      long total = 0;
      for (const auto& row : st.confusion) {
        for (long v : row) total += v;
      }
      EXPECT_EQ(total, main_labels);
    }
  }
}

TEST(ConcurrencyTest, ParallelSessionsRecordEveryAnswerOnce) {
  test::TempDir dir("annot");
  const auto log = dir / "labels.jsonl";
  AnnotationService svc(small_corpus(), with_log(log));
  std::vector<std::thread> pool;
  std::atomic<int> stats_calls{0};
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&, t] {
      const auto s = svc.start_session("assessor" + std::to_string(t)).session_id;
      answer_all(svc, s);
    });
  }
  pool.emplace_back([&] {
    for (int i = 0; i < 200; ++i) {
      try {
        const auto st = svc.stats();
        EXPECT_LE(st.labels, 48);
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kNoData);
      }
      ++stats_calls;
    }
  });
  for (auto& th : pool) th.join();
  EXPECT_EQ(stats_calls.load(), 200);
  EXPECT_EQ(log_records(log, "label").size(), 80u);
  const auto st = svc.stats();
  EXPECT_EQ(st.labels, 48);
  EXPECT_DOUBLE_EQ(st.overall_accuracy, 1.0);
  EXPECT_EQ(st.min_coverage, 4);
}

}  // namespace
}  // namespace emoctc::annotation
