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

// Backend of the human listening experiment. Every assessor first labels
// the same 8 warmup utterances (2 per emotion), then the main pool, where
// the utterance with the fewest assessors so far is served first. Each
// answer is answered with the corpus label as feedback.
//
// State is rebuilt from an append-only JSON-lines log with three record
// types: "session", "serve" and "label". A record is flushed and fsync'ed
// before the call that produced it returns. A torn final line (crash while
// writing) is dropped on replay.

#ifndef EMOCTC_ANNOTATION_HPP_
#define EMOCTC_ANNOTATION_HPP_

#include "emoctc/common.hpp"
#include "emoctc/dataset.hpp"
#include "emoctc/eval.hpp"

#include "json.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace emoctc::annotation {

inline constexpr int kWarmupPerEmotion = 2;
inline constexpr int kWarmupSize = kWarmupPerEmotion * kNumEmotions;

enum class FaultPoint { kBeforeAppend, kAfterAppend };

struct ServiceConfig {
  uint64_t seed = 1;
  std::filesystem::path log_path;  // empty: in-memory only
  // Called around every label append; throwing from it simulates a crash.
  std::function<void(FaultPoint)> fault_hook;
};

enum class Phase { kWarmup, kMain, kDone };

inline std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kWarmup: return "warmup";
    case Phase::kMain: return "main";
    case Phase::kDone: return "done";
  }
  return "done";
}

struct SessionInfo {
  std::string session_id;
  std::string assessor;
  Phase phase = Phase::kWarmup;
  int warmup_answered = 0;
  int main_answered = 0;
  int main_total = 0;
};

struct NextItem {
  bool done = false;
  std::string utterance_id;
  bool warmup = false;
  int warmup_index = 0;  // 1-based position within the warmup block
};

struct LabelResult {
  std::string utterance_id;
  Emotion answer = Emotion::kAnger;
  Emotion correct_label = Emotion::kAnger;
  bool warmup = false;
  bool replayed = false;  // idempotent retry of an already-recorded label
};

struct HumanStats {
  int labels = 0;
  double overall_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  eval::Confusion confusion;  // [truth][answer]
  std::map<std::string, int> coverage;  // main-pool utterance -> assessors
  int min_coverage = 0;
  int covered_twice = 0;  // main-pool utterances with >= 2 assessors
};

class AnnotationService {
 public:
  AnnotationService(const dataset::Corpus& corpus, ServiceConfig config) : config_(std::move(config)) {
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
      const auto& u = corpus.utterances[i];
      const auto e = u.emotion();
      if (!e) throw Error(ErrorCode::kBadArgument, "utterance " + u.id + " is outside the 4 emotions");
      if (!truth_.emplace(u.id, *e).second) throw Error(ErrorCode::kBadArgument, "duplicate utterance id " + u.id);
    }
    choose_warmup();
    if (!config_.log_path.empty()) replay();
  }

  ~AnnotationService() {
    if (fd_ >= 0) ::close(fd_);
  }
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  const std::vector<std::string>& warmup_pool() const { return warmup_; }
  const std::vector<std::string>& main_pool() const { return main_; }
  bool has_utterance(const std::string& id) const { return truth_.count(id) > 0; }

  // Opens a session for the assessor, or resumes the assessor's existing one.
  SessionInfo start_session(const std::string& assessor) {
    if (assessor.empty()) throw Error(ErrorCode::kBadArgument, "assessor id must be non-empty");
    std::unique_lock lock(mutex_);
    if (auto it = by_assessor_.find(assessor); it != by_assessor_.end()) return info(sessions_.at(it->second));
    const std::string id = "s" + std::to_string(sessions_.size() + 1) + "-" + hex(fnv1a(assessor) ^ config_.seed);
    append({{"type", "session"}, {"session", id}, {"assessor", assessor}, {"ts", now_ms()}});
    return info(add_session(id, assessor));
  }

  SessionInfo session(const std::string& session_id) const {
    std::shared_lock lock(mutex_);
    return info(find(session_id));
  }

  // The pending item if one was served and not answered, otherwise the next
  // warmup item, otherwise the least-covered unanswered main item.
  NextItem next(const std::string& session_id) {
    std::unique_lock lock(mutex_);
    auto& s = find(session_id);
    if (!s.pending) {
      const auto pick = choose(s);
      if (!pick) return {true, "", false, 0};
      append({{"type", "serve"}, {"session", s.id}, {"utterance", *pick}, {"ts", now_ms()}});
      s.pending = *pick;
    }
    return item(s, *s.pending);
  }

  LabelResult submit(const std::string& session_id, const std::string& utterance_id, Emotion answer,
                     const std::string& idempotency_key = "") {
    std::unique_lock lock(mutex_);
    auto& s = find(session_id);
    if (!idempotency_key.empty()) {
      if (auto it = s.keys.find(idempotency_key); it != s.keys.end()) {
        if (it->second.utterance_id != utterance_id) {
          throw Error(ErrorCode::kBadArgument, "idempotency key reused for a different utterance");
        }
        auto r = it->second;
        r.replayed = true;
        return r;
      }
    }
    if (s.answered.count(utterance_id)) {
      throw Error(ErrorCode::kDuplicateAnswer, "session " + s.id + " already answered " + utterance_id);
    }
    if (s.pending != utterance_id) {
      throw Error(ErrorCode::kNotServed, utterance_id + " is not the item served to session " + s.id);
    }
    const bool warmup = warmup_set_.count(utterance_id) > 0;
    if (config_.fault_hook) config_.fault_hook(FaultPoint::kBeforeAppend);
    nlohmann::json rec = {{"type", "label"},
                          {"session", s.id},
                          {"assessor", s.assessor},
                          {"utterance", utterance_id},
                          {"answer", emotion_name(answer)},
                          {"warmup", warmup},
                          {"ts", now_ms()}};
    if (!idempotency_key.empty()) rec["key"] = idempotency_key;
    append(rec);
    const auto result = record_label(s, utterance_id, answer, idempotency_key);
    if (config_.fault_hook) config_.fault_hook(FaultPoint::kAfterAppend);
    return result;
  }

  // Statistics over main-phase labels, optionally for one assessor.
  HumanStats stats(const std::string& assessor = "") const {
    std::shared_lock lock(mutex_);
    std::vector<int> truth, answers;
    for (const auto& l : labels_) {
      if (l.warmup || (!assessor.empty() && l.assessor != assessor)) continue;
      truth.push_back(static_cast<int>(truth_.at(l.utterance)));
      answers.push_back(static_cast<int>(l.answer));
    }
    if (truth.empty()) throw Error(ErrorCode::kNoData, "no main-phase labels recorded");
    HumanStats st;
    st.labels = static_cast<int>(truth.size());
    st.overall_accuracy = eval::overall_accuracy(truth, answers);
    st.mean_class_accuracy = eval::mean_class_accuracy(truth, answers);
    st.confusion = eval::confusion(truth, answers);
    for (const auto& id : main_) st.coverage[id] = static_cast<int>(coverage_.count(id) ? coverage_.at(id).size() : 0);
    st.min_coverage = std::numeric_limits<int>::max();
    for (const auto& [id, n] : st.coverage) {
      st.min_coverage = std::min(st.min_coverage, n);
      st.covered_twice += n >= 2;
    }
    if (st.coverage.empty()) st.min_coverage = 0;
    return st;
  }

  // Number of label records, warmup included.
  std::size_t label_count() const {
    std::shared_lock lock(mutex_);
    return labels_.size();
  }

  Emotion truth(const std::string& utterance_id) const {
    auto it = truth_.find(utterance_id);
    if (it == truth_.end()) throw Error(ErrorCode::kBadArgument, "unknown utterance " + utterance_id);
    return it->second;
  }

 private:
  struct Label {
    std::string session, assessor, utterance;
    Emotion answer;
    bool warmup;
  };

  struct Session {
    std::string id, assessor;
    std::vector<std::string> warmup_order;
    std::map<std::string, std::size_t> main_rank;  // personal tie-break order
    std::set<std::string> answered;
    std::optional<std::string> pending;
    std::map<std::string, LabelResult> keys;
    int warmup_answered = 0;
    int main_answered = 0;
  };

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  static std::string hex(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf, 8);
  }

  static int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

  static std::string emotion_name(Emotion e) { return std::string(kEmotionNames[static_cast<std::size_t>(e)]); }

  void choose_warmup() {
    std::array<std::vector<std::string>, kNumEmotions> by_class;
    for (const auto& [id, e] : truth_) by_class[static_cast<std::size_t>(e)].push_back(id);  // sorted by id
    std::mt19937_64 rng(config_.seed);
    for (auto& ids : by_class) {
      if (static_cast<int>(ids.size()) < kWarmupPerEmotion) {
        throw Error(ErrorCode::kBadArgument, "every emotion needs at least 2 utterances for the warmup");
      }
      std::shuffle(ids.begin(), ids.end(), rng);
      for (int i = 0; i < kWarmupPerEmotion; ++i) {
        warmup_.push_back(ids[static_cast<std::size_t>(i)]);
        warmup_set_.insert(ids[static_cast<std::size_t>(i)]);
      }
    }
    for (const auto& [id, e] : truth_) {
      if (!warmup_set_.count(id)) main_.push_back(id);
    }
  }

  Session& add_session(const std::string& id, const std::string& assessor) {
    Session s;
    s.id = id;
    s.assessor = assessor;
    std::mt19937_64 rng(config_.seed ^ fnv1a(assessor));
    s.warmup_order = warmup_;
    std::shuffle(s.warmup_order.begin(), s.warmup_order.end(), rng);
    auto order = main_;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) s.main_rank[order[i]] = i;
    by_assessor_[assessor] = id;
    return sessions_[id] = std::move(s);
  }

  Session& find(const std::string& id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::kUnknownSession, "unknown session '" + id + "'");
    return it->second;
  }

  const Session& find(const std::string& id) const { return const_cast<AnnotationService*>(this)->find(id); }

  std::optional<std::string> choose(const Session& s) const {
    for (const auto& id : s.warmup_order) {
      if (!s.answered.count(id)) return id;
    }
    std::optional<std::string> best;
    std::pair<std::size_t, std::size_t> best_key{0, 0};
    for (const auto& [id, rank] : s.main_rank) {
      if (s.answered.count(id)) continue;
      const std::size_t cov = coverage_.count(id) ? coverage_.at(id).size() : 0;
      const std::pair<std::size_t, std::size_t> key{cov, rank};
      if (!best || key < best_key) {
        best = id;
        best_key = key;
      }
    }
    return best;
  }

  NextItem item(const Session& s, const std::string& id) const {
    NextItem n;
    n.utterance_id = id;
    n.warmup = warmup_set_.count(id) > 0;
    if (n.warmup) n.warmup_index = s.warmup_answered + 1;
    return n;
  }

  SessionInfo info(const Session& s) const {
    SessionInfo i;
    i.session_id = s.id;
    i.assessor = s.assessor;
    i.warmup_answered = s.warmup_answered;
    i.main_answered = s.main_answered;
    i.main_total = static_cast<int>(main_.size());
    if (s.warmup_answered < kWarmupSize) {
      i.phase = Phase::kWarmup;
    } else if (s.main_answered < i.main_total) {
      i.phase = Phase::kMain;
    } else {
      i.phase = Phase::kDone;
    }
    return i;
  }

  LabelResult record_label(Session& s, const std::string& utterance, Emotion answer, const std::string& key) {
    const bool warmup = warmup_set_.count(utterance) > 0;
    labels_.push_back({s.id, s.assessor, utterance, answer, warmup});
    s.answered.insert(utterance);
    if (s.pending == utterance) s.pending.reset();
    (warmup ? s.warmup_answered : s.main_answered) += 1;
    if (!warmup) coverage_[utterance].insert(s.assessor);
    LabelResult r{utterance, answer, truth_.at(utterance), warmup, false};
    if (!key.empty()) s.keys[key] = r;
    return r;
  }

  void append(const nlohmann::json& record) {
    if (config_.log_path.empty()) return;
    const std::string line = record.dump() + "\n";
    std::size_t done = 0;
    while (done < line.size()) {
      const auto n = ::write(fd_, line.data() + done, line.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::kIoError, "append to " + config_.log_path.string() + " failed");
      }
      done += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw Error(ErrorCode::kIoError, "fsync of " + config_.log_path.string() + " failed");
  }

  void replay() {
    std::uintmax_t good = 0;
    if (std::filesystem::exists(config_.log_path)) {
      std::ifstream in(config_.log_path, std::ios::binary);
      std::string line;
      int lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        const bool complete = !in.eof();
        nlohmann::json rec;
        try {
          rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
          if (!complete) break;  // torn final line
          throw Error(ErrorCode::kParseError, config_.log_path.string() + ":" + std::to_string(lineno) + ": bad record");
        }
        if (!complete) break;  // parsable but unterminated: never acknowledged
        apply(rec, lineno);
        good += line.size() + 1;
      }
    }
    fd_ = ::open(config_.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::kIoError, "cannot open " + config_.log_path.string());
    if (::ftruncate(fd_, static_cast<off_t>(good)) != 0) {
      throw Error(ErrorCode::kIoError, "cannot truncate " + config_.log_path.string());
    }
  }

  void apply(const nlohmann::json& rec, int lineno) {
    const auto where = [&] { return config_.log_path.string() + ":" + std::to_string(lineno); };
    try {
      const auto type = rec.at("type").get<std::string>();
      if (type == "session") {
        const auto id = rec.at("session").get<std::string>();
        const auto assessor = rec.at("assessor").get<std::string>();
        if (sessions_.count(id) || by_assessor_.count(assessor)) throw Error(ErrorCode::kParseError, where() + ": duplicate session");
        add_session(id, assessor);
      } else if (type == "serve") {
        auto& s = find(rec.at("session").get<std::string>());
        const auto u = rec.at("utterance").get<std::string>();
        if (!truth_.count(u)) throw Error(ErrorCode::kParseError, where() + ": unknown utterance " + u);
        s.pending = u;
      } else if (type == "label") {
        auto& s = find(rec.at("session").get<std::string>());
        const auto u = rec.at("utterance").get<std::string>();
        const auto answer = parse_emotion(rec.at("answer").get<std::string>());
        if (!truth_.count(u) || !answer) throw Error(ErrorCode::kParseError, where() + ": bad label record");
        if (s.answered.count(u)) throw Error(ErrorCode::kParseError, where() + ": duplicate label");
        record_label(s, u, *answer, rec.value("key", std::string()));
      } else {
        throw Error(ErrorCode::kParseError, where() + ": unknown record type " + type);
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, where() + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kParseError) throw;
      throw Error(ErrorCode::kParseError, where() + ": " + e.what());
    }
  }

  ServiceConfig config_;
  std::map<std::string, Emotion> truth_;
  std::vector<std::string> warmup_;
  std::set<std::string> warmup_set_;
  std::vector<std::string> main_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, std::string> by_assessor_;
  std::vector<Label> labels_;
  std::map<std::string, std::set<std::string>> coverage_;
  int fd_ = -1;
};

}  // namespace emoctc::annotation

#endif  // EMOCTC_ANNOTATION_HPP_
