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

// Accuracy metrics, speaker-pair grouped cross-validation, the comparison
// driver, and the error analyses against expert disagreement.

#ifndef EMOCTC_EVAL_HPP_
#define EMOCTC_EVAL_HPP_

#include "emoctc/baselines.hpp"
#include "emoctc/common.hpp"
#include "emoctc/dataset.hpp"
#include "emoctc/features.hpp"
#include "emoctc/model.hpp"
#include "emoctc/nn.hpp"
#include "emoctc/parallel.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace emoctc::eval {

namespace detail {

inline void check_pair(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(truth.size()) + " labels vs " +
                                                std::to_string(predicted.size()) + " predictions");
  }
  if (truth.empty()) throw Error(ErrorCode::kEmpty, "no predictions to score");
}

}  // namespace detail

inline double overall_accuracy(std::span<const int> truth, std::span<const int> predicted) {
  detail::check_pair(truth, predicted);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// Per-class accuracy averaged over the classes that occur in truth.
inline double mean_class_accuracy(std::span<const int> truth, std::span<const int> predicted) {
  detail::check_pair(truth, predicted);
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // class -> (hits, count)
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& [hits, count] = per_class[truth[i]];
    hits += truth[i] == predicted[i];
    ++count;
  }
  double sum = 0.0;
  for (const auto& [c, hc] : per_class) sum += static_cast<double>(hc.first) / static_cast<double>(hc.second);
  return sum / static_cast<double>(per_class.size());
}

using Confusion = std::vector<std::vector<long>>;  // [truth][predicted]

inline Confusion confusion(std::span<const int> truth, std::span<const int> predicted,
                           int num_classes = kNumEmotions) {
  detail::check_pair(truth, predicted);
  Confusion m(static_cast<std::size_t>(num_classes), std::vector<long>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes) {
      throw Error(ErrorCode::kBadArgument, "class index out of range");
    }
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

// ---------------------------------------------------------------------------
// Grouped k-fold

struct Fold {
  std::vector<std::string> test_groups;
  std::vector<std::size_t> train;  // utterance indices
  std::vector<std::size_t> test;
};

struct FoldSplit {
  std::vector<Fold> folds;
};

// Groups are sorted, shuffled with the seed, and dealt to folds round-robin.
inline FoldSplit grouped_kfold(const dataset::Corpus& corpus, int k = 5, uint64_t seed = 1) {
  if (k < 2) throw Error(ErrorCode::kBadArgument, "need at least 2 folds");
  std::set<std::string> unique;
  for (const auto& u : corpus.utterances) unique.insert(u.group_id);
  std::vector<std::string> groups(unique.begin(), unique.end());
  if (static_cast<int>(groups.size()) < k) {
    throw Error(ErrorCode::kTooFewGroups, std::to_string(groups.size()) + " groups for " + std::to_string(k) + " folds");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);
  std::map<std::string, int> fold_of;
  FoldSplit split;
  split.folds.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    fold_of[groups[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    split.folds[i % static_cast<std::size_t>(k)].test_groups.push_back(groups[i]);
  }
  for (auto& f : split.folds) std::sort(f.test_groups.begin(), f.test_groups.end());
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const int fi = fold_of[corpus.utterances[i].group_id];
    for (int f = 0; f < k; ++f) (f == fi ? split.folds[static_cast<std::size_t>(f)].test
                                         : split.folds[static_cast<std::size_t>(f)].train).push_back(i);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Error structure against expert disagreement

namespace detail {

inline void check_experts(const dataset::Corpus& corpus, std::span<const int> predicted) {
  if (corpus.utterances.size() != predicted.size()) {
    throw Error(ErrorCode::kLengthMismatch, "one prediction per utterance required");
  }
  if (corpus.empty()) throw Error(ErrorCode::kEmpty, "empty corpus");
  for (const auto& u : corpus.utterances) {
    if (u.experts.empty()) throw Error(ErrorCode::kMissingExpertData, "utterance " + u.id + " has no expert answers");
    if (!u.emotion()) throw Error(ErrorCode::kBadArgument, "utterance " + u.id + " is outside the 4 emotions");
  }
}

}  // namespace detail

// Error counts by final emotion and number of dissenting experts.
struct ConfidenceTable {
  int max_dissent = 0;
  std::vector<std::vector<int>> total;   // [emotion][dissent]
  std::vector<std::vector<int>> errors;  // [emotion][dissent]
  double overall_accuracy = 0.0;
  std::optional<double> consistent_accuracy;  // dissent == 0 only

  std::optional<double> error_rate(int emotion, int dissent) const {
    const int n = total[static_cast<std::size_t>(emotion)][static_cast<std::size_t>(dissent)];
    if (n == 0) return std::nullopt;
    return static_cast<double>(errors[static_cast<std::size_t>(emotion)][static_cast<std::size_t>(dissent)]) / n;
  }
};

inline ConfidenceTable misclassification_by_confidence(const dataset::Corpus& corpus, std::span<const int> predicted) {
  detail::check_experts(corpus, predicted);
  ConfidenceTable t;
  for (const auto& u : corpus.utterances) t.max_dissent = std::max(t.max_dissent, u.dissent_count());
  t.total.assign(kNumEmotions, std::vector<int>(static_cast<std::size_t>(t.max_dissent + 1), 0));
  t.errors = t.total;
  std::size_t hits = 0, consistent = 0, consistent_hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& u = corpus.utterances[i];
    const auto c = static_cast<std::size_t>(*u.emotion());
    const auto d = static_cast<std::size_t>(u.dissent_count());
    const bool ok = predicted[i] == static_cast<int>(c);
    ++t.total[c][d];
    t.errors[c][d] += !ok;
    hits += ok;
    if (d == 0) {
      ++consistent;
      consistent_hits += ok;
    }
  }
  t.overall_accuracy = static_cast<double>(hits) / static_cast<double>(predicted.size());
  if (consistent > 0) t.consistent_accuracy = static_cast<double>(consistent_hits) / static_cast<double>(consistent);
  return t;
}

inline constexpr double kRandomCoincidence = 1.0 / 3.0;

// Utterances with exactly one dissenting expert, per final emotion.
struct ResidualRow {
  int single_dissent = 0;   // utterances with exactly one dissenting answer
  int considered = 0;       // ... whose dissenting answer is one of the 4 emotions
  int errors = 0;           // considered utterances the model got wrong
  int coincident = 0;       // ... where the model chose the dissenting emotion
  std::optional<double> considered_ratio() const {
    if (single_dissent == 0) return std::nullopt;
    return static_cast<double>(considered) / single_dissent;
  }
  std::optional<double> coincidence_rate() const {
    if (errors == 0) return std::nullopt;
    return static_cast<double>(coincident) / errors;
  }
};

inline std::vector<ResidualRow> residual_accuracy(const dataset::Corpus& corpus, std::span<const int> predicted) {
  detail::check_experts(corpus, predicted);
  std::vector<ResidualRow> rows(kNumEmotions);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& u = corpus.utterances[i];
    if (u.dissent_count() != 1) continue;
    auto& row = rows[static_cast<std::size_t>(*u.emotion())];
    ++row.single_dissent;
    std::optional<Emotion> dissent;
    for (const auto& e : u.experts) {
      if (e.answer != *u.final_label) dissent = to_emotion(e.answer);
    }
    if (!dissent) continue;
    ++row.considered;
    if (predicted[i] == static_cast<int>(*u.emotion())) continue;
    ++row.errors;
    row.coincident += predicted[i] == static_cast<int>(*dissent);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Comparison driver

using model::Method;
using model::kMethodNames;
using model::method_name;
using model::parse_method;

struct ComparisonConfig {
  std::vector<Method> methods{Method::kDummy, Method::kFramewise, Method::kOneLabel, Method::kCtc};
  int folds = 5;
  uint64_t seed = 1;
  bool pooled = false;  // headline metrics from pooled predictions instead of fold means
  bool validation = true;  // hold out one training group for early stopping
  nn::NetworkConfig network;
  nn::TrainingConfig training;
  baselines::ForestConfig forest;
  int workers = 1;
  std::function<void(const std::string&)> log;
};

struct FoldMetrics {
  int fold = 0;
  std::size_t n_test = 0;
  double overall_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  int epochs = 0;  // nn methods: epochs run
  int best_epoch = 0;
};

// Per-frame class distribution of one test utterance.
struct FrameTrace {
  std::size_t utterance = 0;
  int fold = 0;
  RowMatrix probs;
};

struct MethodReport {
  Method method = Method::kDummy;
  std::vector<FoldMetrics> folds;
  std::vector<int> predictions;  // by utterance index
  double overall_accuracy = 0.0;  // headline (fold mean unless pooled)
  double mean_class_accuracy = 0.0;
  double fold_mean_overall = 0.0;
  double fold_mean_class = 0.0;
  double pooled_overall = 0.0;
  double pooled_mean_class = 0.0;
  Confusion confusion;
  ConfidenceTable confidence;
  std::vector<ResidualRow> residual;
  std::vector<FrameTrace> frame_traces;
};

struct EvaluationReport {
  int folds = 0;
  uint64_t seed = 0;
  bool pooled = false;
  std::vector<std::vector<std::string>> fold_groups;
  std::vector<MethodReport> methods;
  double seconds = 0.0;
};

namespace detail {

struct FoldOutput {
  std::vector<std::pair<std::size_t, int>> predictions;
  std::vector<FrameTrace> traces;
  int epochs = 0;
  int best_epoch = 0;
};

inline std::vector<int> labels_of(const dataset::Corpus& corpus) {
  std::vector<int> y;
  for (const auto& u : corpus.utterances) {
    const auto e = u.emotion();
    if (!e) throw Error(ErrorCode::kBadArgument, "utterance " + u.id + " is outside the 4 emotions");
    y.push_back(static_cast<int>(*e));
  }
  return y;
}

inline FoldOutput run_fold(Method method, int fold_index, const Fold& fold, const dataset::Corpus& corpus,
                           std::span<const features::FeatureSequence> seqs, const ComparisonConfig& cfg) {
  FoldOutput out;
  model::FitConfig fc;
  fc.network = cfg.network;
  fc.training = cfg.training;
  fc.forest = cfg.forest;
  fc.validation = cfg.validation;
  fc.seed = cfg.seed * 1000003ULL + static_cast<uint64_t>(fold_index);
  const auto m = model::fit(method, corpus, seqs, fold.train, fc);
  out.epochs = static_cast<int>(m.history.size());
  out.best_epoch = m.best_epoch;
  for (auto i : fold.test) {
    out.predictions.emplace_back(i, model::predict(m, seqs[i]));
    if (method == Method::kFramewise || method == Method::kCtc) {
      out.traces.push_back({i, fold_index, model::frame_trace(m, seqs[i])});
    }
  }
  return out;
}

}  // namespace detail

// Grouped k-fold comparison of the requested methods. seqs holds the
// unpadded feature sequence of every corpus utterance, in corpus order.
inline EvaluationReport run_comparison(const dataset::Corpus& corpus, std::span<const features::FeatureSequence> seqs,
                                       const ComparisonConfig& cfg) {
  if (seqs.size() != corpus.utterances.size()) {
    throw Error(ErrorCode::kLengthMismatch, "one feature sequence per utterance required");
  }
  if (cfg.methods.empty()) throw Error(ErrorCode::kBadArgument, "no methods requested");
  const auto start = std::chrono::steady_clock::now();
  const auto labels = detail::labels_of(corpus);
  const auto split = grouped_kfold(corpus, cfg.folds, cfg.seed);
  EvaluationReport report;
  report.folds = cfg.folds;
  report.seed = cfg.seed;
  report.pooled = cfg.pooled;
  for (const auto& f : split.folds) report.fold_groups.push_back(f.test_groups);

  for (Method method : cfg.methods) {
    if (cfg.log) cfg.log(std::string("method ") + std::string(method_name(method)));
    std::vector<detail::FoldOutput> outputs(split.folds.size());
    parallel_for(split.folds.size(), cfg.workers, [&](std::size_t f) {
      outputs[f] = detail::run_fold(method, static_cast<int>(f), split.folds[f], corpus, seqs, cfg);
      if (cfg.log) cfg.log("  fold " + std::to_string(f + 1) + "/" + std::to_string(split.folds.size()) + " done");
    });
    MethodReport mr;
    mr.method = method;
    mr.predictions.assign(corpus.utterances.size(), -1);
    for (std::size_t f = 0; f < outputs.size(); ++f) {
      std::vector<int> truth, pred;
      for (const auto& [i, p] : outputs[f].predictions) {
        mr.predictions[i] = p;
        truth.push_back(labels[i]);
        pred.push_back(p);
      }
      FoldMetrics fm;
      fm.fold = static_cast<int>(f);
      fm.n_test = truth.size();
      fm.overall_accuracy = overall_accuracy(truth, pred);
      fm.mean_class_accuracy = mean_class_accuracy(truth, pred);
      fm.epochs = outputs[f].epochs;
      fm.best_epoch = outputs[f].best_epoch;
      mr.folds.push_back(fm);
      for (auto& tr : outputs[f].traces) mr.frame_traces.push_back(std::move(tr));
    }
    for (const auto& fm : mr.folds) {
      mr.fold_mean_overall += fm.overall_accuracy / static_cast<double>(mr.folds.size());
      mr.fold_mean_class += fm.mean_class_accuracy / static_cast<double>(mr.folds.size());
    }
    mr.pooled_overall = overall_accuracy(labels, mr.predictions);
    mr.pooled_mean_class = mean_class_accuracy(labels, mr.predictions);
    mr.overall_accuracy = cfg.pooled ? mr.pooled_overall : mr.fold_mean_overall;
    mr.mean_class_accuracy = cfg.pooled ? mr.pooled_mean_class : mr.fold_mean_class;
    mr.confusion = confusion(labels, mr.predictions);
    bool experts = std::all_of(corpus.utterances.begin(), corpus.utterances.end(),
                               [](const dataset::LabeledUtterance& u) { return !u.experts.empty(); });
    if (experts) {
      mr.confidence = misclassification_by_confidence(corpus, mr.predictions);
      mr.residual = residual_accuracy(corpus, mr.predictions);
    }
    std::sort(mr.frame_traces.begin(), mr.frame_traces.end(),
              [](const FrameTrace& a, const FrameTrace& b) { return a.utterance < b.utterance; });
    report.methods.push_back(std::move(mr));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Report files

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + p.string());
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : r.methods) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : m.folds) {
      folds.push_back({{"fold", f.fold},
                       {"n_test", f.n_test},
                       {"overall_accuracy", f.overall_accuracy},
                       {"mean_class_accuracy", f.mean_class_accuracy},
                       {"epochs", f.epochs},
                       {"best_epoch", f.best_epoch}});
    }
    nlohmann::json jm = {{"method", method_name(m.method)},
                         {"overall_accuracy", m.overall_accuracy},
                         {"mean_class_accuracy", m.mean_class_accuracy},
                         {"fold_mean_overall_accuracy", m.fold_mean_overall},
                         {"fold_mean_class_accuracy", m.fold_mean_class},
                         {"pooled_overall_accuracy", m.pooled_overall},
                         {"pooled_mean_class_accuracy", m.pooled_mean_class},
                         {"confusion", m.confusion},
                         {"folds", folds}};
    if (m.confidence.consistent_accuracy) jm["consistent_accuracy"] = *m.confidence.consistent_accuracy;
    if (!m.residual.empty()) {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t c = 0; c < m.residual.size(); ++c) {
        const auto& row = m.residual[c];
        nlohmann::json jr = {{"emotion", kEmotionNames[c]},
                             {"single_dissent", row.single_dissent},
                             {"considered", row.considered},
                             {"errors", row.errors},
                             {"coincident", row.coincident},
                             {"considered_ratio", nullptr},
                             {"coincidence_rate", nullptr}};
        if (const auto v = row.considered_ratio()) jr["considered_ratio"] = *v;
        if (const auto v = row.coincidence_rate()) jr["coincidence_rate"] = *v;
        rows.push_back(jr);
      }
      jm["residual"] = rows;
    }
    methods.push_back(jm);
  }
  return {{"folds", r.folds},
          {"seed", r.seed},
          {"pooled", r.pooled},
          {"fold_groups", r.fold_groups},
          {"seconds", r.seconds},
          {"methods", methods}};
}

// Writes table1.csv, folds.csv, confusion_<method>.csv, confidence_errors.csv,
// residual.csv, frame_probs_<method>.csv (framewise and ctc) and report.json.
inline void write_report(const std::filesystem::path& dir, const EvaluationReport& r,
                         const dataset::Corpus& corpus) {
  std::filesystem::create_directories(dir);
  {
    auto out = detail::open_out(dir / "table1.csv");
    out << "method,overall_accuracy,mean_class_accuracy\n";
    for (const auto& m : r.methods) {
      out << method_name(m.method) << ',' << detail::fmt(m.overall_accuracy) << ','
          << detail::fmt(m.mean_class_accuracy) << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "folds.csv");
    out << "method,fold,test_groups,n_test,overall_accuracy,mean_class_accuracy,epochs,best_epoch\n";
    for (const auto& m : r.methods) {
      for (const auto& f : m.folds) {
        std::string groups;
        for (const auto& g : r.fold_groups[static_cast<std::size_t>(f.fold)]) groups += (groups.empty() ? "" : ";") + g;
        out << method_name(m.method) << ',' << f.fold + 1 << ',' << groups << ',' << f.n_test << ','
            << detail::fmt(f.overall_accuracy) << ',' << detail::fmt(f.mean_class_accuracy) << ',' << f.epochs << ','
            << f.best_epoch << '\n';
      }
    }
  }
  for (const auto& m : r.methods) {
    auto out = detail::open_out(dir / ("confusion_" + std::string(method_name(m.method)) + ".csv"));
    out << "truth";
    for (auto n : kEmotionNames) out << ',' << n;
    out << '\n';
    for (std::size_t t = 0; t < m.confusion.size(); ++t) {
      out << kEmotionNames[t];
      for (long v : m.confusion[t]) out << ',' << v;
      out << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "confidence_errors.csv");
    out << "method,emotion,dissenting_experts,utterances,errors,error_rate\n";
    for (const auto& m : r.methods) {
      const auto& t = m.confidence;
      if (t.total.empty()) continue;
      for (int c = 0; c < kNumEmotions; ++c) {
        for (int d = 0; d <= t.max_dissent; ++d) {
          out << method_name(m.method) << ',' << kEmotionNames[static_cast<std::size_t>(c)] << ',' << d << ','
              << t.total[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] << ','
              << t.errors[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] << ','
              << detail::fmt(t.error_rate(c, d)) << '\n';
        }
      }
      // Totals over emotions; the dissent-0 row is the consistent-only subset.
      for (int d = 0; d <= t.max_dissent; ++d) {
        int n = 0, e = 0;
        for (int c = 0; c < kNumEmotions; ++c) {
          n += t.total[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)];
          e += t.errors[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)];
        }
        out << method_name(m.method) << ",all," << d << ',' << n << ',' << e << ','
            << detail::fmt(n ? std::optional<double>(static_cast<double>(e) / n) : std::nullopt) << '\n';
      }
    }
  }
  {
    auto out = detail::open_out(dir / "residual.csv");
    out << "method,emotion,single_dissent,considered,considered_ratio,errors,coincident,coincidence_rate,"
           "random_reference\n";
    for (const auto& m : r.methods) {
      for (std::size_t c = 0; c < m.residual.size(); ++c) {
        const auto& row = m.residual[c];
        out << method_name(m.method) << ',' << kEmotionNames[c] << ',' << row.single_dissent << ',' << row.considered
            << ',' << detail::fmt(row.considered_ratio()) << ',' << row.errors << ',' << row.coincident << ','
            << detail::fmt(row.coincidence_rate()) << ',' << detail::fmt(kRandomCoincidence) << '\n';
      }
    }
  }
  for (const auto& m : r.methods) {
    if (m.frame_traces.empty()) continue;
    auto out = detail::open_out(dir / ("frame_probs_" + std::string(method_name(m.method)) + ".csv"));
    out << "utterance_id,fold,frame";
    for (auto n : kEmotionNames) out << ",p_" << n;
    if (m.method == Method::kCtc) out << ",p_NULL";
    out << '\n';
    for (const auto& tr : m.frame_traces) {
      for (Eigen::Index t = 0; t < tr.probs.rows(); ++t) {
        out << corpus.utterances[tr.utterance].id << ',' << tr.fold + 1 << ',' << t;
        for (Eigen::Index c = 0; c < tr.probs.cols(); ++c) out << ',' << detail::fmt(tr.probs(t, c));
        out << '\n';
      }
    }
  }
  auto out = detail::open_out(dir / "report.json");
  out << to_json(r).dump(2) << '\n';
}

}  // namespace emoctc::eval

#endif  // EMOCTC_EVAL_HPP_
