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

// Comparison methods: a constant majority-class predictor and the
// loudest-frames pipeline, which trains a frame classifier on the two
// loudest frames of every utterance and labels an utterance by majority
// vote over its frames.

#ifndef EMOCTC_BASELINES_HPP_
#define EMOCTC_BASELINES_HPP_

#include "emoctc/common.hpp"
#include "emoctc/features.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace emoctc::baselines {

// Maps one feature vector to a distribution over classes.
class FrameClassifier {
 public:
  virtual ~FrameClassifier() = default;
  virtual int num_classes() const = 0;
  virtual std::vector<double> predict_proba(std::span<const double> features) const = 0;
  virtual nlohmann::json to_json() const = 0;
};

struct ForestConfig {
  int n_trees = 50;
  int max_depth = 12;
  int features_per_split = 0;  // 0: round(sqrt(input_dim))
  int min_samples_split = 2;
  uint64_t seed = 1;

  void validate() const {
    if (n_trees < 1 || max_depth < 0 || features_per_split < 0 || min_samples_split < 2) {
      throw Error(ErrorCode::kBadConfig, "invalid forest configuration");
    }
  }
};

// Bagged CART trees split on Gini impurity with a random feature subset at
// every node. Leaves hold class frequencies; the forest averages them.
class DecisionForest final : public FrameClassifier {
 public:
  struct Tree {
    std::vector<int> feature;  // -1 at leaves
    std::vector<double> threshold;
    std::vector<int> left, right;
    std::vector<std::vector<double>> value;  // leaf distributions
  };

  DecisionForest() = default;

  // rows of x are samples; y holds class indices in [0, num_classes).
  static DecisionForest fit(const RowMatrix& x, std::span<const int> y, int num_classes, const ForestConfig& cfg) {
    cfg.validate();
    if (x.rows() == 0) throw Error(ErrorCode::kEmptyTraining, "no training frames");
    if (static_cast<std::size_t>(x.rows()) != y.size()) {
      throw Error(ErrorCode::kLengthMismatch, "feature rows and labels differ in count");
    }
    for (int c : y) {
      if (c < 0 || c >= num_classes) throw Error(ErrorCode::kBadArgument, "class index out of range");
    }
    DecisionForest f;
    f.num_classes_ = num_classes;
    f.input_dim_ = static_cast<int>(x.cols());
    f.config_ = cfg;
    const int m = cfg.features_per_split > 0
                      ? std::min(cfg.features_per_split, f.input_dim_)
                      : std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(f.input_dim_)))));
    const auto n = static_cast<std::size_t>(x.rows());
    for (int t = 0; t < cfg.n_trees; ++t) {
      std::seed_seq seq{static_cast<uint32_t>(cfg.seed), static_cast<uint32_t>(cfg.seed >> 32),
                        static_cast<uint32_t>(t)};
      std::mt19937_64 rng(seq);
      std::uniform_int_distribution<std::size_t> draw(0, n - 1);
      std::vector<std::size_t> rows(n);
      for (auto& r : rows) r = draw(rng);
      Tree tree;
      Builder b{x, y, num_classes, m, cfg, rng, tree};
      b.grow(rows, 0);
      f.trees_.push_back(std::move(tree));
    }
    return f;
  }

  int num_classes() const override { return num_classes_; }
  int input_dim() const { return input_dim_; }
  const std::vector<Tree>& trees() const { return trees_; }

  std::vector<double> predict_proba(std::span<const double> features) const override {
    if (static_cast<int>(features.size()) != input_dim_) {
      throw Error(ErrorCode::kShapeMismatch, "frame has " + std::to_string(features.size()) + " features, forest expects " +
                                                 std::to_string(input_dim_));
    }
    std::vector<double> p(static_cast<std::size_t>(num_classes_), 0.0);
    for (const auto& tree : trees_) {
      int node = 0;
      while (tree.feature[static_cast<std::size_t>(node)] >= 0) {
        const auto i = static_cast<std::size_t>(node);
        node = features[static_cast<std::size_t>(tree.feature[i])] <= tree.threshold[i] ? tree.left[i] : tree.right[i];
      }
      const auto& v = tree.value[static_cast<std::size_t>(node)];
      for (std::size_t c = 0; c < p.size(); ++c) p[c] += v[c];
    }
    for (double& v : p) v /= static_cast<double>(trees_.size());
    return p;
  }

  nlohmann::json to_json() const override {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : trees_) {
      trees.push_back({{"feature", t.feature}, {"threshold", t.threshold}, {"left", t.left}, {"right", t.right},
                       {"value", t.value}});
    }
    return {{"type", "forest"},
            {"num_classes", num_classes_},
            {"input_dim", input_dim_},
            {"n_trees", config_.n_trees},
            {"max_depth", config_.max_depth},
            {"features_per_split", config_.features_per_split},
            {"min_samples_split", config_.min_samples_split},
            {"seed", config_.seed},
            {"trees", trees}};
  }

  static DecisionForest from_json(const nlohmann::json& j) {
    try {
      if (j.at("type") != "forest") throw Error(ErrorCode::kParseError, "not a forest checkpoint");
      DecisionForest f;
      f.num_classes_ = j.at("num_classes").get<int>();
      f.input_dim_ = j.at("input_dim").get<int>();
      f.config_.n_trees = j.at("n_trees").get<int>();
      f.config_.max_depth = j.at("max_depth").get<int>();
      f.config_.features_per_split = j.at("features_per_split").get<int>();
      f.config_.min_samples_split = j.at("min_samples_split").get<int>();
      f.config_.seed = j.at("seed").get<uint64_t>();
      for (const auto& t : j.at("trees")) {
        Tree tree;
        t.at("feature").get_to(tree.feature);
        t.at("threshold").get_to(tree.threshold);
        t.at("left").get_to(tree.left);
        t.at("right").get_to(tree.right);
        t.at("value").get_to(tree.value);
        const auto nodes = tree.feature.size();
        if (nodes == 0 || tree.threshold.size() != nodes || tree.left.size() != nodes || tree.right.size() != nodes ||
            tree.value.size() != nodes) {
          throw Error(ErrorCode::kParseError, "inconsistent tree arrays");
        }
        f.trees_.push_back(std::move(tree));
      }
      if (f.trees_.empty()) throw Error(ErrorCode::kParseError, "forest has no trees");
      return f;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, std::string("bad forest checkpoint: ") + e.what());
    }
  }

 private:
  struct Builder {
    const RowMatrix& x;
    std::span<const int> y;
    int classes;
    int per_split;
    const ForestConfig& cfg;
    std::mt19937_64& rng;
    Tree& tree;

    int leaf(const std::vector<double>& counts, double total) {
      const int id = push();
      auto& v = tree.value[static_cast<std::size_t>(id)];
      for (std::size_t c = 0; c < counts.size(); ++c) v[c] = counts[c] / total;
      return id;
    }

    int push() {
      tree.feature.push_back(-1);
      tree.threshold.push_back(0.0);
      tree.left.push_back(-1);
      tree.right.push_back(-1);
      tree.value.emplace_back(static_cast<std::size_t>(classes), 0.0);
      return static_cast<int>(tree.feature.size()) - 1;
    }

    static double gini(const std::vector<double>& counts, double total) {
      double s = 0.0;
      for (double c : counts) s += c * c;
      return 1.0 - s / (total * total);
    }

    int grow(std::vector<std::size_t>& rows, int depth) {
      std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
      for (auto r : rows) counts[static_cast<std::size_t>(y[r])] += 1.0;
      const auto total = static_cast<double>(rows.size());
      const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0.0; }) <= 1;
      if (pure || depth >= cfg.max_depth || static_cast<int>(rows.size()) < cfg.min_samples_split) {
        return leaf(counts, total);
      }
      std::vector<int> feats(static_cast<std::size_t>(x.cols()));
      std::iota(feats.begin(), feats.end(), 0);
      for (int i = 0; i < per_split; ++i) {
        std::uniform_int_distribution<int> pick(i, static_cast<int>(feats.size()) - 1);
        std::swap(feats[static_cast<std::size_t>(i)], feats[static_cast<std::size_t>(pick(rng))]);
      }
      const double parent = gini(counts, total);
      double best_score = parent - 1e-12;
      int best_feature = -1;
      double best_threshold = 0.0;
      std::vector<std::size_t> sorted = rows;
      for (int fi = 0; fi < per_split; ++fi) {
        const int f = feats[static_cast<std::size_t>(fi)];
        std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
        std::vector<double> left(static_cast<std::size_t>(classes), 0.0), right = counts;
        for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
          const auto c = static_cast<std::size_t>(y[sorted[i]]);
          left[c] += 1.0;
          right[c] -= 1.0;
          const double lo = x(sorted[i], f), hi = x(sorted[i + 1], f);
          if (!(lo < hi)) continue;
          const auto nl = static_cast<double>(i + 1), nr = total - nl;
          const double score = (nl * gini(left, nl) + nr * gini(right, nr)) / total;
          if (score < best_score) {
            best_score = score;
            best_feature = f;
            best_threshold = lo + 0.5 * (hi - lo);
          }
        }
      }
      if (best_feature < 0) return leaf(counts, total);
      const int id = push();
      std::vector<std::size_t> lrows, rrows;
      for (auto r : rows) (x(r, best_feature) <= best_threshold ? lrows : rrows).push_back(r);
      tree.feature[static_cast<std::size_t>(id)] = best_feature;
      tree.threshold[static_cast<std::size_t>(id)] = best_threshold;
      const int l = grow(lrows, depth + 1);
      const int r = grow(rrows, depth + 1);
      tree.left[static_cast<std::size_t>(id)] = l;
      tree.right[static_cast<std::size_t>(id)] = r;
      return id;
    }
  };

  int num_classes_ = 0;
  int input_dim_ = 0;
  ForestConfig config_;
  std::vector<Tree> trees_;
};

// Indices of the n frames with the highest energy among the first true_len,
// loudest first, ties to the lower index.
inline std::vector<int> select_loudest_frames(const features::FeatureSequence& seq, int n = 2) {
  std::vector<int> idx(static_cast<std::size_t>(std::max(seq.true_len, 0)));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return seq.matrix(a, features::kEnergy) > seq.matrix(b, features::kEnergy);
  });
  if (static_cast<int>(idx.size()) > n) idx.resize(static_cast<std::size_t>(n));
  return idx;
}

struct FrameSet {
  RowMatrix x;
  std::vector<int> y;
};

// The loudest frames of every utterance, each labeled with its utterance's
// emotion.
inline FrameSet loudest_frame_set(std::span<const features::FeatureSequence> sequences, std::span<const int> labels,
                                  int frames_per_utterance = 2) {
  if (sequences.size() != labels.size()) throw Error(ErrorCode::kLengthMismatch, "sequences and labels differ in count");
  if (sequences.empty()) throw Error(ErrorCode::kEmptyTraining, "no training utterances");
  std::vector<std::pair<std::size_t, int>> picked;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    for (int r : select_loudest_frames(sequences[i], frames_per_utterance)) picked.emplace_back(i, r);
  }
  FrameSet out;
  out.x.resize(static_cast<Eigen::Index>(picked.size()), sequences[0].matrix.cols());
  for (std::size_t k = 0; k < picked.size(); ++k) {
    out.x.row(static_cast<Eigen::Index>(k)) = sequences[picked[k].first].matrix.row(picked[k].second);
    out.y.push_back(labels[picked[k].first]);
  }
  return out;
}

inline DecisionForest train_framewise(std::span<const features::FeatureSequence> sequences, std::span<const int> labels,
                                      const ForestConfig& cfg = {}, int frames_per_utterance = 2,
                                      int num_classes = kNumEmotions) {
  const auto set = loudest_frame_set(sequences, labels, frames_per_utterance);
  return DecisionForest::fit(set.x, set.y, num_classes, cfg);
}

// Class distribution of every valid frame (true_len x classes).
inline RowMatrix frame_probabilities(const FrameClassifier& clf, const features::FeatureSequence& seq) {
  RowMatrix out(seq.true_len, clf.num_classes());
  std::vector<double> row(static_cast<std::size_t>(seq.matrix.cols()));
  for (int t = 0; t < seq.true_len; ++t) {
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = seq.matrix(t, static_cast<Eigen::Index>(c));
    const auto p = clf.predict_proba(row);
    for (int c = 0; c < clf.num_classes(); ++c) out(t, c) = p[static_cast<std::size_t>(c)];
  }
  return out;
}

// Majority vote over the argmax class of every valid frame; ties go to the
// lowest class index at both levels.
inline int predict_framewise(const FrameClassifier& clf, const features::FeatureSequence& seq) {
  const RowMatrix probs = frame_probabilities(clf, seq);
  std::vector<int> votes(static_cast<std::size_t>(clf.num_classes()), 0);
  for (Eigen::Index t = 0; t < probs.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(t, c) > probs(t, best)) best = c;
    }
    ++votes[static_cast<std::size_t>(best)];
  }
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

struct DummyModel {
  int majority_label = 0;
  int predict() const { return majority_label; }
};

// Modal training class, ties to the lowest index.
inline DummyModel dummy_fit(std::span<const int> labels, int num_classes = kNumEmotions) {
  if (labels.empty()) throw Error(ErrorCode::kEmptyTraining, "no training labels");
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int c : labels) {
    if (c < 0 || c >= num_classes) throw Error(ErrorCode::kBadArgument, "class index out of range");
    ++counts[static_cast<std::size_t>(c)];
  }
  return {static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin())};
}

}  // namespace emoctc::baselines

#endif  // EMOCTC_BASELINES_HPP_
