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

// Connectionist temporal classification over a row-stochastic posterior
// matrix Y (T rows, k+1 columns, the last column is the NULL/blank symbol).
//
// Probabilities are carried in log space throughout; -inf stands for zero.
// Every routine accepts a true_len: only rows [0, true_len) take part, the
// rest are padding and never influence results.

#ifndef EMOCTC_CTC_HPP_
#define EMOCTC_CTC_HPP_

#include "emoctc/common.hpp"

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace emoctc::ctc {

using Labeling = std::vector<int>;
using Path = std::vector<int>;

// Emotion symbols 0..k-1 plus NULL at index k.
class Alphabet {
 public:
  explicit Alphabet(std::vector<std::string> emotions) : emotions_(std::move(emotions)) {
    if (emotions_.empty()) throw Error(ErrorCode::kBadArgument, "alphabet needs at least one label");
    for (const auto& e : emotions_) {
      if (e == kNullName) throw Error(ErrorCode::kBadArgument, "NULL cannot be an emotion label");
    }
  }

  static Alphabet emotions4() {
    return Alphabet({std::string(kEmotionNames[0]), std::string(kEmotionNames[1]),
                     std::string(kEmotionNames[2]), std::string(kEmotionNames[3])});
  }

  int num_labels() const { return static_cast<int>(emotions_.size()); }
  int size() const { return num_labels() + 1; }
  int blank() const { return num_labels(); }
  const std::string& name(int i) const {
    static const std::string null_name(kNullName);
    return i == blank() ? null_name : emotions_.at(static_cast<std::size_t>(i));
  }
  const std::vector<std::string>& emotions() const { return emotions_; }

  static constexpr std::string_view kNullName = "NULL";

 private:
  std::vector<std::string> emotions_;
};

// Collapse mapping: drop consecutive repeats, then drop blanks.
inline Labeling collapse(std::span<const int> path, int blank) {
  Labeling out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

// Minimum number of frames that can emit l: one per label plus a blank
// between each pair of equal neighbours.
inline int min_frames(std::span<const int> l) {
  int n = static_cast<int>(l.size());
  for (std::size_t i = 1; i < l.size(); ++i) {
    if (l[i] == l[i - 1]) ++n;
  }
  return n;
}

inline bool feasible(std::span<const int> l, int frames) { return frames >= min_frames(l); }

namespace detail {

inline int resolve_len(const RowMatrix& y, int true_len) {
  if (y.rows() < 1) throw Error(ErrorCode::kBadArgument, "posterior matrix has no rows");
  if (true_len < 0) return static_cast<int>(y.rows());
  if (true_len < 1 || true_len > y.rows()) {
    throw Error(ErrorCode::kBadArgument,
                "true_len " + std::to_string(true_len) + " outside [1, " + std::to_string(y.rows()) + "]");
  }
  return true_len;
}

inline void check_labels(std::span<const int> l, int num_labels) {
  for (int c : l) {
    if (c < 0 || c >= num_labels) {
      throw Error(ErrorCode::kBadArgument, "label " + std::to_string(c) + " outside alphabet");
    }
  }
}

// l' = NULL l1 NULL l2 ... lU NULL
inline std::vector<int> augment(std::span<const int> l, int blank) {
  std::vector<int> ext(2 * l.size() + 1, blank);
  for (std::size_t i = 0; i < l.size(); ++i) ext[2 * i + 1] = l[i];
  return ext;
}

// Lattice of pre-emission log masses. alpha(t, s) sums every path prefix that
// reaches state s at frame t excluding y at t; beta(t, s) sums every suffix
// leaving s after frame t. A path through (t, s) therefore has total mass
// alpha + log y + beta, and d p / d y(t, l'_s) = sum_s exp(alpha + beta).
struct Lattice {
  std::vector<int> ext;
  RowMatrix log_y;
  RowMatrix alpha;
  RowMatrix beta;
  double log_prob = logspace::kLogZero;
};

inline Lattice build_lattice(const RowMatrix& y, std::span<const int> l, int frames, bool with_beta) {
  using logspace::kLogZero;
  using logspace::log_add;
  const int blank = static_cast<int>(y.cols()) - 1;
  Lattice lat;
  lat.ext = augment(l, blank);
  const int states = static_cast<int>(lat.ext.size());

  lat.log_y.resize(frames, y.cols());
  for (int t = 0; t < frames; ++t) {
    for (int c = 0; c < y.cols(); ++c) lat.log_y(t, c) = logspace::safe_log(y(t, c));
  }
  auto emit = [&](int t, int s) { return lat.log_y(t, lat.ext[static_cast<std::size_t>(s)]); };
  auto can_skip = [&](int s) {
    return s >= 2 && lat.ext[static_cast<std::size_t>(s)] != blank &&
           lat.ext[static_cast<std::size_t>(s)] != lat.ext[static_cast<std::size_t>(s - 2)];
  };

  lat.alpha = RowMatrix::Constant(frames, states, kLogZero);
  lat.alpha(0, 0) = 0.0;
  if (states > 1) lat.alpha(0, 1) = 0.0;
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < states; ++s) {
      double acc = lat.alpha(t - 1, s) + emit(t - 1, s);
      if (s >= 1) acc = log_add(acc, lat.alpha(t - 1, s - 1) + emit(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, lat.alpha(t - 1, s - 2) + emit(t - 1, s - 2));
      lat.alpha(t, s) = acc;
    }
  }
  const int last = frames - 1;
  lat.log_prob = lat.alpha(last, states - 1) + emit(last, states - 1);
  if (states > 1) lat.log_prob = log_add(lat.log_prob, lat.alpha(last, states - 2) + emit(last, states - 2));

  if (with_beta) {
    lat.beta = RowMatrix::Constant(frames, states, kLogZero);
    lat.beta(last, states - 1) = 0.0;
    if (states > 1) lat.beta(last, states - 2) = 0.0;
    for (int t = last - 1; t >= 0; --t) {
      for (int s = 0; s < states; ++s) {
        double acc = lat.beta(t + 1, s) + emit(t + 1, s);
        if (s + 1 < states) acc = log_add(acc, lat.beta(t + 1, s + 1) + emit(t + 1, s + 1));
        if (s + 2 < states && can_skip(s + 2)) {
          acc = log_add(acc, lat.beta(t + 1, s + 2) + emit(t + 1, s + 2));
        }
        lat.beta(t, s) = acc;
      }
    }
  }
  return lat;
}

}  // namespace detail

// log prod_t y(t, path_t). Throws LengthMismatch unless |path| == rows.
inline double path_log_prob(const RowMatrix& y, std::span<const int> path) {
  if (static_cast<Eigen::Index>(path.size()) != y.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "path length " + std::to_string(path.size()) +
                                                " != frames " + std::to_string(y.rows()));
  }
  double acc = 0.0;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (path[t] < 0 || path[t] >= y.cols()) throw Error(ErrorCode::kBadArgument, "path symbol outside alphabet");
    acc += logspace::safe_log(y(static_cast<Eigen::Index>(t), path[t]));
  }
  return acc;
}

inline double path_prob(const RowMatrix& y, std::span<const int> path) {
  return std::exp(path_log_prob(y, path));
}

// log p(l | Y) by the forward recursion. Returns -inf for infeasible l.
inline double labeling_log_prob(const RowMatrix& y, std::span<const int> l, int true_len = -1) {
  const int frames = detail::resolve_len(y, true_len);
  detail::check_labels(l, static_cast<int>(y.cols()) - 1);
  if (!feasible(l, frames)) return logspace::kLogZero;
  return detail::build_lattice(y, l, frames, false).log_prob;
}

inline double labeling_prob(const RowMatrix& y, std::span<const int> l, int true_len = -1) {
  return std::exp(labeling_log_prob(y, l, true_len));
}

inline constexpr double kMaxEnumeration = 1e7;

// Sum of path probabilities over every path that collapses to l, found by
// enumerating all (k+1)^T paths. Test oracle for the recursion above.
inline double labeling_prob_bruteforce(const RowMatrix& y, std::span<const int> l, int true_len = -1) {
  const int frames = detail::resolve_len(y, true_len);
  const int symbols = static_cast<int>(y.cols());
  if (std::pow(static_cast<double>(symbols), frames) > kMaxEnumeration) {
    throw Error(ErrorCode::kTooLargeToEnumerate, "(k+1)^T exceeds 1e7");
  }
  const Labeling target(l.begin(), l.end());
  Path path(static_cast<std::size_t>(frames), 0);
  double total = 0.0;
  while (true) {
    if (collapse(path, symbols - 1) == target) {
      double p = 1.0;
      for (int t = 0; t < frames; ++t) p *= y(t, path[static_cast<std::size_t>(t)]);
      total += p;
    }
    int pos = frames - 1;
    while (pos >= 0 && ++path[static_cast<std::size_t>(pos)] == symbols) {
      path[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return total;
}

struct LossAndGrad {
  double loss = 0.0;    // -log p(l | Y)
  RowMatrix grad;       // d loss / d y(t, c); zero on padded rows
};

// CTC negative log-likelihood with its gradient with respect to Y.
// If every path of l has zero probability the loss is +inf and the gradient
// is left at zero.
inline LossAndGrad ctc_loss_and_grad(const RowMatrix& y, std::span<const int> l, int true_len = -1) {
  const int frames = detail::resolve_len(y, true_len);
  detail::check_labels(l, static_cast<int>(y.cols()) - 1);
  if (!feasible(l, frames)) {
    throw Error(ErrorCode::kInfeasibleLabeling, "labeling needs " + std::to_string(min_frames(l)) +
                                                    " frames, only " + std::to_string(frames) + " available");
  }
  const auto lat = detail::build_lattice(y, l, frames, true);
  LossAndGrad out;
  out.grad = RowMatrix::Zero(y.rows(), y.cols());
  out.loss = -lat.log_prob;
  if (lat.log_prob == logspace::kLogZero) return out;
  for (int t = 0; t < frames; ++t) {
    for (std::size_t s = 0; s < lat.ext.size(); ++s) {
      const int i = static_cast<int>(s);
      const double through = lat.alpha(t, i) + lat.beta(t, i);
      if (through == logspace::kLogZero) continue;
      out.grad(t, lat.ext[s]) -= std::exp(through - lat.log_prob);
    }
  }
  return out;
}

// Gradient of the CTC loss with respect to the pre-softmax activations that
// produced Y: y(t, c) - occupancy(t, c). Rows past true_len are zero.
struct LossAndLogitGrad {
  double loss = 0.0;
  RowMatrix grad;
};

inline LossAndLogitGrad ctc_loss_and_logit_grad(const RowMatrix& y, std::span<const int> l,
                                                int true_len = -1) {
  const int frames = detail::resolve_len(y, true_len);
  detail::check_labels(l, static_cast<int>(y.cols()) - 1);
  if (!feasible(l, frames)) {
    throw Error(ErrorCode::kInfeasibleLabeling, "labeling needs " + std::to_string(min_frames(l)) +
                                                    " frames, only " + std::to_string(frames) + " available");
  }
  const auto lat = detail::build_lattice(y, l, frames, true);
  LossAndLogitGrad out;
  out.grad = RowMatrix::Zero(y.rows(), y.cols());
  out.loss = -lat.log_prob;
  if (lat.log_prob == logspace::kLogZero) return out;
  out.grad.topRows(frames) = y.topRows(frames);
  for (int t = 0; t < frames; ++t) {
    for (std::size_t s = 0; s < lat.ext.size(); ++s) {
      const int i = static_cast<int>(s);
      const double through = lat.alpha(t, i) + lat.log_y(t, lat.ext[s]) + lat.beta(t, i);
      if (through == logspace::kLogZero) continue;
      out.grad(t, lat.ext[s]) -= std::exp(through - lat.log_prob);
    }
  }
  return out;
}

// Collapse of the per-frame argmax path; ties go to the lowest class index.
inline Labeling best_path_decode(const RowMatrix& y, int true_len = -1) {
  const int frames = detail::resolve_len(y, true_len);
  Path path(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    int best = 0;
    for (int c = 1; c < y.cols(); ++c) {
      if (y(t, c) > y(t, best)) best = c;
    }
    path[static_cast<std::size_t>(t)] = best;
  }
  return collapse(path, static_cast<int>(y.cols()) - 1);
}

namespace detail {

// Shorter first, then lexicographic.
inline bool labeling_before(const Labeling& a, const Labeling& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

}  // namespace detail

// Prefix beam search. A hypothesis is a collapsed prefix together with
// whether its last frame was NULL; the two endings of one prefix are kept as
// separate beam entries and their masses are merged only when choosing the
// final labeling. Entries are ranked by log mass, then by the emission
// probability of the frame that created them, then by creation order (parent
// rank, then symbol index). With width 1 this follows the argmax path
// exactly; with a width no smaller than the number of reachable entries it
// tracks every path and returns the exact most probable labeling.
inline Labeling beam_search_decode(const RowMatrix& y, int true_len = -1, int width = 4) {
  if (width < 1) throw Error(ErrorCode::kBadWidth, "beam width must be >= 1, got " + std::to_string(width));
  const int frames = detail::resolve_len(y, true_len);
  const int blank = static_cast<int>(y.cols()) - 1;

  struct Entry {
    Labeling prefix;
    bool ends_blank = true;
    double log_mass = 0.0;
    double last_emission = 0.0;
    std::size_t order = 0;
  };
  std::vector<Entry> beam{Entry{}};

  for (int t = 0; t < frames; ++t) {
    std::map<std::pair<Labeling, bool>, std::size_t> index;
    std::vector<Entry> next;
    for (const auto& h : beam) {
      for (int c = 0; c <= blank; ++c) {
        const double ly = logspace::safe_log(y(t, c));
        Entry child;
        if (c == blank) {
          child.prefix = h.prefix;
          child.ends_blank = true;
        } else if (!h.ends_blank && !h.prefix.empty() && h.prefix.back() == c) {
          child.prefix = h.prefix;
          child.ends_blank = false;
        } else {
          child.prefix = h.prefix;
          child.prefix.push_back(c);
          child.ends_blank = false;
        }
        child.log_mass = h.log_mass + ly;
        child.last_emission = ly;
        auto key = std::make_pair(child.prefix, child.ends_blank);
        auto it = index.find(key);
        if (it == index.end()) {
          child.order = next.size();
          index.emplace(std::move(key), next.size());
          next.push_back(std::move(child));
        } else {
          auto& merged = next[it->second];
          merged.log_mass = logspace::log_add(merged.log_mass, child.log_mass);
          merged.last_emission = std::max(merged.last_emission, ly);
        }
      }
    }
    std::sort(next.begin(), next.end(), [](const Entry& a, const Entry& b) {
      if (a.log_mass != b.log_mass) return a.log_mass > b.log_mass;
      if (a.last_emission != b.last_emission) return a.last_emission > b.last_emission;
      return a.order < b.order;
    });
    if (static_cast<int>(next.size()) > width) next.resize(static_cast<std::size_t>(width));
    beam = std::move(next);
  }

  std::map<Labeling, double> totals;
  for (const auto& h : beam) {
    auto [it, inserted] = totals.emplace(h.prefix, h.log_mass);
    if (!inserted) it->second = logspace::log_add(it->second, h.log_mass);
  }
  const Labeling* best = nullptr;
  double best_mass = logspace::kLogZero;
  for (const auto& [prefix, mass] : totals) {
    if (best == nullptr || mass > best_mass ||
        (mass == best_mass && detail::labeling_before(prefix, *best))) {
      best = &prefix;
      best_mass = mass;
    }
  }
  return *best;
}

inline constexpr double kMaxLabelings = 1e6;

// Enumerates every labeling of length <= true_len and returns the most
// probable one under the forward recursion. Ties: shorter, then
// lexicographically smaller.
inline Labeling exact_decode(const RowMatrix& y, int true_len = -1) {
  const int frames = detail::resolve_len(y, true_len);
  const int k = static_cast<int>(y.cols()) - 1;
  double count = 0.0;
  for (int u = 0; u <= frames; ++u) count += std::pow(static_cast<double>(k), u);
  if (count > kMaxLabelings) throw Error(ErrorCode::kTooLargeToEnumerate, "too many labelings to enumerate");

  Labeling best;
  double best_lp = labeling_log_prob(y, best, frames);
  for (int u = 1; u <= frames; ++u) {
    Labeling l(static_cast<std::size_t>(u), 0);
    while (true) {
      if (feasible(l, frames)) {
        const double lp = labeling_log_prob(y, l, frames);
        if (lp > best_lp) {
          best_lp = lp;
          best = l;
        }
      }
      int pos = u - 1;
      while (pos >= 0 && ++l[static_cast<std::size_t>(pos)] == k) {
        l[static_cast<std::size_t>(pos)] = 0;
        --pos;
      }
      if (pos < 0) break;
    }
  }
  return best;
}

}  // namespace emoctc::ctc

#endif  // EMOCTC_CTC_HPP_
