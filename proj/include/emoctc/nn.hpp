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

// Stacked bidirectional LSTM with two heads:
//   * per-timestep dense + softmax over k emotions plus NULL, trained by CTC;
//   * last-state dense + softmax over k emotions, trained by cross-entropy.
// Each BLSTM layer runs a forward cell over the sequence and a backward cell
// over the reversed sequence; the backward outputs are put back into forward
// order and stacked under the forward outputs for the next layer.
//
// All parameters live in one flat vector (see Layout) so that the optimizer
// and the finite-difference checker can treat them uniformly.

#ifndef EMOCTC_NN_HPP_
#define EMOCTC_NN_HPP_

#include "emoctc/common.hpp"
#include "emoctc/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace emoctc::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Head { kCtc, kOneLabel };

struct NetworkConfig {
  int input_dim = 34;
  int blstm_layers = 2;
  int hidden_size = 64;  // per direction
  int num_emotions = kNumEmotions;
  Head head = Head::kCtc;
  int unified_len = 78;
  // One-label head only: stop the recurrences at the true length. Off by
  // default, which runs the cells over the padding as well.
  bool mask_one_label = false;

  int output_dim() const { return head == Head::kCtc ? num_emotions + 1 : num_emotions; }

  void validate() const {
    if (input_dim < 1 || blstm_layers < 1 || hidden_size < 1 || num_emotions < 1 || unified_len < 1) {
      throw Error(ErrorCode::kBadConfig, "network dimensions must be positive");
    }
  }
};

struct TrainingConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  int epochs = 30;
  uint64_t seed = 1;
  double clip_norm = 5.0;  // <= 0 disables clipping
  int patience = 10;       // epochs without validation improvement
  int beam_width = 4;      // CTC decoding during validation

  void validate() const {
    if (learning_rate < 0.0 || beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0 || epsilon <= 0.0 ||
        batch_size < 1 || epochs < 0 || patience < 1 || beam_width < 1) {
      throw Error(ErrorCode::kBadConfig, "invalid training configuration");
    }
  }
};

// Offsets of every tensor inside the flat parameter vector. Gate order in
// the stacked LSTM matrices is input, forget, candidate, output.
class Layout {
 public:
  struct Cell {
    std::size_t w = 0, u = 0, b = 0;
    int in = 0;
  };

  explicit Layout(const NetworkConfig& cfg) : hidden_(cfg.hidden_size), out_(cfg.output_dim()) {
    cfg.validate();
    std::size_t at = 0;
    for (int l = 0; l < cfg.blstm_layers; ++l) {
      const int in = l == 0 ? cfg.input_dim : 2 * cfg.hidden_size;
      for (int d = 0; d < 2; ++d) {
        Cell c;
        c.in = in;
        c.w = at;
        at += static_cast<std::size_t>(4 * hidden_ * in);
        c.u = at;
        at += static_cast<std::size_t>(4 * hidden_ * hidden_);
        c.b = at;
        at += static_cast<std::size_t>(4 * hidden_);
        cells_.push_back(c);
      }
    }
    dense_w_ = at;
    at += static_cast<std::size_t>(out_ * 2 * hidden_);
    dense_b_ = at;
    at += static_cast<std::size_t>(out_);
    size_ = at;
  }

  std::size_t size() const { return size_; }
  int hidden() const { return hidden_; }
  int layers() const { return static_cast<int>(cells_.size() / 2); }
  const Cell& cell(int layer, int dir) const { return cells_[static_cast<std::size_t>(2 * layer + dir)]; }
  std::size_t dense_w() const { return dense_w_; }
  std::size_t dense_b() const { return dense_b_; }
  int out() const { return out_; }

 private:
  int hidden_;
  int out_;
  std::vector<Cell> cells_;
  std::size_t dense_w_ = 0, dense_b_ = 0, size_ = 0;
};

using ConstMap = Eigen::Map<const MatrixXd>;
using MutMap = Eigen::Map<MatrixXd>;

// All weights and biases of a network, in one flat vector.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(const NetworkConfig& cfg) : config_(cfg), layout_(cfg), values_(layout_.size(), 0.0) {}

  // Uniform in [-scale, scale] with forget-gate biases set to +1.
  static ParameterSet initialized(const NetworkConfig& cfg, uint64_t seed, double scale = 0.08) {
    ParameterSet p(cfg);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-scale, scale);
    for (auto& v : p.values_) v = uni(rng);
    const int h = cfg.hidden_size;
    for (int l = 0; l < p.layout_.layers(); ++l) {
      for (int d = 0; d < 2; ++d) {
        const auto& c = p.layout_.cell(l, d);
        for (int i = 0; i < 4 * h; ++i) p.values_[c.b + static_cast<std::size_t>(i)] = (i >= h && i < 2 * h) ? 1.0 : 0.0;
      }
    }
    for (int i = 0; i < p.layout_.out(); ++i) p.values_[p.layout_.dense_b() + static_cast<std::size_t>(i)] = 0.0;
    return p;
  }

  const NetworkConfig& config() const { return config_; }
  const Layout& layout() const { return layout_; }
  std::vector<double>& flat() { return values_; }
  const std::vector<double>& flat() const { return values_; }
  std::size_t size() const { return values_.size(); }

 private:
  NetworkConfig config_;
  Layout layout_{NetworkConfig{}};
  std::vector<double> values_;
};

// A padded feature matrix (rows = time) with its real length and target.
// For the CTC head the target is the labeling; for the one-label head it is
// a single class index.
struct Sample {
  const RowMatrix* features = nullptr;
  int true_len = 0;
  std::vector<int> target;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct CellWeights {
  ConstMap w, u;
  Eigen::Map<const VectorXd> b;
};

inline CellWeights cell_weights(const Layout& layout, const double* data, int layer, int dir) {
  const auto& c = layout.cell(layer, dir);
  const int h4 = 4 * layout.hidden();
  return {ConstMap(data + c.w, h4, c.in), ConstMap(data + c.u, h4, layout.hidden()),
          Eigen::Map<const VectorXd>(data + c.b, h4)};
}

// One direction of one layer. Columns are time indices; `order` lists the
// processed columns in processing order.
struct DirectionCache {
  std::vector<int> order;
  MatrixXd gates;   // 4H x cols, post-activation
  MatrixXd cell;    // H x cols
  MatrixXd tanh_c;  // H x cols
  MatrixXd h;       // H x cols
};

inline DirectionCache run_direction(const CellWeights& wts, const MatrixXd& input, std::vector<int> order) {
  const auto hidden = wts.u.cols();
  const auto cols = input.cols();
  DirectionCache dc;
  dc.order = std::move(order);
  dc.gates = MatrixXd::Zero(4 * hidden, cols);
  dc.cell = MatrixXd::Zero(hidden, cols);
  dc.tanh_c = MatrixXd::Zero(hidden, cols);
  dc.h = MatrixXd::Zero(hidden, cols);
  if (dc.order.empty()) return dc;
  const MatrixXd wx = wts.w * input;
  VectorXd h_prev = VectorXd::Zero(hidden), c_prev = VectorXd::Zero(hidden), pre(4 * hidden);
  for (int t : dc.order) {
    pre.noalias() = wx.col(t) + wts.b;
    pre.noalias() += wts.u * h_prev;
    for (Eigen::Index j = 0; j < hidden; ++j) {
      const double i = sigmoid(pre(j));
      const double f = sigmoid(pre(hidden + j));
      const double g = std::tanh(pre(2 * hidden + j));
      const double o = sigmoid(pre(3 * hidden + j));
      const double c = f * c_prev(j) + i * g;
      const double tc = std::tanh(c);
      dc.gates(j, t) = i;
      dc.gates(hidden + j, t) = f;
      dc.gates(2 * hidden + j, t) = g;
      dc.gates(3 * hidden + j, t) = o;
      dc.cell(j, t) = c;
      dc.tanh_c(j, t) = tc;
      dc.h(j, t) = o * tc;
    }
    h_prev = dc.h.col(t);
    c_prev = dc.cell.col(t);
  }
  return dc;
}

// Backpropagation through time for one direction. dh holds d loss / d h at
// every column; returns d loss / d input and accumulates weight gradients.
inline MatrixXd backprop_direction(const CellWeights& wts, const MatrixXd& input, const DirectionCache& dc,
                                   const MatrixXd& dh, MutMap dw, MutMap du, Eigen::Map<VectorXd> db) {
  const auto hidden = wts.u.cols();
  const auto cols = input.cols();
  MatrixXd dpre = MatrixXd::Zero(4 * hidden, cols);
  MatrixXd h_prev_cols = MatrixXd::Zero(hidden, cols);
  VectorXd dh_next = VectorXd::Zero(hidden), dc_next = VectorXd::Zero(hidden);
  for (std::size_t idx = dc.order.size(); idx-- > 0;) {
    const int t = dc.order[idx];
    const int tp = idx > 0 ? dc.order[idx - 1] : -1;
    VectorXd dht = dh.col(t) + dh_next;
    for (Eigen::Index j = 0; j < hidden; ++j) {
      const double i = dc.gates(j, t), f = dc.gates(hidden + j, t), g = dc.gates(2 * hidden + j, t),
                   o = dc.gates(3 * hidden + j, t), tc = dc.tanh_c(j, t);
      const double c_prev = tp >= 0 ? dc.cell(j, tp) : 0.0;
      const double d_o = dht(j) * tc;
      const double d_c = dht(j) * o * (1.0 - tc * tc) + dc_next(j);
      dpre(j, t) = d_c * g * i * (1.0 - i);
      dpre(hidden + j, t) = d_c * c_prev * f * (1.0 - f);
      dpre(2 * hidden + j, t) = d_c * i * (1.0 - g * g);
      dpre(3 * hidden + j, t) = d_o * o * (1.0 - o);
      dc_next(j) = d_c * f;
    }
    if (tp >= 0) h_prev_cols.col(t) = dc.h.col(tp);
    dh_next.noalias() = wts.u.transpose() * dpre.col(t);
  }
  dw.noalias() += dpre * input.transpose();
  du.noalias() += dpre * h_prev_cols.transpose();
  db += dpre.rowwise().sum();
  return wts.w.transpose() * dpre;
}

struct LayerCache {
  MatrixXd input;
  DirectionCache fwd, bwd;
  MatrixXd output;  // 2H x cols: forward on top, backward below
};

inline std::vector<int> ascending(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

inline std::vector<int> descending(int n) {
  auto v = ascending(n);
  std::reverse(v.begin(), v.end());
  return v;
}

// Runs the BLSTM stack over input columns [0, fwd_len). Backward cells start
// at column bwd_len - 1; their output past bwd_len is zero.
inline std::vector<LayerCache> run_stack(const ParameterSet& params, const MatrixXd& x, int fwd_len, int bwd_len) {
  const auto& layout = params.layout();
  std::vector<LayerCache> caches(static_cast<std::size_t>(layout.layers()));
  const MatrixXd* input = &x;
  const int hidden = layout.hidden();
  for (int l = 0; l < layout.layers(); ++l) {
    auto& lc = caches[static_cast<std::size_t>(l)];
    lc.input = input->leftCols(fwd_len);
    lc.fwd = run_direction(cell_weights(layout, params.flat().data(), l, 0), lc.input, ascending(fwd_len));
    lc.bwd = run_direction(cell_weights(layout, params.flat().data(), l, 1), lc.input, descending(bwd_len));
    lc.output.resize(2 * hidden, fwd_len);
    lc.output.topRows(hidden) = lc.fwd.h;
    lc.output.bottomRows(hidden) = lc.bwd.h;
    input = &lc.output;
  }
  return caches;
}

inline void backprop_stack(const ParameterSet& params, const std::vector<LayerCache>& caches, MatrixXd d_out,
                           std::vector<double>& grad) {
  const auto& layout = params.layout();
  const int hidden = layout.hidden();
  const int h4 = 4 * hidden;
  for (int l = layout.layers() - 1; l >= 0; --l) {
    const auto& lc = caches[static_cast<std::size_t>(l)];
    MatrixXd d_in = MatrixXd::Zero(lc.input.rows(), lc.input.cols());
    for (int d = 0; d < 2; ++d) {
      const auto& c = layout.cell(l, d);
      const MatrixXd dh = d == 0 ? MatrixXd(d_out.topRows(hidden)) : MatrixXd(d_out.bottomRows(hidden));
      d_in += backprop_direction(cell_weights(layout, params.flat().data(), l, d), lc.input, d == 0 ? lc.fwd : lc.bwd,
                                 dh, MutMap(grad.data() + c.w, h4, c.in), MutMap(grad.data() + c.u, h4, hidden),
                                 Eigen::Map<VectorXd>(grad.data() + c.b, h4));
    }
    d_out = std::move(d_in);
  }
}

inline MatrixXd to_columns(const RowMatrix& features, int cols) {
  return features.topRows(cols).transpose();
}

inline void check_input(const ParameterSet& params, const RowMatrix& features, int true_len) {
  const auto& cfg = params.config();
  if (features.cols() != cfg.input_dim) {
    throw Error(ErrorCode::kShapeMismatch, "input has " + std::to_string(features.cols()) + " features, network expects " +
                                               std::to_string(cfg.input_dim));
  }
  if (features.rows() < 1 || true_len < 1 || true_len > features.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "true_len " + std::to_string(true_len) + " outside [1, " +
                                               std::to_string(features.rows()) + "]");
  }
}

inline void softmax_inplace(Eigen::Ref<VectorXd> v) {
  const double hi = v.maxCoeff();
  v = (v.array() - hi).exp();
  v /= v.sum();
}

}  // namespace detail

// Per-timestep posteriors for every input row. Backward cells see only the
// first true_len rows; rows past true_len are still row-stochastic but carry
// no backward context.
inline RowMatrix forward_sequence(const ParameterSet& params, const RowMatrix& features, int true_len) {
  detail::check_input(params, features, true_len);
  if (params.config().head != Head::kCtc) throw Error(ErrorCode::kShapeMismatch, "network has no per-timestep head");
  const int rows = static_cast<int>(features.rows());
  const auto caches = detail::run_stack(params, detail::to_columns(features, rows), rows, true_len);
  const auto& layout = params.layout();
  const ConstMap wd(params.flat().data() + layout.dense_w(), layout.out(), 2 * layout.hidden());
  const Eigen::Map<const VectorXd> bd(params.flat().data() + layout.dense_b(), layout.out());
  MatrixXd logits = wd * caches.back().output;
  logits.colwise() += bd;
  for (Eigen::Index t = 0; t < logits.cols(); ++t) detail::softmax_inplace(logits.col(t));
  return logits.transpose();
}

namespace detail {

inline std::pair<int, int> last_state_lengths(const ParameterSet& params, const RowMatrix& features, int true_len) {
  const int n = params.config().mask_one_label ? true_len : static_cast<int>(features.rows());
  return {n, n};
}

}  // namespace detail

// Distribution over the k emotions from the final layer's terminal states:
// the forward cell's last step and the backward cell's first-position output.
inline VectorXd forward_last_state(const ParameterSet& params, const RowMatrix& features, int true_len) {
  detail::check_input(params, features, true_len);
  if (params.config().head != Head::kOneLabel) throw Error(ErrorCode::kShapeMismatch, "network has no last-state head");
  const auto [fwd_len, bwd_len] = detail::last_state_lengths(params, features, true_len);
  const auto caches = detail::run_stack(params, detail::to_columns(features, fwd_len), fwd_len, bwd_len);
  const auto& layout = params.layout();
  const int hidden = layout.hidden();
  VectorXd last(2 * hidden);
  last.head(hidden) = caches.back().fwd.h.col(fwd_len - 1);
  last.tail(hidden) = caches.back().bwd.h.col(0);
  const ConstMap wd(params.flat().data() + layout.dense_w(), layout.out(), 2 * hidden);
  const Eigen::Map<const VectorXd> bd(params.flat().data() + layout.dense_b(), layout.out());
  VectorXd p = wd * last + bd;
  detail::softmax_inplace(p);
  return p;
}

struct LossAndGradient {
  double loss = 0.0;  // mean over the batch
  std::vector<double> gradient;
};

namespace detail {

inline double sample_loss(const ParameterSet& params, const Sample& s, std::vector<double>* grad) {
  const auto& layout = params.layout();
  const int hidden = layout.hidden();
  const ConstMap wd(params.flat().data() + layout.dense_w(), layout.out(), 2 * hidden);
  const Eigen::Map<const VectorXd> bd(params.flat().data() + layout.dense_b(), layout.out());
  const RowMatrix& features = *s.features;
  check_input(params, features, s.true_len);

  if (params.config().head == Head::kCtc) {
    // Rows past true_len never reach the loss, so the stack stops there.
    const int n = s.true_len;
    const auto caches = run_stack(params, to_columns(features, n), n, n);
    MatrixXd logits = wd * caches.back().output;
    logits.colwise() += bd;
    for (Eigen::Index t = 0; t < logits.cols(); ++t) softmax_inplace(logits.col(t));
    const RowMatrix y = logits.transpose();
    if (!grad) return ctc::labeling_log_prob(y, s.target, n) * -1.0;
    const auto ctc_result = ctc::ctc_loss_and_grad(y, s.target, n);
    if (!std::isfinite(ctc_result.loss)) return ctc_result.loss;
    // Softmax Jacobian: dz_c = y_c (g_c - sum_j y_j g_j).
    const MatrixXd dy = ctc_result.grad.transpose();
    const MatrixXd yt = y.transpose();
    MatrixXd d_logits = yt.cwiseProduct(dy);
    const Eigen::RowVectorXd inner = d_logits.colwise().sum();
    d_logits -= yt * inner.asDiagonal();
    MutMap(grad->data() + layout.dense_w(), layout.out(), 2 * hidden).noalias() +=
        d_logits * caches.back().output.transpose();
    Eigen::Map<VectorXd>(grad->data() + layout.dense_b(), layout.out()) += d_logits.rowwise().sum();
    backprop_stack(params, caches, wd.transpose() * d_logits, *grad);
    return ctc_result.loss;
  }

  if (s.target.size() != 1 || s.target[0] < 0 || s.target[0] >= layout.out()) {
    throw Error(ErrorCode::kBadArgument, "one-label target must be a single class index");
  }
  const auto [fwd_len, bwd_len] = last_state_lengths(params, features, s.true_len);
  const auto caches = run_stack(params, to_columns(features, fwd_len), fwd_len, bwd_len);
  VectorXd last(2 * hidden);
  last.head(hidden) = caches.back().fwd.h.col(fwd_len - 1);
  last.tail(hidden) = caches.back().bwd.h.col(0);
  VectorXd p = wd * last + bd;
  softmax_inplace(p);
  const int target = s.target[0];
  const double loss = -std::log(std::max(p(target), std::numeric_limits<double>::min()));
  if (!grad) return loss;
  VectorXd d_logits = p;
  d_logits(target) -= 1.0;
  MutMap(grad->data() + layout.dense_w(), layout.out(), 2 * hidden).noalias() += d_logits * last.transpose();
  Eigen::Map<VectorXd>(grad->data() + layout.dense_b(), layout.out()) += d_logits;
  const VectorXd d_last = wd.transpose() * d_logits;
  MatrixXd d_out = MatrixXd::Zero(2 * hidden, fwd_len);
  d_out.col(fwd_len - 1).head(hidden) = d_last.head(hidden);
  d_out.col(0).tail(hidden) = d_last.tail(hidden);
  backprop_stack(params, caches, std::move(d_out), *grad);
  return loss;
}

}  // namespace detail

// Mean loss over the batch, without gradients.
inline double batch_loss(const ParameterSet& params, std::span<const Sample> batch) {
  if (batch.empty()) throw Error(ErrorCode::kBadArgument, "empty batch");
  double total = 0.0;
  for (const auto& s : batch) total += detail::sample_loss(params, s, nullptr);
  return total / static_cast<double>(batch.size());
}

namespace detail {

inline LossAndGradient accumulate(const ParameterSet& params, std::span<const Sample> batch) {
  if (batch.empty()) throw Error(ErrorCode::kBadArgument, "empty batch");
  LossAndGradient out;
  out.gradient.assign(params.size(), 0.0);
  for (const auto& s : batch) out.loss += sample_loss(params, s, &out.gradient);
  const double scale = 1.0 / static_cast<double>(batch.size());
  out.loss *= scale;
  for (double& g : out.gradient) g *= scale;
  return out;
}

inline void check_gradient(const std::vector<double>& g) {
  for (double v : g) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteGradient, "gradient has a non-finite entry");
  }
}

}  // namespace detail

// Mean loss over the batch and its gradient with respect to every parameter.
inline LossAndGradient backprop(const ParameterSet& params, std::span<const Sample> batch) {
  auto out = detail::accumulate(params, batch);
  detail::check_gradient(out.gradient);
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference check

struct GradCheckResult {
  double max_relative_error = 0.0;
  int checked = 0;
};

// Compares backprop against central differences on `per_block` randomly
// chosen parameters from every BLSTM layer and from the dense head.
// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult gradient_check(const ParameterSet& params, std::span<const Sample> batch, uint64_t seed,
                                      int per_block = 20, double step = 1e-5, double floor = 1e-6) {
  const auto analytic = backprop(params, batch).gradient;
  const auto& layout = params.layout();
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (int l = 0; l < layout.layers(); ++l) {
    const std::size_t begin = layout.cell(l, 0).w;
    const std::size_t end = l + 1 < layout.layers() ? layout.cell(l + 1, 0).w : layout.dense_w();
    blocks.emplace_back(begin, end);
  }
  blocks.emplace_back(layout.dense_w(), layout.size());
  std::mt19937_64 rng(seed);
  ParameterSet probe = params;
  GradCheckResult out;
  for (const auto& [begin, end] : blocks) {
    std::uniform_int_distribution<std::size_t> pick(begin, end - 1);
    for (int i = 0; i < per_block; ++i) {
      const std::size_t j = pick(rng);
      const double saved = probe.flat()[j];
      probe.flat()[j] = saved + step;
      const double up = batch_loss(probe, batch);
      probe.flat()[j] = saved - step;
      const double down = batch_loss(probe, batch);
      probe.flat()[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      out.max_relative_error = std::max(out.max_relative_error, rel);
      ++out.checked;
    }
  }
  return out;
}

struct GradCheckSuiteConfig {
  int inputs = 20;     // random (parameters, sequence, target) draws per head
  int per_block = 40;  // probed parameters per layer and for the dense head
  int hidden_size = 5;
  int input_dim = 6;
  int max_frames = 12;
  double init_scale = 0.5;
  double step = 1e-5;
  double floor = 1e-5;  // denominator floor of the relative error
  double tolerance = 1e-4;
};

struct GradCheckSuiteResult {
  double max_relative_error = 0.0;
  double ctc_max_relative_error = 0.0;
  double onelabel_max_relative_error = 0.0;
  int inputs = 0;    // per head
  int checked = 0;   // total over both heads
  bool pass = false;
};

// Finite-difference checks of both heads on small random networks. Every
// draw gets fresh parameters, a random-length input and a random target
// (one to three labels for CTC).
inline GradCheckSuiteResult gradient_check_suite(uint64_t seed, const GradCheckSuiteConfig& cfg = {}) {
  GradCheckSuiteResult out;
  out.inputs = cfg.inputs;
  for (Head head : {Head::kCtc, Head::kOneLabel}) {
    NetworkConfig net;
    net.input_dim = cfg.input_dim;
    net.hidden_size = cfg.hidden_size;
    net.unified_len = cfg.max_frames;
    net.head = head;
    double& head_max = head == Head::kCtc ? out.ctc_max_relative_error : out.onelabel_max_relative_error;
    for (int r = 0; r < cfg.inputs; ++r) {
      std::seed_seq ss{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(head),
                       static_cast<uint32_t>(r)};
      std::mt19937_64 rng(ss);
      const uint64_t param_seed = rng();
      net.mask_one_label = head == Head::kOneLabel && (r % 2 == 1);
      const auto params = ParameterSet::initialized(net, param_seed, cfg.init_scale);
      std::normal_distribution<double> gauss(0.0, 1.0);
      RowMatrix x(cfg.max_frames, cfg.input_dim);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
      std::uniform_int_distribution<int> len(cfg.max_frames / 2, cfg.max_frames);
      std::uniform_int_distribution<int> label(0, net.num_emotions - 1);
      const int true_len = len(rng);
      std::vector<int> target{label(rng)};
      if (head == Head::kCtc) {
        const int extra = std::uniform_int_distribution<int>(0, 2)(rng);
        for (int e = 0; e < extra; ++e) target.push_back(label(rng));
      }
      const std::vector<Sample> batch{{&x, true_len, target}};
      const auto r1 = gradient_check(params, batch, rng(), cfg.per_block, cfg.step, cfg.floor);
      head_max = std::max(head_max, r1.max_relative_error);
      out.checked += r1.checked;
    }
  }
  out.max_relative_error = std::max(out.ctc_max_relative_error, out.onelabel_max_relative_error);
  out.pass = out.max_relative_error <= cfg.tolerance;
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

inline void adam_step(ParameterSet& params, std::span<const double> gradient, AdamState& state,
                      const TrainingConfig& cfg) {
  auto& w = params.flat();
  if (gradient.size() != w.size()) throw Error(ErrorCode::kShapeMismatch, "gradient size does not match parameters");
  if (state.m.empty()) {
    state.m.assign(w.size(), 0.0);
    state.v.assign(w.size(), 0.0);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gradient[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gradient[i] * gradient[i];
    w[i] -= cfg.learning_rate * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.epsilon);
  }
}

// Scales g so its Euclidean norm is at most max_norm. Returns the original norm.
inline double clip_gradient(std::span<double> g, double max_norm) {
  double sq = 0.0;
  for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (double& v : g) v *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Prediction

// Emotion index for one utterance. The CTC head decodes the first true_len
// rows with a prefix beam; when the decoded labeling is not exactly one
// emotion, the emotion c maximizing p(c | Y) is used instead.
inline int predict(const ParameterSet& params, const RowMatrix& features, int true_len, int beam_width = 4) {
  if (params.config().head == Head::kOneLabel) {
    const VectorXd p = forward_last_state(params, features, true_len);
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < p.size(); ++c) {
      if (p(c) > p(best)) best = c;
    }
    return static_cast<int>(best);
  }
  const RowMatrix y = forward_sequence(params, features, true_len);
  const auto decoded = ctc::beam_search_decode(y, true_len, beam_width);
  if (decoded.size() == 1) return decoded[0];
  int best = 0;
  double best_lp = logspace::kLogZero;
  for (int c = 0; c < params.config().num_emotions; ++c) {
    const double lp = ctc::labeling_log_prob(y, std::vector<int>{c}, true_len);
    if (lp > best_lp) {
      best_lp = lp;
      best = c;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_overall_accuracy = 0.0;
  double val_mean_class_accuracy = 0.0;
};

struct TrainResult {
  ParameterSet params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 when no validation set was given
};

namespace detail {

inline std::pair<double, double> accuracies(const ParameterSet& params, std::span<const Sample> samples,
                                            int num_classes, int beam_width) {
  std::vector<int> hit(static_cast<std::size_t>(num_classes), 0), seen(static_cast<std::size_t>(num_classes), 0);
  int correct = 0;
  for (const auto& s : samples) {
    const int truth = s.target.at(0);
    const bool ok = predict(params, *s.features, s.true_len, beam_width) == truth;
    correct += ok;
    ++seen[static_cast<std::size_t>(truth)];
    hit[static_cast<std::size_t>(truth)] += ok;
  }
  double mean = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (seen[static_cast<std::size_t>(c)] == 0) continue;
    mean += static_cast<double>(hit[static_cast<std::size_t>(c)]) / seen[static_cast<std::size_t>(c)];
    ++present;
  }
  return {static_cast<double>(correct) / static_cast<double>(samples.size()), present ? mean / present : 0.0};
}

}  // namespace detail

// Mini-batch Adam on the training samples. With a validation set, training
// stops after `patience` epochs without a better validation mean class
// accuracy (ties broken by lower validation loss) and the best parameters
// are returned; without one, all epochs run and the final parameters are
// returned. The split is the caller's.
inline TrainResult train(std::span<const Sample> training, std::span<const Sample> validation,
                         const NetworkConfig& net_cfg, const TrainingConfig& cfg) {
  cfg.validate();
  net_cfg.validate();
  if (training.empty()) throw Error(ErrorCode::kEmptyTraining, "no training samples");
  TrainResult result;
  result.params = ParameterSet::initialized(net_cfg, cfg.seed);
  AdamState adam;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(training.size());
  std::iota(order.begin(), order.end(), 0);

  ParameterSet best = result.params;
  double best_acc = -1.0, best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<Sample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        batch.push_back(training[order[i]]);
      }
      auto lg = detail::accumulate(result.params, batch);
      if (!std::isfinite(lg.loss)) {
        throw Error(ErrorCode::kDiverged, "non-finite training loss in epoch " + std::to_string(epoch));
      }
      detail::check_gradient(lg.gradient);
      epoch_loss += lg.loss * static_cast<double>(batch.size());
      clip_gradient(lg.gradient, cfg.clip_norm);
      adam_step(result.params, lg.gradient, adam, cfg);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(training.size());
    if (!validation.empty()) {
      rec.val_loss = batch_loss(result.params, validation);
      std::tie(rec.val_overall_accuracy, rec.val_mean_class_accuracy) =
          detail::accuracies(result.params, validation, net_cfg.num_emotions, cfg.beam_width);
      if (rec.val_mean_class_accuracy > best_acc ||
          (rec.val_mean_class_accuracy == best_acc && rec.val_loss < best_loss)) {
        best_acc = rec.val_mean_class_accuracy;
        best_loss = rec.val_loss;
        best = result.params;
        result.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    result.history.push_back(rec);
    if (!validation.empty() && since_best >= cfg.patience) break;
  }
  if (!validation.empty() && result.best_epoch > 0) result.params = std::move(best);
  return result;
}

}  // namespace emoctc::nn

#endif  // EMOCTC_NN_HPP_
