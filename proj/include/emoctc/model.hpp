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

// One trained classifier of any method behind a common fit/predict surface,
// plus its JSON checkpoint.

#ifndef EMOCTC_MODEL_HPP_
#define EMOCTC_MODEL_HPP_

#include "emoctc/baselines.hpp"
#include "emoctc/common.hpp"
#include "emoctc/ctc.hpp"
#include "emoctc/dataset.hpp"
#include "emoctc/features.hpp"
#include "emoctc/nn.hpp"

#include "json.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace emoctc::model {

enum class Method { kDummy, kFramewise, kOneLabel, kCtc };

inline constexpr std::array<std::string_view, 4> kMethodNames = {"dummy", "framewise", "onelabel", "ctc"};

inline std::string_view method_name(Method m) { return kMethodNames[static_cast<std::size_t>(m)]; }

inline Method parse_method(std::string_view s) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i) {
    if (kMethodNames[i] == s) return static_cast<Method>(i);
  }
  throw Error(ErrorCode::kBadArgument, "unknown method '" + std::string(s) + "' (dummy, framewise, onelabel, ctc)");
}

struct FitConfig {
  nn::NetworkConfig network;
  nn::TrainingConfig training;
  baselines::ForestConfig forest;
  // Recurrent methods: hold out one training group, picked with the seed,
  // for early stopping.
  bool validation = true;
  uint64_t seed = 1;
};

struct TrainedModel {
  Method method = Method::kDummy;
  baselines::DummyModel dummy;
  std::optional<baselines::DecisionForest> forest;
  nn::ParameterSet params;
  features::Normalizer normalizer;
  int beam_width = 4;
  // Training record for recurrent methods.
  std::vector<nn::EpochRecord> history;
  int best_epoch = 0;
  std::string validation_group;
};

namespace detail {

inline int label_of(const dataset::LabeledUtterance& u) {
  const auto e = u.emotion();
  if (!e) throw Error(ErrorCode::kBadArgument, "utterance " + u.id + " is outside the 4 emotions");
  return static_cast<int>(*e);
}

inline features::FeatureSequence prepare(const TrainedModel& m, const features::FeatureSequence& seq) {
  return features::apply_normalizer(features::pad_or_truncate(seq, m.params.config().unified_len), m.normalizer);
}

}  // namespace detail

// Fits a model on the utterances listed in `train` (indices into corpus and
// seqs, which hold the unpadded feature sequence of every utterance).
inline TrainedModel fit(Method method, const dataset::Corpus& corpus, std::span<const features::FeatureSequence> seqs,
                        std::span<const std::size_t> train, const FitConfig& cfg) {
  if (seqs.size() != corpus.utterances.size()) {
    throw Error(ErrorCode::kLengthMismatch, "one feature sequence per utterance required");
  }
  if (train.empty()) throw Error(ErrorCode::kEmptyTraining, "no training utterances");
  TrainedModel m;
  m.method = method;
  m.beam_width = cfg.training.beam_width;
  if (method == Method::kDummy) {
    std::vector<int> y;
    for (auto i : train) y.push_back(detail::label_of(corpus.utterances[i]));
    m.dummy = baselines::dummy_fit(y);
    return m;
  }
  if (method == Method::kFramewise) {
    std::vector<features::FeatureSequence> xs;
    std::vector<int> y;
    for (auto i : train) {
      xs.push_back(seqs[i]);
      y.push_back(detail::label_of(corpus.utterances[i]));
    }
    auto fc = cfg.forest;
    fc.seed = cfg.seed;
    m.forest = baselines::train_framewise(xs, y, fc);
    return m;
  }

  std::set<std::string> groups;
  for (auto i : train) groups.insert(corpus.utterances[i].group_id);
  if (cfg.validation && groups.size() > 1) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, groups.size() - 1);
    m.validation_group = *std::next(groups.begin(), static_cast<std::ptrdiff_t>(pick(rng)));
  }
  auto net = cfg.network;
  net.head = method == Method::kCtc ? nn::Head::kCtc : nn::Head::kOneLabel;
  std::vector<std::size_t> fit_idx, val_idx;
  std::vector<features::FeatureSequence> fit_seqs;
  for (auto i : train) {
    if (!m.validation_group.empty() && corpus.utterances[i].group_id == m.validation_group) {
      val_idx.push_back(i);
    } else {
      fit_idx.push_back(i);
      fit_seqs.push_back(features::pad_or_truncate(seqs[i], net.unified_len));
    }
  }
  m.normalizer = features::fit_normalizer(fit_seqs);
  m.params = nn::ParameterSet(net);
  std::vector<features::FeatureSequence> prepared;
  prepared.reserve(train.size());
  auto samples = [&](const std::vector<std::size_t>& idx) {
    std::vector<nn::Sample> out;
    for (auto i : idx) {
      prepared.push_back(detail::prepare(m, seqs[i]));
      out.push_back({&prepared.back().matrix, prepared.back().true_len, {detail::label_of(corpus.utterances[i])}});
    }
    return out;
  };
  const auto fit_samples = samples(fit_idx);
  const auto val_samples = samples(val_idx);
  auto tc = cfg.training;
  tc.seed = cfg.seed;
  auto result = nn::train(fit_samples, val_samples, net, tc);
  m.params = std::move(result.params);
  m.history = std::move(result.history);
  m.best_epoch = result.best_epoch;
  return m;
}

inline int predict(const TrainedModel& m, const features::FeatureSequence& seq) {
  switch (m.method) {
    case Method::kDummy: return m.dummy.predict();
    case Method::kFramewise: return baselines::predict_framewise(*m.forest, seq);
    default: {
      const auto p = detail::prepare(m, seq);
      return nn::predict(m.params, p.matrix, p.true_len, m.beam_width);
    }
  }
}

// Decoded CTC labeling (may be empty or longer than one label).
inline std::vector<int> decode_labeling(const TrainedModel& m, const features::FeatureSequence& seq) {
  if (m.method != Method::kCtc) throw Error(ErrorCode::kBadArgument, "only ctc models decode labelings");
  const auto p = detail::prepare(m, seq);
  return ctc::beam_search_decode(nn::forward_sequence(m.params, p.matrix, p.true_len), p.true_len, m.beam_width);
}

// Per-frame class distributions over the valid frames: forest output for
// framewise, posteriors (with NULL last) for ctc. Empty for other methods.
inline RowMatrix frame_trace(const TrainedModel& m, const features::FeatureSequence& seq) {
  if (m.method == Method::kFramewise) return baselines::frame_probabilities(*m.forest, seq);
  if (m.method == Method::kCtc) {
    const auto p = detail::prepare(m, seq);
    return nn::forward_sequence(m.params, p.matrix, p.true_len).topRows(p.true_len);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Checkpoint

inline constexpr std::string_view kCheckpointFormat = "emoctc-model";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const TrainedModel& m) {
  nlohmann::json alphabet = nlohmann::json::array();
  for (auto n : kEmotionNames) alphabet.push_back(n);
  if (m.method == Method::kCtc) alphabet.push_back(ctc::Alphabet::kNullName);
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"method", method_name(m.method)},
                      {"alphabet", alphabet}};
  switch (m.method) {
    case Method::kDummy: j["majority_label"] = kEmotionNames[static_cast<std::size_t>(m.dummy.majority_label)]; break;
    case Method::kFramewise: j["forest"] = m.forest->to_json(); break;
    default: {
      const auto& c = m.params.config();
      j["network"] = {{"input_dim", c.input_dim},     {"blstm_layers", c.blstm_layers},
                      {"hidden_size", c.hidden_size}, {"num_emotions", c.num_emotions},
                      {"unified_len", c.unified_len}, {"mask_one_label", c.mask_one_label}};
      j["beam_width"] = m.beam_width;
      j["normalizer"] = {{"mean", m.normalizer.mean}, {"stddev", m.normalizer.stddev}};
      j["params"] = m.params.flat();
      j["best_epoch"] = m.best_epoch;
      j["epochs"] = m.history.size();
      j["validation_group"] = m.validation_group;
    }
  }
  return j;
}

inline TrainedModel from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != kCheckpointFormat) throw Error(ErrorCode::kParseError, "not an emoctc model checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::kParseError, "unsupported checkpoint version " + j.at("version").dump());
    }
    TrainedModel m;
    m.method = parse_method(j.at("method").get<std::string>());
    switch (m.method) {
      case Method::kDummy: {
        const auto e = parse_emotion(j.at("majority_label").get<std::string>());
        if (!e) throw Error(ErrorCode::kParseError, "bad majority_label");
        m.dummy.majority_label = static_cast<int>(*e);
        break;
      }
      case Method::kFramewise: m.forest = baselines::DecisionForest::from_json(j.at("forest")); break;
      default: {
        const auto& n = j.at("network");
        nn::NetworkConfig c;
        c.input_dim = n.at("input_dim");
        c.blstm_layers = n.at("blstm_layers");
        c.hidden_size = n.at("hidden_size");
        c.num_emotions = n.at("num_emotions");
        c.unified_len = n.at("unified_len");
        c.mask_one_label = n.at("mask_one_label");
        c.head = m.method == Method::kCtc ? nn::Head::kCtc : nn::Head::kOneLabel;
        m.params = nn::ParameterSet(c);
        const auto flat = j.at("params").get<std::vector<double>>();
        if (flat.size() != m.params.size()) {
          throw Error(ErrorCode::kParseError, "checkpoint has " + std::to_string(flat.size()) +
                                                  " parameters, network needs " + std::to_string(m.params.size()));
        }
        m.params.flat() = flat;
        m.beam_width = j.at("beam_width");
        m.normalizer.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
        m.normalizer.stddev = j.at("normalizer").at("stddev").get<std::vector<double>>();
        if (static_cast<int>(m.normalizer.mean.size()) != c.input_dim ||
            static_cast<int>(m.normalizer.stddev.size()) != c.input_dim) {
          throw Error(ErrorCode::kParseError, "normalizer width does not match the network input");
        }
        m.best_epoch = j.value("best_epoch", 0);
        m.validation_group = j.value("validation_group", std::string());
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("bad model checkpoint: ") + e.what());
  }
}

inline void save(const std::filesystem::path& path, const TrainedModel& m) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << to_json(m).dump() << '\n';
  if (!out) throw Error(ErrorCode::kIoError, "write to " + path.string() + " failed");
}

inline TrainedModel load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
}

}  // namespace emoctc::model

#endif  // EMOCTC_MODEL_HPP_
