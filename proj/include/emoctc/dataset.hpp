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

// Corpus ingestion: expert-label resolution, the four-emotion filter, the
// line-delimited JSON manifest, a synthetic stand-in corpus and an importer
// for the IEMOCAP directory layout.

#ifndef EMOCTC_DATASET_HPP_
#define EMOCTC_DATASET_HPP_

#include "emoctc/common.hpp"
#include "emoctc/wav.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace emoctc::dataset {

inline constexpr int kSampleRate = 16000;

struct ExpertAnnotation {
  std::string utterance_id;
  std::string assessor_id;
  RawCategory answer = RawCategory::kOther;
};

struct LabeledUtterance {
  std::string id;
  std::vector<int16_t> samples;
  int sample_rate = kSampleRate;
  std::string speaker_id;
  std::string group_id;
  std::vector<ExpertAnnotation> experts;
  std::optional<RawCategory> final_label;
  int agreement_count = 0;
  bool overlapped = false;
  std::string audio_path;

  std::optional<Emotion> emotion() const {
    return final_label ? to_emotion(*final_label) : std::nullopt;
  }
  int dissent_count() const { return static_cast<int>(experts.size()) - agreement_count; }
};

struct Corpus {
  std::vector<LabeledUtterance> utterances;
  std::string provenance;

  std::size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }
};

// A category wins when at least half of the assessors chose it. Two
// categories at exactly half each is treated as disagreement.
inline std::optional<RawCategory> resolve_final_label(std::span<const ExpertAnnotation> annotations) {
  if (annotations.empty()) return std::nullopt;
  std::array<int, kNumRawCategories> counts{};
  for (const auto& a : annotations) ++counts[static_cast<std::size_t>(a.answer)];
  const int n = static_cast<int>(annotations.size());
  const int threshold = (n + 1) / 2;
  std::optional<RawCategory> winner;
  for (int c = 0; c < kNumRawCategories; ++c) {
    if (counts[static_cast<std::size_t>(c)] >= threshold) {
      if (winner) return std::nullopt;
      winner = static_cast<RawCategory>(c);
    }
  }
  return winner;
}

inline int agreement_count(std::span<const ExpertAnnotation> annotations, std::optional<RawCategory> label) {
  if (!label) return 0;
  return static_cast<int>(std::count_if(annotations.begin(), annotations.end(),
                                        [&](const ExpertAnnotation& a) { return a.answer == *label; }));
}

// Keeps utterances resolved to anger, excitement, neutral or sadness.
inline Corpus filter_four_emotions(const Corpus& corpus) {
  Corpus out;
  out.provenance = corpus.provenance;
  for (const auto& u : corpus.utterances) {
    if (u.emotion()) out.utterances.push_back(u);
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyCorpus, "no utterance carries one of the four emotions");
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
  std::string id;
  std::string audio;
  std::string speaker;
  std::string group;
  std::vector<std::pair<std::string, RawCategory>> experts;  // (assessor, answer)
  std::optional<RawCategory> label;
  std::optional<bool> overlapped;
};

inline nlohmann::json to_json(const ManifestRecord& r) {
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& [assessor, answer] : r.experts) {
    experts.push_back({{"assessor", assessor}, {"answer", std::string(raw_category_name(answer))}});
  }
  nlohmann::json j = {{"id", r.id}, {"audio", r.audio}, {"speaker", r.speaker},
                      {"group", r.group}, {"experts", experts}};
  j["label"] = r.label ? nlohmann::json(std::string(raw_category_name(*r.label))) : nlohmann::json(nullptr);
  if (r.overlapped) j["overlapped"] = *r.overlapped;
  return j;
}

inline ManifestRecord record_from_json(const nlohmann::json& j) {
  auto str = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string()) throw std::runtime_error(std::string("missing string field '") + key + "'");
    return j[key].get<std::string>();
  };
  auto category = [](const std::string& name) {
    auto c = parse_raw_category(name);
    if (!c) throw std::runtime_error("unknown emotion category '" + name + "'");
    return *c;
  };
  ManifestRecord r;
  r.id = str("id");
  r.audio = str("audio");
  r.speaker = str("speaker");
  r.group = str("group");
  if (!j.contains("experts") || !j["experts"].is_array()) throw std::runtime_error("missing array field 'experts'");
  for (const auto& e : j["experts"]) {
    r.experts.emplace_back(e.at("assessor").get<std::string>(), category(e.at("answer").get<std::string>()));
  }
  if (j.contains("label") && !j["label"].is_null()) r.label = category(j["label"].get<std::string>());
  if (j.contains("overlapped")) r.overlapped = j["overlapped"].get<bool>();
  return r;
}

inline std::vector<ManifestRecord> read_manifest_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

inline void write_manifest_records(const std::filesystem::path& path, std::span<const ManifestRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write manifest " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

// Reads and validates a manifest; audio paths are relative to its directory.
inline Corpus load_manifest(const std::filesystem::path& path) {
  const auto records = read_manifest_records(path);
  if (records.empty()) throw Error(ErrorCode::kEmptyCorpus, path.string() + " has no records");
  const auto base = path.parent_path();
  Corpus corpus;
  corpus.provenance = "manifest " + path.string();
  std::set<std::string> ids;
  std::map<std::string, std::string> speaker_group;
  int line_no = 0;
  for (const auto& r : records) {
    ++line_no;
    auto where = [&] { return path.string() + " record " + std::to_string(line_no) + " (" + r.id + ")"; };
    if (!ids.insert(r.id).second) throw Error(ErrorCode::kParseError, where() + ": duplicate id");
    if (r.group.empty()) throw Error(ErrorCode::kParseError, where() + ": empty group");
    if (r.experts.empty()) throw Error(ErrorCode::kParseError, where() + ": no expert annotations");
    auto [it, inserted] = speaker_group.emplace(r.speaker, r.group);
    if (!inserted && it->second != r.group) {
      throw Error(ErrorCode::kParseError, where() + ": speaker " + r.speaker + " appears in two groups");
    }
    LabeledUtterance u;
    u.id = r.id;
    u.speaker_id = r.speaker;
    u.group_id = r.group;
    u.overlapped = r.overlapped.value_or(false);
    for (const auto& [assessor, answer] : r.experts) u.experts.push_back({r.id, assessor, answer});
    u.final_label = resolve_final_label(u.experts);
    if (u.final_label != r.label) {
      throw Error(ErrorCode::kParseError, where() + ": label does not match the expert majority");
    }
    u.agreement_count = agreement_count(u.experts, u.final_label);
    std::filesystem::path audio = r.audio;
    if (audio.is_relative()) audio = base / audio;
    if (!std::filesystem::exists(audio)) throw Error(ErrorCode::kMissingAudio, where() + ": " + audio.string());
    auto wav = wav::read(audio);
    if (wav.sample_rate != kSampleRate) {
      throw Error(ErrorCode::kBadSampleRate, where() + ": " + std::to_string(wav.sample_rate) + " Hz");
    }
    if (wav.channels != 1) throw Error(ErrorCode::kParseError, where() + ": audio is not mono");
    u.samples = std::move(wav.samples);
    u.audio_path = audio.string();
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

inline ManifestRecord to_record(const LabeledUtterance& u, std::string audio) {
  ManifestRecord r;
  r.id = u.id;
  r.audio = std::move(audio);
  r.speaker = u.speaker_id;
  r.group = u.group_id;
  for (const auto& e : u.experts) r.experts.emplace_back(e.assessor_id, e.answer);
  r.label = u.final_label;
  if (u.overlapped) r.overlapped = true;
  return r;
}

// Writes <dir>/audio/<id>.wav, <dir>/manifest.jsonl and <dir>/provenance.txt.
inline std::filesystem::path write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir / "audio");
  std::vector<ManifestRecord> records;
  for (const auto& u : corpus.utterances) {
    const std::string rel = "audio/" + u.id + ".wav";
    wav::write(dir / rel, u.samples, u.sample_rate);
    records.push_back(to_record(u, rel));
  }
  const auto manifest = dir / "manifest.jsonl";
  write_manifest_records(manifest, records);
  std::ofstream(dir / "provenance.txt", std::ios::trunc) << corpus.provenance << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticConfig {
  uint64_t seed = 1;
  int n_per_class = 25;
  double min_duration_s = 1.0;
  double max_duration_s = 4.0;
  double disagreement_rate = 0.3;  // chance that one assessor dissents
  int n_unresolved = 0;            // extra utterances with no majority
  int n_other_class = 0;           // extra utterances resolved outside the four emotions
  double snr_db = 10.0;
};

// Class signatures, indexed by Emotion. The values are arbitrary; they only
// need to be distinct enough to be separable in the spectral features.
inline constexpr std::array<double, kNumEmotions> kCarrierHz = {220.0, 330.0, 440.0, 550.0};
inline constexpr std::array<double, kNumEmotions> kModulationHz = {2.0, 4.0, 6.0, 8.0};
inline constexpr int kSyntheticSpeakers = 10;

struct SyntheticCorpus {
  Corpus corpus;
  std::array<int, kNumEmotions> class_counts{};
  int unresolved = 0;
  int other_class = 0;
};

namespace detail {

inline constexpr double kNoisePole = 0.95;

inline std::vector<int16_t> synth_tone(std::mt19937_64& rng, double seconds, double carrier_hz,
                                       double am_hz, double gain, double snr_db) {
  const auto n = static_cast<std::size_t>(std::lround(seconds * kSampleRate));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double p0 = phase(rng);
  const double p1 = phase(rng);
  std::vector<double> clean(n);
  double power = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    const double envelope = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * am_hz * t + p0);
    const double tone = std::sin(2.0 * std::numbers::pi * carrier_hz * t + p1) +
                        0.3 * std::sin(4.0 * std::numbers::pi * carrier_hz * t + p1);
    clean[i] = gain * envelope * tone;
    power += clean[i] * clean[i];
  }
  power /= std::max<std::size_t>(n, 1);
  // Low-passed (one-pole) Gaussian noise, rescaled to the requested SNR.
  std::normal_distribution<double> white(0.0, 1.0);
  std::vector<double> noise(n);
  double state = 0.0, noise_power = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    state = kNoisePole * state + (1.0 - kNoisePole) * white(rng);
    noise[i] = state;
    noise_power += state * state;
  }
  noise_power /= std::max<std::size_t>(n, 1);
  const double noise_gain =
      noise_power > 0.0 ? std::sqrt(power / std::pow(10.0, snr_db / 10.0) / noise_power) : 0.0;
  std::vector<int16_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = (clean[i] + noise_gain * noise[i]) * 32767.0;
    out[i] = static_cast<int16_t>(std::clamp(std::lround(v), -32768L, 32767L));
  }
  return out;
}

inline RawCategory other_category(std::mt19937_64& rng, RawCategory not_this) {
  std::uniform_int_distribution<int> pick(0, kNumRawCategories - 2);
  int c = pick(rng);
  if (c >= static_cast<int>(not_this)) ++c;
  return static_cast<RawCategory>(c);
}

}  // namespace detail

inline std::string synthetic_speaker(int s) { return "spk" + std::to_string(s); }
inline std::string synthetic_group(int s) { return "pair" + std::to_string(s / 2); }

// Deterministic in its arguments. Ten speakers in five recording pairs; the
// i-th utterance of every class goes to speaker i mod 10, so each pair holds
// the same class mix. At most one assessor dissents on the four-class
// utterances, which keeps the majority label equal to the generated class.
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& cfg) {
  if (cfg.n_per_class < 1) throw Error(ErrorCode::kBadConfig, "n_per_class must be >= 1");
  if (!(cfg.min_duration_s >= 0.5 && cfg.max_duration_s <= 12.0 && cfg.min_duration_s <= cfg.max_duration_s)) {
    throw Error(ErrorCode::kBadConfig, "durations must satisfy 0.5 <= min <= max <= 12 seconds");
  }
  if (cfg.disagreement_rate < 0.0 || cfg.disagreement_rate > 1.0 || cfg.n_unresolved < 0 || cfg.n_other_class < 0) {
    throw Error(ErrorCode::kBadConfig, "invalid disagreement rate or extra counts");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> duration(cfg.min_duration_s, cfg.max_duration_s);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution four_experts(0.5);

  SyntheticCorpus out;
  out.corpus.provenance = "synthetic corpus (seed " + std::to_string(cfg.seed) + ", " +
                          std::to_string(cfg.n_per_class) + " per class); not real speech";

  auto speaker_gain = [](int s) { return 0.2 + 0.02 * s; };
  auto speaker_pitch = [](int s) { return 1.0 + 0.01 * (s - 4.5); };

  auto make = [&](const std::string& id, int speaker, std::vector<RawCategory> answers, double carrier,
                  double am) {
    LabeledUtterance u;
    u.id = id;
    u.speaker_id = synthetic_speaker(speaker);
    u.group_id = synthetic_group(speaker);
    u.samples = detail::synth_tone(rng, duration(rng), carrier * speaker_pitch(speaker), am,
                                   speaker_gain(speaker), cfg.snr_db);
    for (std::size_t a = 0; a < answers.size(); ++a) {
      u.experts.push_back({id, "E" + std::to_string(a + 1), answers[a]});
    }
    u.final_label = resolve_final_label(u.experts);
    u.agreement_count = agreement_count(u.experts, u.final_label);
    return u;
  };

  for (int c = 0; c < kNumEmotions; ++c) {
    const auto emotion = static_cast<Emotion>(c);
    for (int i = 0; i < cfg.n_per_class; ++i) {
      const int n_experts = four_experts(rng) ? 4 : 3;
      std::vector<RawCategory> answers(static_cast<std::size_t>(n_experts), to_raw(emotion));
      if (unit(rng) < cfg.disagreement_rate) {
        const auto who = static_cast<std::size_t>(rng() % static_cast<uint64_t>(n_experts));
        answers[who] = detail::other_category(rng, to_raw(emotion));
      }
      char id[64];
      std::snprintf(id, sizeof(id), "syn_%s_%03d", std::string(emotion_name(emotion)).c_str(), i);
      out.corpus.utterances.push_back(
          make(id, i % kSyntheticSpeakers, answers, kCarrierHz[static_cast<std::size_t>(c)],
               kModulationHz[static_cast<std::size_t>(c)]));
      ++out.class_counts[static_cast<std::size_t>(c)];
    }
  }
  for (int i = 0; i < cfg.n_unresolved; ++i) {
    // Two-two split between two of the four emotions: no majority.
    const auto a = to_raw(static_cast<Emotion>(i % kNumEmotions));
    const auto b = to_raw(static_cast<Emotion>((i + 1) % kNumEmotions));
    char id[64];
    std::snprintf(id, sizeof(id), "syn_unresolved_%03d", i);
    out.corpus.utterances.push_back(make(id, i % kSyntheticSpeakers, {a, a, b, b}, 660.0, 3.0));
    ++out.unresolved;
  }
  for (int i = 0; i < cfg.n_other_class; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "syn_other_%03d", i);
    const auto c = i % 2 == 0 ? RawCategory::kFrustration : RawCategory::kHappiness;
    out.corpus.utterances.push_back(make(id, i % kSyntheticSpeakers, {c, c, RawCategory::kNeutral}, 770.0, 5.0));
    ++out.other_class;
  }
  return out;
}

// ---------------------------------------------------------------------------
// IEMOCAP import

struct ImportResult {
  std::vector<ManifestRecord> records;
  std::vector<std::string> skipped;  // "<utterance id>: reason"
  int unresolved = 0;
};

namespace detail {

inline std::optional<RawCategory> parse_iemocap_category(std::string text) {
  auto cut = text.find_first_of(";:(");
  if (cut != std::string::npos) text.resize(cut);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.erase(text.begin());
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (text == "neutral state") text = "neutral";
  return parse_raw_category(text);
}

}  // namespace detail

// Walks Session*/dialog/EmoEvaluation/*.txt and pairs each evaluated turn
// with Session*/sentences/wav/<dialog>/<turn>.wav. The group is the session
// (one recorded speaker pair); every categorical evaluation line ("C-...")
// counts as one assessor, using the first category it lists.
inline ImportResult import_iemocap(const std::filesystem::path& root, bool strict = false) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error(ErrorCode::kLayoutNotRecognized, root.string() + " is not a directory");
  std::vector<fs::path> sessions;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("Session", 0) == 0 &&
        fs::is_directory(entry.path() / "dialog" / "EmoEvaluation")) {
      sessions.push_back(entry.path());
    }
  }
  if (sessions.empty()) throw Error(ErrorCode::kLayoutNotRecognized, "no Session*/dialog/EmoEvaluation under " + root.string());
  std::sort(sessions.begin(), sessions.end());

  const std::regex turn_re(R"(^\[(\d+(?:\.\d+)?) - (\d+(?:\.\d+)?)\]\s+(\S+)\s+(\S+)\s+\[.*$)");
  const std::regex eval_re(R"(^C-\S+:\s*(.*)$)");
  ImportResult result;
  for (const auto& session : sessions) {
    const std::string group = session.filename().string();
    std::vector<fs::path> evals;
    for (const auto& entry : fs::directory_iterator(session / "dialog" / "EmoEvaluation")) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") evals.push_back(entry.path());
    }
    std::sort(evals.begin(), evals.end());
    for (const auto& eval_file : evals) {
      struct Turn {
        ManifestRecord record;
        double start = 0.0, end = 0.0;
      };
      std::vector<Turn> turns;
      std::ifstream in(eval_file);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::smatch m;
        if (std::regex_match(line, m, turn_re)) {
          Turn t;
          t.start = std::stod(m[1]);
          t.end = std::stod(m[2]);
          t.record.id = m[3];
          turns.push_back(std::move(t));
        } else if (!turns.empty() && std::regex_match(line, m, eval_re)) {
          const std::string who = line.substr(0, line.find(':'));
          if (auto c = detail::parse_iemocap_category(m[1])) {
            turns.back().record.experts.emplace_back(who, *c);
          }
        }
      }
      for (auto& t : turns) {
        auto& r = t.record;
        const auto dialog = r.id.substr(0, r.id.rfind('_'));
        const auto wav_path = session / "sentences" / "wav" / dialog / (r.id + ".wav");
        if (r.experts.empty()) {
          result.skipped.push_back(r.id + ": no categorical evaluations");
          continue;
        }
        if (!fs::exists(wav_path)) {
          result.skipped.push_back(r.id + ": missing " + wav_path.string());
          continue;
        }
        const auto last = r.id.substr(r.id.rfind('_') + 1);
        r.speaker = r.id.substr(0, 5) + (last.empty() ? "?" : last.substr(0, 1));
        r.group = group;
        r.audio = fs::absolute(wav_path).string();
        std::vector<ExpertAnnotation> ann;
        for (const auto& [a, c] : r.experts) ann.push_back({r.id, a, c});
        r.label = resolve_final_label(ann);
        if (!r.label) ++result.unresolved;
        bool overlapped = false;
        for (const auto& other : turns) {
          if (&other == &t) continue;
          const auto other_last = other.record.id.substr(other.record.id.rfind('_') + 1);
          if (other_last.substr(0, 1) == last.substr(0, 1)) continue;
          overlapped |= other.start < t.end && t.start < other.end;
        }
        if (overlapped) r.overlapped = true;
        result.records.push_back(r);
      }
    }
  }
  if (strict && !result.skipped.empty()) {
    throw Error(ErrorCode::kPartialImport, std::to_string(result.skipped.size()) + " turns skipped, first: " +
                                               result.skipped.front());
  }
  return result;
}

}  // namespace emoctc::dataset

#endif  // EMOCTC_DATASET_HPP_
