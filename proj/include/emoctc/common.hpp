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

#ifndef EMOCTC_COMMON_HPP_
#define EMOCTC_COMMON_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace emoctc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorCode {
  kBadArgument,
  kEmptyCorpus,
  kParseError,
  kMissingAudio,
  kBadSampleRate,
  kBadConfig,
  kLayoutNotRecognized,
  kPartialImport,
  kEmptySignal,
  kNonFiniteFeature,
  kLengthMismatch,
  kTooLargeToEnumerate,
  kInfeasibleLabeling,
  kBadWidth,
  kShapeMismatch,
  kNonFiniteGradient,
  kDiverged,
  kEmptyTraining,
  kEmpty,
  kTooFewGroups,
  kMissingExpertData,
  kUnknownSession,
  kDuplicateAnswer,
  kNotServed,
  kNoData,
  kIoError,
  kOutputExists,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBadArgument: return "BadArgument";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kMissingAudio: return "MissingAudio";
    case ErrorCode::kBadSampleRate: return "BadSampleRate";
    case ErrorCode::kBadConfig: return "BadConfig";
    case ErrorCode::kLayoutNotRecognized: return "LayoutNotRecognized";
    case ErrorCode::kPartialImport: return "PartialImport";
    case ErrorCode::kEmptySignal: return "EmptySignal";
    case ErrorCode::kNonFiniteFeature: return "NonFiniteFeature";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kTooLargeToEnumerate: return "TooLargeToEnumerate";
    case ErrorCode::kInfeasibleLabeling: return "InfeasibleLabeling";
    case ErrorCode::kBadWidth: return "BadWidth";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kDiverged: return "Diverged";
    case ErrorCode::kEmptyTraining: return "EmptyTraining";
    case ErrorCode::kEmpty: return "Empty";
    case ErrorCode::kTooFewGroups: return "TooFewGroups";
    case ErrorCode::kMissingExpertData: return "MissingExpertData";
    case ErrorCode::kUnknownSession: return "UnknownSession";
    case ErrorCode::kDuplicateAnswer: return "DuplicateAnswer";
    case ErrorCode::kNotServed: return "NotServed";
    case ErrorCode::kNoData: return "NoData";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kOutputExists: return "OutputExists";
  }
  return "Unknown";
}

// Every failure in the library is reported through this exception; code()
// identifies the failure class, what() carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// The four emotions used for training and evaluation, in class-index order.
enum class Emotion : int { kAnger = 0, kExcitement = 1, kNeutral = 2, kSadness = 3 };

inline constexpr int kNumEmotions = 4;

inline constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "anger", "excitement", "neutral", "sadness"};

inline std::string_view emotion_name(Emotion e) { return kEmotionNames[static_cast<int>(e)]; }

inline std::optional<Emotion> parse_emotion(std::string_view name) {
  for (int i = 0; i < kNumEmotions; ++i) {
    if (kEmotionNames[i] == name) return static_cast<Emotion>(i);
  }
  return std::nullopt;
}

// The ten answer categories of the expert evaluation form.
enum class RawCategory : int {
  kNeutral = 0,
  kHappiness,
  kSadness,
  kAnger,
  kSurprise,
  kFear,
  kDisgust,
  kFrustration,
  kExcited,
  kOther,
};

inline constexpr int kNumRawCategories = 10;

inline constexpr std::array<std::string_view, kNumRawCategories> kRawCategoryNames = {
    "neutral", "happiness", "sadness", "anger", "surprise",
    "fear", "disgust", "frustration", "excited", "other"};

inline std::string_view raw_category_name(RawCategory c) {
  return kRawCategoryNames[static_cast<int>(c)];
}

// Accepts the form's category names plus "excitement" as an alias of "excited".
inline std::optional<RawCategory> parse_raw_category(std::string_view name) {
  if (name == "excitement") return RawCategory::kExcited;
  for (int i = 0; i < kNumRawCategories; ++i) {
    if (kRawCategoryNames[i] == name) return static_cast<RawCategory>(i);
  }
  return std::nullopt;
}

inline std::optional<Emotion> to_emotion(RawCategory c) {
  switch (c) {
    case RawCategory::kAnger: return Emotion::kAnger;
    case RawCategory::kExcited: return Emotion::kExcitement;
    case RawCategory::kNeutral: return Emotion::kNeutral;
    case RawCategory::kSadness: return Emotion::kSadness;
    default: return std::nullopt;
  }
}

inline RawCategory to_raw(Emotion e) {
  switch (e) {
    case Emotion::kAnger: return RawCategory::kAnger;
    case Emotion::kExcitement: return RawCategory::kExcited;
    case Emotion::kNeutral: return RawCategory::kNeutral;
    case Emotion::kSadness: return RawCategory::kSadness;
  }
  return RawCategory::kOther;
}

namespace logspace {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline double safe_log(double x) { return x > 0.0 ? std::log(x) : kLogZero; }

}  // namespace logspace

}  // namespace emoctc

#endif  // EMOCTC_COMMON_HPP_
