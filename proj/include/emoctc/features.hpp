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

// Short-time acoustic features: 200 ms frames every 100 ms, 34 values per
// frame, plus the padding and z-score normalization used before training.
//
// Feature layout (index: meaning):
//   0 zero-crossing rate          1 energy (mean squared amplitude)
//   2 entropy of energy           3 spectral centroid
//   4 spectral spread             5 spectral entropy
//   6 spectral flux               7 spectral rolloff (90%)
//   8..20 MFCC 0..12             21..32 chroma C..B
//  33 chroma standard deviation
//
// Conventions: samples are scaled to [-1, 1); the spectrum is the magnitude
// of the DFT of the Hamming-windowed frame divided by the frame length;
// centroid, spread and rolloff are normalized by the Nyquist frequency (so
// 1 kHz at 16 kHz reads 0.125); entropies use 10 equal blocks and log2.
// On a zero-energy frame the centroid, spread, spectral entropy, rolloff and
// chroma are 0 and the MFCC mel energies are floored at 1e-10.

#ifndef EMOCTC_FEATURES_HPP_
#define EMOCTC_FEATURES_HPP_

#include "emoctc/common.hpp"
#include "emoctc/dataset.hpp"
#include "emoctc/parallel.hpp"

#include <fftw3.h>

#include <cmath>
#include <bit>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace emoctc::features {

inline constexpr int kFeatureDim = 34;
inline constexpr int kUnifiedLen = 78;
inline constexpr int kNumMfcc = 13;
inline constexpr int kNumMelBands = 26;
inline constexpr int kEntropyBlocks = 10;
inline constexpr double kRolloffFraction = 0.9;
inline constexpr double kMelFloor = 1e-10;

enum Index : int {
  kZcr = 0,
  kEnergy = 1,
  kEnergyEntropy = 2,
  kCentroid = 3,
  kSpread = 4,
  kSpectralEntropy = 5,
  kFlux = 6,
  kRolloff = 7,
  kMfcc0 = 8,
  kChroma0 = 21,
  kChromaStd = 33,
};

struct FrameConfig {
  double frame_len_s = 0.2;
  double hop_s = 0.1;
  int sample_rate = dataset::kSampleRate;

  int frame_samples() const { return static_cast<int>(std::lround(frame_len_s * sample_rate)); }
  int hop_samples() const { return static_cast<int>(std::lround(hop_s * sample_rate)); }

  void validate() const {
    const double exact = frame_len_s * sample_rate;
    if (sample_rate <= 0 || frame_len_s <= 0.0 || hop_s <= 0.0) throw Error(ErrorCode::kBadConfig, "non-positive frame config");
    if (hop_s > frame_len_s) throw Error(ErrorCode::kBadConfig, "hop longer than frame");
    if (std::abs(exact - std::round(exact)) > 1e-9) throw Error(ErrorCode::kBadConfig, "frame length is not a whole number of samples");
    if (hop_samples() < 1) throw Error(ErrorCode::kBadConfig, "hop shorter than one sample");
  }
};

using FeatureVector = std::array<double, kFeatureDim>;

struct FeatureSequence {
  std::string utterance_id;
  RowMatrix matrix;  // rows x kFeatureDim
  int true_len = 0;  // rows before padding
};

// Frame i covers samples [i*hop, i*hop + frame_len). A signal shorter than
// one frame yields a single zero-padded frame.
inline std::vector<std::vector<double>> frame_signal(std::span<const int16_t> samples, const FrameConfig& config) {
  config.validate();
  if (samples.empty()) throw Error(ErrorCode::kEmptySignal, "signal has no samples");
  const auto len = static_cast<std::size_t>(config.frame_samples());
  const auto hop = static_cast<std::size_t>(config.hop_samples());
  const std::size_t n = samples.size();
  const std::size_t count = n < len ? 1 : (n - len) / hop + 1;
  std::vector<std::vector<double>> frames(count, std::vector<double>(len, 0.0));
  for (std::size_t f = 0; f < count; ++f) {
    const std::size_t start = f * hop;
    const std::size_t stop = std::min(n, start + len);
    for (std::size_t i = start; i < stop; ++i) frames[f][i - start] = samples[i] / 32768.0;
  }
  return frames;
}

namespace detail {

// FFTW planning is not thread-safe; plans are created once per size under a
// lock and executed with the new-array interface, which is.
class FftPlans {
 public:
  static fftw_plan r2c(int n) {
    static FftPlans instance;
    std::lock_guard lock(instance.mutex_);
    auto it = instance.plans_.find(n);
    if (it != instance.plans_.end()) return it->second;
    std::vector<double> in(static_cast<std::size_t>(n));
    std::vector<fftw_complex> out(static_cast<std::size_t>(n / 2 + 1));
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in.data(), out.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    instance.plans_.emplace(n, p);
    return p;
  }

  ~FftPlans() {
    for (auto& [n, p] : plans_) fftw_destroy_plan(p);
  }

 private:
  std::mutex mutex_;
  std::map<int, fftw_plan> plans_;
};

inline std::vector<double> magnitude_spectrum(std::span<const double> frame) {
  const int n = static_cast<int>(frame.size());
  std::vector<double> in(frame.size());
  for (int i = 0; i < n; ++i) {
    const double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (n - 1));
    in[static_cast<std::size_t>(i)] = frame[static_cast<std::size_t>(i)] * w;
  }
  std::vector<fftw_complex> out(static_cast<std::size_t>(n / 2 + 1));
  fftw_execute_dft_r2c(FftPlans::r2c(n), in.data(), out.data());
  std::vector<double> mag(out.size());
  for (std::size_t k = 0; k < out.size(); ++k) mag[k] = std::hypot(out[k][0], out[k][1]) / n;
  return mag;
}

inline double block_entropy(std::span<const double> energies) {
  constexpr double eps = 1e-8;
  double total = 0.0;
  for (double e : energies) total += e;
  if (total <= 0.0) return 0.0;
  const std::size_t block = energies.size() / kEntropyBlocks;
  double h = 0.0;
  for (int b = 0; b < kEntropyBlocks; ++b) {
    double e = 0.0;
    for (std::size_t i = 0; i < block; ++i) e += energies[b * block + i];
    const double p = e / (total + eps);
    h -= p * std::log2(p + eps);
  }
  return h;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters with edges equally spaced on the mel scale over [0, Nyquist].
inline std::vector<std::vector<double>> mel_filterbank(int bins, int sample_rate) {
  const double nyquist = sample_rate / 2.0;
  const double top = hz_to_mel(nyquist);
  std::vector<double> edges(kNumMelBands + 2);
  for (int i = 0; i < kNumMelBands + 2; ++i) edges[static_cast<std::size_t>(i)] = mel_to_hz(top * i / (kNumMelBands + 1));
  std::vector<std::vector<double>> bank(kNumMelBands, std::vector<double>(static_cast<std::size_t>(bins), 0.0));
  for (int m = 0; m < kNumMelBands; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < bins; ++k) {
      const double f = nyquist * k / (bins - 1);
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      bank[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = w;
    }
  }
  return bank;
}

inline const std::vector<std::vector<double>>& cached_filterbank(int bins, int sample_rate) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::vector<std::vector<double>>> cache;
  std::lock_guard lock(mutex);
  auto key = std::make_pair(bins, sample_rate);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, mel_filterbank(bins, sample_rate)).first;
  return it->second;
}

}  // namespace detail

// `previous_spectrum` is the magnitude spectrum of the preceding frame
// (empty for the first frame, which compares against all zeros).
// `spectrum_out`, when given, receives this frame's magnitude spectrum.
inline FeatureVector extract_frame_features(std::span<const double> frame, std::span<const double> previous_spectrum,
                                            int sample_rate = dataset::kSampleRate,
                                            std::vector<double>* spectrum_out = nullptr) {
  const std::size_t n = frame.size();
  if (n < 2 * kEntropyBlocks) throw Error(ErrorCode::kBadArgument, "frame too short");
  FeatureVector f{};

  double sign_changes = 0.0;
  auto sgn = [](double v) { return static_cast<double>((v > 0) - (v < 0)); };
  for (std::size_t i = 1; i < n; ++i) sign_changes += std::abs(sgn(frame[i]) - sgn(frame[i - 1]));
  f[kZcr] = sign_changes / 2.0 / static_cast<double>(n - 1);

  std::vector<double> sq(n);
  double energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sq[i] = frame[i] * frame[i];
    energy += sq[i];
  }
  f[kEnergy] = energy / static_cast<double>(n);
  f[kEnergyEntropy] = detail::block_entropy(sq);

  auto mag = detail::magnitude_spectrum(frame);
  const std::size_t bins = mag.size();
  const double nyquist = sample_rate / 2.0;
  std::vector<double> power(bins);
  double mag_sum = 0.0, power_sum = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    power[k] = mag[k] * mag[k];
    mag_sum += mag[k];
    power_sum += power[k];
  }
  auto freq = [&](std::size_t k) { return nyquist * static_cast<double>(k) / static_cast<double>(bins - 1); };

  std::vector<double> normalized(bins, 0.0);
  if (mag_sum > 0.0) {
    double centroid = 0.0;
    for (std::size_t k = 0; k < bins; ++k) centroid += freq(k) * mag[k];
    centroid /= mag_sum;
    double spread = 0.0;
    for (std::size_t k = 0; k < bins; ++k) spread += (freq(k) - centroid) * (freq(k) - centroid) * mag[k];
    f[kCentroid] = centroid / nyquist;
    f[kSpread] = std::sqrt(spread / mag_sum) / nyquist;
    f[kSpectralEntropy] = detail::block_entropy(power);
    for (std::size_t k = 0; k < bins; ++k) normalized[k] = mag[k] / mag_sum;
    double cumulative = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      cumulative += power[k];
      if (cumulative >= kRolloffFraction * power_sum) {
        f[kRolloff] = static_cast<double>(k) / static_cast<double>(bins - 1);
        break;
      }
    }
  }

  double flux = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    const double prev = k < previous_spectrum.size() ? previous_spectrum[k] : 0.0;
    flux += (normalized[k] - prev) * (normalized[k] - prev);
  }
  f[kFlux] = flux;

  const auto& bank = detail::cached_filterbank(static_cast<int>(bins), sample_rate);
  std::array<double, kNumMelBands> log_mel{};
  for (int m = 0; m < kNumMelBands; ++m) {
    double e = 0.0;
    const auto& w = bank[static_cast<std::size_t>(m)];
    for (std::size_t k = 0; k < bins; ++k) e += w[k] * power[k];
    log_mel[static_cast<std::size_t>(m)] = std::log(std::max(e, kMelFloor));
  }
  for (int c = 0; c < kNumMfcc; ++c) {
    double acc = 0.0;
    for (int m = 0; m < kNumMelBands; ++m) {
      acc += log_mel[static_cast<std::size_t>(m)] * std::cos(std::numbers::pi * c * (m + 0.5) / kNumMelBands);
    }
    const double scale = c == 0 ? std::sqrt(1.0 / kNumMelBands) : std::sqrt(2.0 / kNumMelBands);
    f[static_cast<std::size_t>(kMfcc0 + c)] = acc * scale;
  }

  // Chroma: each bin above 27.5 Hz votes its power into the nearest pitch class.
  std::array<double, 12> chroma{};
  double chroma_total = 0.0;
  for (std::size_t k = 1; k < bins; ++k) {
    const double hz = freq(k);
    if (hz < 27.5) continue;
    const long midi = std::lround(69.0 + 12.0 * std::log2(hz / 440.0));
    chroma[static_cast<std::size_t>(((midi % 12) + 12) % 12)] += power[k];
    chroma_total += power[k];
  }
  double mean = 0.0;
  for (int c = 0; c < 12; ++c) {
    const double v = chroma_total > 0.0 ? chroma[static_cast<std::size_t>(c)] / chroma_total : 0.0;
    f[static_cast<std::size_t>(kChroma0 + c)] = v;
    mean += v / 12.0;
  }
  double var = 0.0;
  for (int c = 0; c < 12; ++c) {
    const double d = f[static_cast<std::size_t>(kChroma0 + c)] - mean;
    var += d * d / 12.0;
  }
  f[kChromaStd] = std::sqrt(var);

  for (int i = 0; i < kFeatureDim; ++i) {
    if (!std::isfinite(f[static_cast<std::size_t>(i)])) {
      throw Error(ErrorCode::kNonFiniteFeature, "feature " + std::to_string(i) + " is not finite");
    }
  }
  if (spectrum_out) *spectrum_out = std::move(normalized);
  return f;
}

inline FeatureSequence extract_sequence(const std::string& id, std::span<const int16_t> samples,
                                        const FrameConfig& config = {}) {
  const auto frames = frame_signal(samples, config);
  FeatureSequence seq;
  seq.utterance_id = id;
  seq.true_len = static_cast<int>(frames.size());
  seq.matrix.resize(seq.true_len, kFeatureDim);
  std::vector<double> previous, current;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto fv = extract_frame_features(frames[t], previous, config.sample_rate, &current);
    for (int d = 0; d < kFeatureDim; ++d) seq.matrix(static_cast<Eigen::Index>(t), d) = fv[static_cast<std::size_t>(d)];
    previous.swap(current);
  }
  return seq;
}

inline FeatureSequence extract_sequence(const dataset::LabeledUtterance& u, const FrameConfig& config = {}) {
  if (u.sample_rate != config.sample_rate) {
    throw Error(ErrorCode::kBadSampleRate, u.id + ": " + std::to_string(u.sample_rate) + " Hz");
  }
  return extract_sequence(u.id, u.samples, config);
}

// Extracts every utterance, in corpus order, on up to `workers` threads.
inline std::vector<FeatureSequence> extract_corpus(const dataset::Corpus& corpus, const FrameConfig& config = {},
                                                   int workers = 1) {
  std::vector<FeatureSequence> out(corpus.size());
  parallel_for(corpus.size(), workers, [&](std::size_t i) { out[i] = extract_sequence(corpus.utterances[i], config); });
  return out;
}

// Appends zero rows or keeps the head so that exactly unified_len rows remain.
inline FeatureSequence pad_or_truncate(const FeatureSequence& seq, int unified_len = kUnifiedLen) {
  if (seq.true_len < 1) throw Error(ErrorCode::kBadArgument, "sequence has no frames");
  if (unified_len < 1) throw Error(ErrorCode::kBadArgument, "unified length must be positive");
  FeatureSequence out;
  out.utterance_id = seq.utterance_id;
  out.true_len = std::min(seq.true_len, unified_len);
  out.matrix = RowMatrix::Zero(unified_len, seq.matrix.cols());
  out.matrix.topRows(out.true_len) = seq.matrix.topRows(out.true_len);
  return out;
}

struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline constexpr double kStdFloor = 1e-8;

// Per-dimension mean and standard deviation over the real (unpadded) rows.
inline Normalizer fit_normalizer(std::span<const FeatureSequence> training) {
  Normalizer n;
  n.mean.assign(kFeatureDim, 0.0);
  n.stddev.assign(kFeatureDim, 0.0);
  double rows = 0.0;
  for (const auto& s : training) {
    for (int t = 0; t < s.true_len; ++t) {
      for (int d = 0; d < kFeatureDim; ++d) n.mean[static_cast<std::size_t>(d)] += s.matrix(t, d);
    }
    rows += s.true_len;
  }
  if (rows == 0.0) throw Error(ErrorCode::kEmptyTraining, "no frames to fit a normalizer");
  for (auto& m : n.mean) m /= rows;
  for (const auto& s : training) {
    for (int t = 0; t < s.true_len; ++t) {
      for (int d = 0; d < kFeatureDim; ++d) {
        const double diff = s.matrix(t, d) - n.mean[static_cast<std::size_t>(d)];
        n.stddev[static_cast<std::size_t>(d)] += diff * diff;
      }
    }
  }
  for (auto& v : n.stddev) v = std::max(std::sqrt(v / rows), kStdFloor);
  return n;
}

// Z-scores the real rows; padded rows stay zero.
inline FeatureSequence apply_normalizer(const FeatureSequence& seq, const Normalizer& n) {
  if (static_cast<int>(n.mean.size()) != seq.matrix.cols()) throw Error(ErrorCode::kShapeMismatch, "normalizer width");
  FeatureSequence out = seq;
  for (int t = 0; t < seq.true_len; ++t) {
    for (int d = 0; d < seq.matrix.cols(); ++d) {
      const double z = (seq.matrix(t, d) - n.mean[static_cast<std::size_t>(d)]) / n.stddev[static_cast<std::size_t>(d)];
      // A constant column has stddev at the floor; its residue is rounding noise.
      out.matrix(t, d) = n.stddev[static_cast<std::size_t>(d)] <= kStdFloor ? 0.0 : z;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature dump, little-endian:
//   "EMOFEAT1" | u64 n_utterances | u32 dim | u32 unified_len (0 = unpadded)
//   per utterance: u32 id_len | id bytes | u32 true_len | u32 rows | rows*dim f64

inline constexpr char kDumpMagic[8] = {'E', 'M', 'O', 'F', 'E', 'A', 'T', '1'};

struct FeatureDump {
  int unified_len = 0;
  std::vector<FeatureSequence> sequences;
};

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw Error(ErrorCode::kParseError, "truncated feature dump");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_feature_dump(const std::filesystem::path& path, const FeatureDump& dump) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(kDumpMagic, sizeof(kDumpMagic));
  detail::put<uint64_t>(out, dump.sequences.size());
  detail::put<uint32_t>(out, kFeatureDim);
  detail::put<uint32_t>(out, static_cast<uint32_t>(dump.unified_len));
  for (const auto& s : dump.sequences) {
    detail::put<uint32_t>(out, static_cast<uint32_t>(s.utterance_id.size()));
    out.write(s.utterance_id.data(), static_cast<std::streamsize>(s.utterance_id.size()));
    detail::put<uint32_t>(out, static_cast<uint32_t>(s.true_len));
    detail::put<uint32_t>(out, static_cast<uint32_t>(s.matrix.rows()));
    for (Eigen::Index t = 0; t < s.matrix.rows(); ++t) {
      for (Eigen::Index d = 0; d < s.matrix.cols(); ++d) detail::put<double>(out, s.matrix(t, d));
    }
  }
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

inline FeatureDump read_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kDumpMagic, 8) != 0) throw Error(ErrorCode::kParseError, "not a feature dump");
  FeatureDump dump;
  const auto n = detail::get<uint64_t>(in);
  const auto dim = detail::get<uint32_t>(in);
  if (dim != kFeatureDim) throw Error(ErrorCode::kParseError, "unexpected feature dimension " + std::to_string(dim));
  dump.unified_len = static_cast<int>(detail::get<uint32_t>(in));
  for (uint64_t i = 0; i < n; ++i) {
    FeatureSequence s;
    s.utterance_id.resize(detail::get<uint32_t>(in));
    in.read(s.utterance_id.data(), static_cast<std::streamsize>(s.utterance_id.size()));
    s.true_len = static_cast<int>(detail::get<uint32_t>(in));
    const auto rows = detail::get<uint32_t>(in);
    s.matrix.resize(rows, kFeatureDim);
    for (uint32_t t = 0; t < rows; ++t) {
      for (int d = 0; d < kFeatureDim; ++d) s.matrix(t, d) = detail::get<double>(in);
    }
    dump.sequences.push_back(std::move(s));
  }
  return dump;
}

}  // namespace emoctc::features

#endif  // EMOCTC_FEATURES_HPP_
