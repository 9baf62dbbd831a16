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

// The emoctc command line: one binary, one subcommand per pipeline stage.
// Every subcommand prints a JSON summary on stdout and logs on stderr.
// Exit status is 0 on success, 1 on a runtime error (with a JSON error
// object on stdout) and 2 on a usage error.

#ifndef EMOCTC_CLI_HPP_
#define EMOCTC_CLI_HPP_

#include "emoctc/annotation.hpp"
#include "emoctc/annotation_http.hpp"
#include "emoctc/common.hpp"
#include "emoctc/dataset.hpp"
#include "emoctc/eval.hpp"
#include "emoctc/features.hpp"
#include "emoctc/model.hpp"
#include "emoctc/nn.hpp"
#include "emoctc/parallel.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <pthread.h>
#include <signal.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace emoctc::cli {

// Published reference values, reported next to measured ones.
struct PublishedRow {
  std::string_view method;
  double overall;
  double mean_class;
};

inline constexpr std::array<PublishedRow, 5> kPublishedTable1 = {{{"dummy", 0.35, 0.25},
                                                                  {"framewise", 0.45, 0.41},
                                                                  {"onelabel", 0.51, 0.49},
                                                                  {"ctc", 0.54, 0.54},
                                                                  {"human", 0.69, 0.70}}};
inline constexpr std::array<double, kNumEmotions> kPublishedConsideredRatio = {0.17, 0.22, 0.36, 0.39};
inline constexpr std::array<double, kNumEmotions> kPublishedCoincidence = {0.51, 0.73, 0.71, 0.74};
inline constexpr double kPublishedConsistentAccuracy = 0.65;
inline constexpr double kSoftTargetCtcOverall = 0.54;
inline constexpr double kSoftTargetTolerance = 0.04;

namespace detail {

namespace fs = std::filesystem;
using nlohmann::json;

inline void require_fresh_file(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) {
    throw Error(ErrorCode::kOutputExists, p.string() + " exists (pass --force to overwrite)");
  }
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// An existing empty directory counts as fresh. With --force the files this
// command writes are overwritten and anything else is left alone.
inline void require_fresh_dir(const fs::path& p, bool force) {
  if (fs::exists(p)) {
    if (!fs::is_directory(p)) throw Error(ErrorCode::kOutputExists, p.string() + " exists and is not a directory");
    if (!fs::is_empty(p) && !force) {
      throw Error(ErrorCode::kOutputExists, p.string() + " is not empty (pass --force to overwrite)");
    }
  }
  fs::create_directories(p);
}

inline json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, p.string() + ": " + e.what());
  }
}

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::string percent(const json& v) {
  if (!v.is_number()) return "-";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.0f%%", 100.0 * v.get<double>());
  return buf;
}

struct ModelOptions {
  nn::NetworkConfig network;
  nn::TrainingConfig training;
  baselines::ForestConfig forest;
  bool no_validation = false;
};

inline void add_model_options(CLI::App* sub, ModelOptions& o) {
  sub->add_option("--hidden", o.network.hidden_size, "LSTM cells per direction")->capture_default_str();
  sub->add_option("--layers", o.network.blstm_layers, "BLSTM layers")->capture_default_str();
  sub->add_option("--unified-len", o.network.unified_len, "frames after padding or truncation")->capture_default_str();
  sub->add_flag("--mask-one-label", o.network.mask_one_label, "one-label head reads the last valid frame");
  sub->add_option("--epochs", o.training.epochs, "training epochs")->capture_default_str();
  sub->add_option("--lr", o.training.learning_rate, "Adam learning rate")->capture_default_str();
  sub->add_option("--batch-size", o.training.batch_size)->capture_default_str();
  sub->add_option("--patience", o.training.patience, "early-stopping patience in epochs")->capture_default_str();
  sub->add_option("--clip-norm", o.training.clip_norm, "gradient norm clip, <= 0 disables")->capture_default_str();
  sub->add_option("--beam-width", o.training.beam_width, "CTC beam width")->capture_default_str();
  sub->add_option("--trees", o.forest.n_trees, "framewise forest size")->capture_default_str();
  sub->add_option("--max-depth", o.forest.max_depth, "framewise tree depth")->capture_default_str();
  sub->add_flag("--no-validation", o.no_validation, "train recurrent models without a held-out group");
}

inline json class_counts(const dataset::Corpus& corpus) {
  std::array<int, kNumEmotions> counts{};
  for (const auto& u : corpus.utterances) {
    if (const auto e = u.emotion()) ++counts[static_cast<std::size_t>(*e)];
  }
  json j = json::object();
  for (std::size_t c = 0; c < counts.size(); ++c) j[std::string(kEmotionNames[c])] = counts[c];
  return j;
}

inline dataset::Corpus load_four_emotions(const fs::path& manifest, std::ostream& err) {
  const auto all = dataset::load_manifest(manifest);
  auto corpus = dataset::filter_four_emotions(all);
  err << "loaded " << all.size() << " utterances, " << corpus.size() << " in the four emotions\n";
  return corpus;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthArgs {
  dataset::SyntheticConfig cfg;
  fs::path out;
  bool force = false;
};

inline json synth_data(const SynthArgs& a, std::ostream& err) {
  require_fresh_dir(a.out, a.force);
  const auto syn = dataset::generate_synthetic_corpus(a.cfg);
  const auto manifest = dataset::write_corpus(a.out, syn.corpus);
  err << "wrote " << syn.corpus.size() << " utterances to " << manifest.string() << '\n';
  return {{"command", "synth-data"},
          {"seed", a.cfg.seed},
          {"manifest", manifest.string()},
          {"utterances", syn.corpus.size()},
          {"class_counts", class_counts(syn.corpus)},
          {"unresolved", syn.unresolved},
          {"other_class", syn.other_class}};
}

struct ImportArgs {
  fs::path root;
  fs::path out;
  bool strict = false;
  bool force = false;
};

inline json import_iemocap(const ImportArgs& a, std::ostream& err) {
  const auto result = dataset::import_iemocap(a.root, a.strict);
  require_fresh_dir(a.out, a.force);
  const auto manifest = a.out / "manifest.jsonl";
  dataset::write_manifest_records(manifest, result.records);
  std::ofstream(a.out / "provenance.txt", std::ios::trunc) << "IEMOCAP import of " << fs::absolute(a.root).string()
                                                           << '\n';
  for (const auto& s : result.skipped) err << "skipped " << s << '\n';
  err << "imported " << result.records.size() << " utterances\n";
  json skipped = json::array();
  for (const auto& s : result.skipped) skipped.push_back(s);
  return {{"command", "import-iemocap"},
          {"manifest", manifest.string()},
          {"utterances", result.records.size()},
          {"unresolved", result.unresolved},
          {"skipped", skipped}};
}

struct FeaturesArgs {
  fs::path manifest;
  fs::path out;
  bool no_pad = false;
  int unified_len = features::kUnifiedLen;
  bool force = false;
};

inline json extract_features(const FeaturesArgs& a, std::ostream& err) {
  require_fresh_file(a.out, a.force);
  const auto corpus = dataset::load_manifest(a.manifest);
  err << "extracting features for " << corpus.size() << " utterances\n";
  features::FeatureDump dump;
  dump.unified_len = a.no_pad ? 0 : a.unified_len;
  dump.sequences = features::extract_corpus(corpus, features::FrameConfig{}, worker_count());
  if (!a.no_pad) {
    for (auto& s : dump.sequences) s = features::pad_or_truncate(s, a.unified_len);
  }
  features::write_feature_dump(a.out, dump);
  std::size_t frames = 0;
  for (const auto& s : dump.sequences) frames += static_cast<std::size_t>(s.true_len);
  return {{"command", "features"},
          {"out", a.out.string()},
          {"utterances", dump.sequences.size()},
          {"dim", features::kFeatureDim},
          {"unified_len", dump.unified_len},
          {"padded", !a.no_pad},
          {"valid_frames", frames}};
}

inline model::FitConfig fit_config(const ModelOptions& o, uint64_t seed) {
  model::FitConfig fc;
  fc.network = o.network;
  fc.training = o.training;
  fc.forest = o.forest;
  fc.validation = !o.no_validation;
  fc.seed = seed;
  return fc;
}

struct TrainArgs {
  fs::path manifest;
  std::string method;
  uint64_t seed = 0;
  fs::path out;
  ModelOptions model;
  bool force = false;
};

inline json train(const TrainArgs& a, std::ostream& err) {
  const auto method = model::parse_method(a.method);
  a.model.network.validate();
  a.model.training.validate();
  a.model.forest.validate();
  require_fresh_file(a.out, a.force);
  const auto corpus = load_four_emotions(a.manifest, err);
  const auto seqs = features::extract_corpus(corpus, features::FrameConfig{}, worker_count());
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  err << "training " << model::method_name(method) << " on " << all.size() << " utterances\n";
  const auto m = model::fit(method, corpus, seqs, all, fit_config(a.model, a.seed));
  model::save(a.out, m);
  json history = json::array();
  for (const auto& e : m.history) {
    history.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"val_loss", e.val_loss},
                       {"val_overall_accuracy", e.val_overall_accuracy},
                       {"val_mean_class_accuracy", e.val_mean_class_accuracy}});
  }
  return {{"command", "train"},
          {"method", model::method_name(method)},
          {"seed", a.seed},
          {"model", a.out.string()},
          {"utterances", corpus.size()},
          {"validation_group", m.validation_group},
          {"best_epoch", m.best_epoch},
          {"history", history}};
}

struct DecodeArgs {
  fs::path model;
  fs::path manifest;
  fs::path out;  // optional predictions CSV
  bool force = false;
};

inline json decode(const DecodeArgs& a, std::ostream& err) {
  if (!a.out.empty()) require_fresh_file(a.out, a.force);
  const auto m = model::load(a.model);
  const auto corpus = dataset::load_manifest(a.manifest);
  const auto seqs = features::extract_corpus(corpus, features::FrameConfig{}, worker_count());
  err << "decoding " << corpus.size() << " utterances with a " << model::method_name(m.method) << " model\n";
  std::vector<int> predicted(corpus.size());
  parallel_for(corpus.size(), worker_count(), [&](std::size_t i) { predicted[i] = model::predict(m, seqs[i]); });
  json rows = json::array();
  std::vector<int> truth, pred;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& u = corpus.utterances[i];
    const auto e = u.emotion();
    json row = {{"id", u.id},
                {"predicted", kEmotionNames[static_cast<std::size_t>(predicted[i])]},
                {"label", e ? json(kEmotionNames[static_cast<std::size_t>(*e)]) : json(nullptr)}};
    if (m.method == model::Method::kCtc) {
      json labeling = json::array();
      for (int s : model::decode_labeling(m, seqs[i])) labeling.push_back(kEmotionNames[static_cast<std::size_t>(s)]);
      row["labeling"] = labeling;
    }
    rows.push_back(row);
    if (e) {
      truth.push_back(static_cast<int>(*e));
      pred.push_back(predicted[i]);
    }
  }
  if (!a.out.empty()) {
    std::ofstream csv(a.out, std::ios::trunc);
    if (!csv) throw Error(ErrorCode::kIoError, "cannot write " + a.out.string());
    csv << "id,predicted,label\n";
    for (const auto& r : rows) {
      csv << r["id"].get<std::string>() << ',' << r["predicted"].get<std::string>() << ','
          << (r["label"].is_null() ? "" : r["label"].get<std::string>()) << '\n';
    }
  }
  json summary = {{"command", "decode"},
                  {"model", a.model.string()},
                  {"method", model::method_name(m.method)},
                  {"utterances", corpus.size()},
                  {"labeled", truth.size()},
                  {"overall_accuracy", nullptr},
                  {"mean_class_accuracy", nullptr},
                  {"predictions", rows}};
  if (!truth.empty()) {
    summary["overall_accuracy"] = eval::overall_accuracy(truth, pred);
    summary["mean_class_accuracy"] = eval::mean_class_accuracy(truth, pred);
  }
  return summary;
}

struct CrossvalArgs {
  fs::path manifest;
  std::vector<std::string> methods{"dummy", "framewise", "onelabel", "ctc"};
  uint64_t seed = 0;
  int folds = 5;
  bool pooled = false;
  fs::path out;
  ModelOptions model;
  bool force = false;
};

inline json crossval(const CrossvalArgs& a, std::ostream& err) {
  eval::ComparisonConfig cfg;
  cfg.methods.clear();
  for (const auto& m : a.methods) cfg.methods.push_back(model::parse_method(m));
  cfg.folds = a.folds;
  cfg.seed = a.seed;
  cfg.pooled = a.pooled;
  cfg.validation = !a.model.no_validation;
  cfg.network = a.model.network;
  cfg.training = a.model.training;
  cfg.forest = a.model.forest;
  cfg.network.validate();
  cfg.training.validate();
  cfg.forest.validate();
  cfg.workers = worker_count();
  std::mutex log_mutex;
  cfg.log = [&](const std::string& line) {
    std::lock_guard lock(log_mutex);
    err << line << '\n';
  };
  require_fresh_dir(a.out, a.force);
  const auto corpus = load_four_emotions(a.manifest, err);
  const auto seqs = features::extract_corpus(corpus, features::FrameConfig{}, cfg.workers);
  const auto report = eval::run_comparison(corpus, seqs, cfg);
  eval::write_report(a.out, report, corpus);
  json table = json::array();
  for (const auto& m : report.methods) {
    table.push_back({{"method", model::method_name(m.method)},
                     {"overall_accuracy", m.overall_accuracy},
                     {"mean_class_accuracy", m.mean_class_accuracy}});
  }
  err << "report written to " << a.out.string() << '\n';
  return {{"command", "crossval"},
          {"seed", a.seed},
          {"folds", report.folds},
          {"pooled", report.pooled},
          {"utterances", corpus.size()},
          {"out", a.out.string()},
          {"seconds", report.seconds},
          {"table1", table}};
}

struct GradcheckArgs {
  uint64_t seed = 1;
  nn::GradCheckSuiteConfig cfg;
};

inline json gradcheck(const GradcheckArgs& a, std::ostream& err) {
  const auto r = nn::gradient_check_suite(a.seed, a.cfg);
  err << "checked " << r.checked << " parameters, max relative error " << r.max_relative_error << '\n';
  return {{"command", "gradcheck"},
          {"seed", a.seed},
          {"inputs", r.inputs},
          {"checked", r.checked},
          {"step", a.cfg.step},
          {"tolerance", a.cfg.tolerance},
          {"ctc_max_rel_err", r.ctc_max_relative_error},
          {"onelabel_max_rel_err", r.onelabel_max_relative_error},
          {"max_rel_err", r.max_relative_error},
          {"pass", r.pass}};
}

struct ServeArgs {
  fs::path manifest;
  std::string host = "127.0.0.1";
  int port = 8080;
  fs::path log;
  fs::path static_dir;
  uint64_t seed = 1;
};

// Serves until SIGINT or SIGTERM. The summary line goes out once the port is
// bound.
inline void serve_annotation(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  const auto corpus = load_four_emotions(a.manifest, err);
  annotation::ServiceConfig sc;
  sc.seed = a.seed;
  sc.log_path = a.log;
  sigset_t stop_signals, previous;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, &previous);
  try {
    annotation::AnnotationService service(corpus, sc);
    annotation::AnnotationServer server(corpus, service, a.static_dir);
    const int port = server.start(a.host, a.port);
    out << json{{"command", "serve-annotation"},
                {"url", "http://" + a.host + ":" + std::to_string(port)},
                {"port", port},
                {"utterances", corpus.size()},
                {"log", a.log.string()}}
               .dump()
        << std::endl;
    err << "serving on " << a.host << ':' << port << ", stop with Ctrl-C\n";
    int sig = 0;
    sigwait(&stop_signals, &sig);
    err << "stopping\n";
    server.stop();
  } catch (...) {
    pthread_sigmask(SIG_SETMASK, &previous, nullptr);
    throw;
  }
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
}

struct ReportArgs {
  fs::path in;
  fs::path human;  // optional GET /api/stats payload
};

inline json report(const ReportArgs& a, std::ostream& err) {
  const auto r = read_json(fs::is_directory(a.in) ? a.in / "report.json" : a.in);
  std::optional<json> human;
  if (!a.human.empty()) human = read_json(a.human);
  try {
    json table1 = json::array();
    const json* ctc = nullptr;
    for (const auto& m : r.at("methods")) {
      const auto name = m.at("method").get<std::string>();
      json row = {{"method", name},
                  {"overall_accuracy", m.at("overall_accuracy")},
                  {"mean_class_accuracy", m.at("mean_class_accuracy")},
                  {"published_overall_accuracy", nullptr},
                  {"published_mean_class_accuracy", nullptr}};
      for (const auto& p : kPublishedTable1) {
        if (p.method == name) {
          row["published_overall_accuracy"] = p.overall;
          row["published_mean_class_accuracy"] = p.mean_class;
        }
      }
      table1.push_back(row);
      if (name == "ctc") ctc = &m;
    }
    json human_row = {{"method", "human"},
                      {"overall_accuracy", nullptr},
                      {"mean_class_accuracy", nullptr},
                      {"published_overall_accuracy", kPublishedTable1[4].overall},
                      {"published_mean_class_accuracy", kPublishedTable1[4].mean_class}};
    if (human) {
      human_row["overall_accuracy"] = human->at("overall_accuracy");
      human_row["mean_class_accuracy"] = human->at("mean_class_accuracy");
    }
    table1.push_back(human_row);

    json table2 = json::array();
    json consistent = nullptr;
    json soft = {{"ctc_overall_accuracy", nullptr},
                 {"target", kSoftTargetCtcOverall},
                 {"tolerance", kSoftTargetTolerance},
                 {"within", nullptr}};
    if (ctc) {
      const double overall = ctc->at("overall_accuracy").get<double>();
      soft["ctc_overall_accuracy"] = overall;
      soft["within"] = std::abs(overall - kSoftTargetCtcOverall) <= kSoftTargetTolerance;
      if (ctc->contains("consistent_accuracy")) consistent = ctc->at("consistent_accuracy");
      if (ctc->contains("residual")) {
        for (std::size_t c = 0; c < kNumEmotions; ++c) {
          const auto& row = ctc->at("residual").at(c);
          table2.push_back({{"emotion", kEmotionNames[c]},
                            {"considered_ratio", row.at("considered_ratio")},
                            {"model_accuracy", row.at("coincidence_rate")},
                            {"random_reference", eval::kRandomCoincidence},
                            {"published_considered_ratio", kPublishedConsideredRatio[c]},
                            {"published_model_accuracy", kPublishedCoincidence[c]}});
        }
      }
    }

    err << std::left << std::setw(12) << "method" << std::setw(18) << "overall" << "mean class\n";
    for (const auto& row : table1) {
      err << std::setw(12) << row["method"].get<std::string>() << std::setw(18)
          << (percent(row["overall_accuracy"]) + " (" + percent(row["published_overall_accuracy"]) + ")")
          << percent(row["mean_class_accuracy"]) << " (" << percent(row["published_mean_class_accuracy"]) << ")\n";
    }
    if (!table2.empty()) {
      err << "\nctc residual accuracy (published in parentheses)\n";
      for (const auto& row : table2) {
        err << std::setw(12) << row["emotion"].get<std::string>() << "considered " << percent(row["considered_ratio"])
            << " (" << percent(row["published_considered_ratio"]) << ")  model " << percent(row["model_accuracy"])
            << " (" << percent(row["published_model_accuracy"]) << ")\n";
      }
    }
    return {{"command", "report"},
            {"table1", table1},
            {"table2", table2},
            {"consistent_accuracy", consistent},
            {"published_consistent_accuracy", kPublishedConsistentAccuracy},
            {"soft_target", soft}};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("malformed report: ") + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  CLI::App app{"emoctc: utterance emotion recognition with CTC", "emoctc"};
  app.require_subcommand(1, 1);
  app.set_config("--config", "", "TOML-style file with one [subcommand] section of option = value lines");
  app.set_help_all_flag("--help-all", "help for every subcommand");

  detail::SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "generate the separable synthetic corpus");
  s->add_option("--seed", synth.cfg.seed, "generator seed")->required();
  s->add_option("--per-class", synth.cfg.n_per_class, "utterances per emotion")->capture_default_str();
  s->add_option("--min-duration", synth.cfg.min_duration_s, "seconds")->capture_default_str();
  s->add_option("--max-duration", synth.cfg.max_duration_s, "seconds")->capture_default_str();
  s->add_option("--disagreement", synth.cfg.disagreement_rate, "chance of one dissenting assessor")
      ->capture_default_str();
  s->add_option("--unresolved", synth.cfg.n_unresolved, "extra utterances without a majority")->capture_default_str();
  s->add_option("--other-class", synth.cfg.n_other_class, "extra utterances outside the four emotions")
      ->capture_default_str();
  s->add_option("--snr", synth.cfg.snr_db, "signal to noise ratio in dB")->capture_default_str();
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_flag("--force", synth.force, "overwrite existing output");

  detail::ImportArgs imp;
  auto* i = app.add_subcommand("import-iemocap", "build a manifest from an IEMOCAP release");
  i->add_option("--root", imp.root, "directory holding Session1..Session5")->required();
  i->add_option("--out", imp.out, "output directory")->required();
  i->add_flag("--strict", imp.strict, "fail instead of skipping unusable turns");
  i->add_flag("--force", imp.force, "overwrite existing output");

  detail::FeaturesArgs feat;
  auto* f = app.add_subcommand("features", "extract the 34-dim frame features");
  f->add_option("--manifest", feat.manifest, "manifest.jsonl")->required();
  f->add_option("--out", feat.out, "feature dump file")->required();
  f->add_flag("--no-pad", feat.no_pad, "keep the natural sequence lengths");
  f->add_option("--unified-len", feat.unified_len, "frames after padding or truncation")->capture_default_str();
  f->add_flag("--force", feat.force, "overwrite existing output");

  detail::TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one model on a whole manifest");
  t->add_option("--manifest", tr.manifest, "manifest.jsonl")->required();
  t->add_option("--method", tr.method, "ctc, onelabel, framewise or dummy")
      ->required()
      ->check(CLI::IsMember({"ctc", "onelabel", "framewise", "dummy"}));
  t->add_option("--seed", tr.seed, "training seed")->required();
  t->add_option("--out", tr.out, "model checkpoint (JSON)")->required();
  detail::add_model_options(t, tr.model);
  t->add_flag("--force", tr.force, "overwrite existing output");

  detail::DecodeArgs dec;
  auto* d = app.add_subcommand("decode", "predict the emotion of every manifest utterance");
  d->add_option("--model", dec.model, "model checkpoint")->required()->check(CLI::ExistingFile);
  d->add_option("--manifest", dec.manifest, "manifest.jsonl")->required();
  d->add_option("--out", dec.out, "optional predictions CSV");
  d->add_flag("--force", dec.force, "overwrite existing output");

  detail::CrossvalArgs cv;
  auto* c = app.add_subcommand("crossval", "grouped k-fold comparison of methods");
  c->add_option("--manifest", cv.manifest, "manifest.jsonl")->required();
  c->add_option("--methods", cv.methods, "comma separated methods")
      ->delimiter(',')
      ->check(CLI::IsMember({"ctc", "onelabel", "framewise", "dummy"}))
      ->capture_default_str();
  c->add_option("--seed", cv.seed, "fold and training seed")->required();
  c->add_option("--folds", cv.folds, "number of folds")->capture_default_str();
  c->add_flag("--pooled", cv.pooled, "headline metrics from pooled predictions");
  c->add_option("--out", cv.out, "report directory")->required();
  detail::add_model_options(c, cv.model);
  c->add_flag("--force", cv.force, "overwrite existing output");

  detail::GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of both network heads");
  g->add_option("--seed", gc.seed, "draw seed")->capture_default_str();
  g->add_option("--inputs", gc.cfg.inputs, "random draws per head")->capture_default_str();
  g->add_option("--per-block", gc.cfg.per_block, "probed parameters per layer")->capture_default_str();
  g->add_option("--tolerance", gc.cfg.tolerance, "maximum relative error")->capture_default_str();

  detail::ServeArgs sv;
  auto* a = app.add_subcommand("serve-annotation", "run the human annotation experiment server");
  a->add_option("--manifest", sv.manifest, "manifest.jsonl")->required();
  a->add_option("--host", sv.host, "bind address")->capture_default_str();
  a->add_option("--port", sv.port, "TCP port, 0 picks a free one")->capture_default_str();
  a->add_option("--log", sv.log, "label log (JSONL), replayed on start")->required();
  a->add_option("--static", sv.static_dir, "UI assets mounted at /");
  a->add_option("--seed", sv.seed, "warmup and ordering seed")->capture_default_str();

  detail::ReportArgs rp;
  auto* r = app.add_subcommand("report", "accuracy and residual tables of a crossval run, beside published values");
  r->add_option("--in", rp.in, "crossval output directory or report.json")->required()->check(CLI::ExistingPath);
  r->add_option("--human", rp.human, "saved GET /api/stats payload")->check(CLI::ExistingFile);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    return 2;
  }

  try {
    nlohmann::json summary;
    if (*s) summary = detail::synth_data(synth, err);
    if (*i) summary = detail::import_iemocap(imp, err);
    if (*f) summary = detail::extract_features(feat, err);
    if (*t) summary = detail::train(tr, err);
    if (*d) summary = detail::decode(dec, err);
    if (*c) summary = detail::crossval(cv, err);
    if (*g) summary = detail::gradcheck(gc, err);
    if (*a) {
      detail::serve_annotation(sv, out, err);
      return 0;
    }
    if (*r) summary = detail::report(rp, err);
    out << summary.dump(2) << '\n';
    if (summary.contains("pass") && !summary["pass"].get<bool>()) return 1;
    return 0;
  } catch (const Error& e) {
    out << nlohmann::json{{"error", {{"code", error_code_name(e.code())}, {"message", e.what()}}}}.dump(2) << '\n';
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    out << nlohmann::json{{"error", {{"code", "Internal"}, {"message", e.what()}}}}.dump(2) << '\n';
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace emoctc::cli

#endif  // EMOCTC_CLI_HPP_
