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

// HTTP+JSON front end for the annotation service.
//
//   POST /api/session   {"assessor": A}
//   GET  /api/next?session=S
//   GET  /api/audio/{id}                  audio/wav, Range requests honored
//   POST /api/label     {"session": S, "utterance_id": U, "answer": E, "idempotency_key": K?}
//   GET  /api/stats[?assessor=A]
//
// Errors come back as {"error": <code name>, "message": ...} with a 4xx
// status. Payload shapes are documented in README.md.

#ifndef EMOCTC_ANNOTATION_HTTP_HPP_
#define EMOCTC_ANNOTATION_HTTP_HPP_

#include "emoctc/annotation.hpp"
#include "emoctc/dataset.hpp"
#include "emoctc/wav.hpp"

#include "httplib.h"
#include "json.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <thread>

namespace emoctc::annotation {

inline nlohmann::json to_json(const SessionInfo& s) {
  return {{"session", s.session_id},
          {"assessor", s.assessor},
          {"phase", phase_name(s.phase)},
          {"warmup_total", kWarmupSize},
          {"warmup_answered", s.warmup_answered},
          {"main_total", s.main_total},
          {"main_answered", s.main_answered}};
}

inline nlohmann::json to_json(const NextItem& n) {
  if (n.done) return {{"done", true}};
  nlohmann::json j = {{"done", false},
                      {"utterance_id", n.utterance_id},
                      {"phase", n.warmup ? "warmup" : "main"},
                      {"audio_url", "/api/audio/" + n.utterance_id}};
  j["warmup_index"] = n.warmup ? nlohmann::json(n.warmup_index) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const LabelResult& r) {
  return {{"utterance_id", r.utterance_id},
          {"answer", kEmotionNames[static_cast<std::size_t>(r.answer)]},
          {"correct_label", kEmotionNames[static_cast<std::size_t>(r.correct_label)]},
          {"correct", r.answer == r.correct_label},
          {"warmup", r.warmup},
          {"replayed", r.replayed}};
}

inline nlohmann::json to_json(const HumanStats& s) {
  return {{"labels", s.labels},
          {"overall_accuracy", s.overall_accuracy},
          {"mean_class_accuracy", s.mean_class_accuracy},
          {"classes", kEmotionNames},
          {"confusion", s.confusion},
          {"coverage", {{"utterances", s.coverage.size()}, {"min", s.min_coverage}, {"at_least_2", s.covered_twice}}}};
}

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownSession:
    case ErrorCode::kNoData: return 404;
    case ErrorCode::kDuplicateAnswer:
    case ErrorCode::kNotServed: return 409;
    case ErrorCode::kIoError: return 500;
    default: return 400;
  }
}

class AnnotationServer {
 public:
  // The corpus must outlive the server. static_dir, if set, is mounted at /.
  AnnotationServer(const dataset::Corpus& corpus, AnnotationService& service,
                   std::filesystem::path static_dir = {})
      : corpus_(corpus), service_(service) {
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) index_[corpus.utterances[i].id] = i;
    if (!static_dir.empty() && !server_.set_mount_point("/", static_dir.string())) {
      throw Error(ErrorCode::kBadArgument, "static directory " + static_dir.string() + " does not exist");
    }
    routes();
  }

  ~AnnotationServer() { stop(); }
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Binds and serves on a background thread. Port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Serves on the calling thread until stop() is called from elsewhere.
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw Error(ErrorCode::kIoError, "cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  static void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
    send_json(res, {{"error", error_code_name(code)}, {"message", message}}, http_status(code));
  }

  template <typename Fn>
  static auto guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, ErrorCode::kParseError, e.what());
      }
    };
  }

  static nlohmann::json body_of(const httplib::Request& req) {
    try {
      auto j = nlohmann::json::parse(req.body);
      if (!j.is_object()) throw Error(ErrorCode::kParseError, "request body must be a JSON object");
      return j;
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorCode::kParseError, "request body is not JSON");
    }
  }

  static std::string string_field(const nlohmann::json& j, const char* key, bool required = true) {
    if (!j.contains(key)) {
      if (required) throw Error(ErrorCode::kBadArgument, std::string("missing field '") + key + "'");
      return {};
    }
    if (!j[key].is_string()) throw Error(ErrorCode::kBadArgument, std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
  }

  void routes() {
    server_.Post("/api/session", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = body_of(req);
      send_json(res, to_json(service_.start_session(string_field(body, "assessor"))));
    }));
    server_.Get("/api/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("session")) throw Error(ErrorCode::kBadArgument, "missing query parameter 'session'");
      send_json(res, to_json(service_.next(req.get_param_value("session"))));
    }));
    server_.Post("/api/label", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = body_of(req);
      const auto answer_text = string_field(body, "answer");
      const auto answer = parse_emotion(answer_text);
      if (!answer) throw Error(ErrorCode::kBadArgument, "answer '" + answer_text + "' is not one of the 4 emotions");
      send_json(res, to_json(service_.submit(string_field(body, "session"), string_field(body, "utterance_id"), *answer,
                                             string_field(body, "idempotency_key", false))));
    }));
    server_.Get("/api/stats", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, to_json(service_.stats(req.has_param("assessor") ? req.get_param_value("assessor") : "")));
    }));
    server_.Get(R"(/api/audio/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto it = index_.find(id);
      if (it == index_.end()) {
        send_json(res, {{"error", "NotFound"}, {"message", "unknown utterance " + id}}, 404);
        return;
      }
      const auto& u = corpus_.utterances[it->second];
      std::string bytes = !u.audio_path.empty() && std::filesystem::exists(u.audio_path)
                              ? wav::read_file_bytes(u.audio_path)
                              : wav::encode(u.samples, u.sample_rate);
      res.set_header("Accept-Ranges", "bytes");
      res.set_content(std::move(bytes), "audio/wav");
    }));
  }

  const dataset::Corpus& corpus_;
  AnnotationService& service_;
  std::map<std::string, std::size_t> index_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace emoctc::annotation

#endif  // EMOCTC_ANNOTATION_HTTP_HPP_
