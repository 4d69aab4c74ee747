#pragma once

// HTTP front end: uploads, job polling, search, statistics and review.
// Extraction runs on background workers; clients poll GET /documents/{id}.

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cmdb/error.hpp"
#include "cmdb/ingest/document.hpp"
#include "cmdb/pipeline/pipeline.hpp"
#include "cmdb/store/store.hpp"
#include "cmdb/util/sha256.hpp"
#include "cmdb/version.hpp"
#include "httplib.h"
#include "json.hpp"

namespace cmdb::api {

namespace apierr {
inline constexpr const char* bad_request = "bad_request";
inline constexpr const char* unauthorized = "unauthorized";
inline constexpr const char* not_found = "not_found";
inline constexpr const char* too_large = "too_large";
inline constexpr const char* not_a_pdf = "not_a_pdf";
inline constexpr const char* bad_filter = "bad_filter";
inline constexpr const char* invalid_edit = "invalid_edit";
inline constexpr const char* version_conflict = "version_conflict";
inline constexpr const char* store_unavailable = "store_unavailable";
inline constexpr const char* internal = "internal";
}  // namespace apierr

struct ApiError {
  int http_status = 500;
  std::string code;
  std::string message;
  nlohmann::json detail;
};

inline nlohmann::json to_json(const ApiError& e) {
  return {{"code", e.code}, {"message", e.message}, {"detail", e.detail}};
}

/// Maps a library error onto the HTTP error contract.
inline ApiError api_error_from(const Error& e) {
  nlohmann::json detail;
  if (const auto* re = dynamic_cast<const store::RecordError*>(&e)) {
    detail = nlohmann::json::array();
    for (const auto& f : re->errors()) detail.push_back({{"json_path", f.json_path}, {"message", f.message}});
  }
  const std::string& c = e.code();
  if (c == errc::bad_filter) return {400, apierr::bad_filter, e.what(), detail};
  if (c == errc::not_found) return {404, apierr::not_found, e.what(), detail};
  if (c == errc::version_conflict) return {409, apierr::version_conflict, e.what(), detail};
  if (c == errc::invalid_edit || c == errc::invalid_record) return {422, apierr::invalid_edit, e.what(), detail};
  if (c == errc::store_unavailable) return {503, apierr::store_unavailable, e.what(), detail};
  return {500, apierr::internal, e.what(), {{"error_code", c}}};
}

using Params = std::multimap<std::string, std::string>;

/// Builds a QueryFilter from query-string style parameters. Shared by the
/// HTTP endpoint and the command line.
inline store::QueryFilter query_filter_from_params(const Params& params) {
  store::QueryFilter f;
  auto bad = [](const std::string& msg) { return Error(errc::bad_filter, msg); };
  auto number = [&](const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(key);
      return d;
    } catch (const std::exception&) {
      throw bad(key + " must be a number, got '" + v + "'");
    }
  };
  auto integer = [&](const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const long long n = std::stoll(v, &used);
      if (used != v.size() || n < 1 || n > 1000000) throw std::invalid_argument(key);
      return static_cast<int>(n);
    } catch (const std::exception&) {
      throw bad(key + " must be a positive integer, got '" + v + "'");
    }
  };
  for (const auto& [k, v] : params) {
    if (k == "material_class") {
      const auto mc = schema::material_class_from_string(v);
      if (!mc) throw bad("unknown material_class '" + v + "'");
      f.material_class = *mc;
    } else if (k == "material") {
      f.material_name_substring = v;
    } else if (k == "mechanism") {
      const auto m = schema::mechanism_from_string(v);
      if (!m) throw bad("unknown mechanism '" + v + "'");
      f.mechanism = *m;
    } else if (k == "param") {
      f.parameter_symbol = v;
    } else if (k == "min") {
      f.param_min_si = number(k, v);
    } else if (k == "max") {
      f.param_max_si = number(k, v);
    } else if (k == "q") {
      f.text_query = v;
    } else if (k == "status") {
      const auto s = schema::review_status_from_string(v);
      if (!s) throw bad("unknown status '" + v + "'");
      f.review_status = *s;
    } else if (k == "doc_id") {
      f.doc_id = v;
    } else if (k == "page") {
      f.page = integer(k, v);
    } else if (k == "page_size") {
      f.page_size = integer(k, v);
    } else {
      throw bad("unknown filter '" + k + "'");
    }
  }
  store::validate_filter(f);
  return f;
}

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string api_token;  // empty: mutating endpoints are open
  std::size_t upload_limit_bytes = 50u * 1024u * 1024u;
  std::filesystem::path upload_dir = "uploads";
  int job_workers = 2;
};

/// "host:port", ":port" or "port".
inline std::pair<std::string, int> parse_listen_addr(const std::string& addr) {
  std::string host = "127.0.0.1", port = addr;
  if (const auto colon = addr.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = addr.substr(0, colon);
    port = addr.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range(port);
    return {host, p};
  } catch (const std::exception&) {
    throw Error(errc::bad_config, "listen_addr must look like host:port, got '" + addr + "'");
  }
}

inline ServerOptions server_options_from(const pipeline::Settings& s) {
  ServerOptions o;
  if (const auto addr = pipeline::setting(s, "listen_addr"); !addr.empty()) {
    std::tie(o.host, o.port) = parse_listen_addr(addr);
  }
  o.api_token = pipeline::setting(s, "api_token");
  o.upload_limit_bytes =
      static_cast<std::size_t>(pipeline::setting_int(s, "upload_limit_mb", 50, 1, 100000)) * 1024u * 1024u;
  if (const auto d = pipeline::setting(s, "upload_dir"); !d.empty()) o.upload_dir = d;
  o.job_workers = static_cast<int>(pipeline::setting_int(s, "workers", o.job_workers, 1, 64));
  return o;
}

/// PDF files start with "%PDF-", possibly after a little junk.
inline bool looks_like_pdf(std::string_view bytes) {
  return bytes.substr(0, 1024).find("%PDF-") != std::string_view::npos;
}

inline std::string doc_id_for(const std::string& sha256) { return "doc-" + sha256.substr(0, 16); }

class Server {
public:
  Server(store::Store& store, pipeline::Pipeline& pipeline, ServerOptions opts)
      : store_(store), pipeline_(pipeline), opts_(std::move(opts)) {
    routes();
  }

  ~Server() { stop(); }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts workers; returns the bound port (useful with port 0).
  int bind() {
    std::filesystem::create_directories(opts_.upload_dir);
    const int port = opts_.port == 0 ? http_.bind_to_any_port(opts_.host) : opts_.port;
    if (opts_.port != 0 && !http_.bind_to_port(opts_.host, opts_.port)) {
      throw Error(errc::bad_config, "cannot listen on " + opts_.host + ":" + std::to_string(opts_.port));
    }
    if (port < 0) throw Error(errc::bad_config, "cannot listen on " + opts_.host);
    port_ = port;
    start_workers();
    requeue_unsettled();
    return port_;
  }

  /// Blocks until stop().
  void listen() { http_.listen_after_bind(); }

  void start_background() {
    if (port_ < 0) bind();
    listener_ = std::thread([this] { listen(); });
    http_.wait_until_ready();
  }

  void stop() {
    http_.stop();
    if (listener_.joinable()) listener_.join();
    {
      std::lock_guard lk(queue_mu_);
      stopping_ = true;
    }
    queue_cv_.notify_all();
    for (auto& t : workers_) {
      if (t.joinable()) t.join();
    }
    workers_.clear();
  }

  int port() const { return port_; }

  /// Blocks until the background queue is empty and idle.
  void drain() {
    std::unique_lock lk(queue_mu_);
    idle_cv_.wait(lk, [&] { return queue_.empty() && busy_ == 0; });
  }

private:
  store::Store& store_;
  pipeline::Pipeline& pipeline_;
  ServerOptions opts_;
  httplib::Server http_;
  std::thread listener_;
  int port_ = -1;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_, idle_cv_;
  std::deque<std::string> queue_;
  int busy_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;

  std::mutex upload_mu_;  // dedup check and job creation are one step
  std::mutex review_mu_;  // keeps job state sync ordered

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, const ApiError& e) { send_json(res, e.http_status, to_json(e)); }

  bool authorized(const httplib::Request& req, httplib::Response& res) const {
    if (opts_.api_token.empty()) return true;
    if (req.get_header_value("Authorization") == "Bearer " + opts_.api_token) return true;
    res.set_header("WWW-Authenticate", "Bearer");
    send_error(res, {401, apierr::unauthorized, "missing or wrong bearer token", nullptr});
    return false;
  }

  template <typename F>
  static httplib::Server::Handler guarded(F&& f) {
    return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const ApiFailure& e) {
        send_error(res, e.err);
      } catch (const Error& e) {
        send_error(res, api_error_from(e));
      } catch (const nlohmann::json::exception& e) {
        send_error(res, {400, apierr::bad_request, std::string("malformed JSON: ") + e.what(), nullptr});
      } catch (const std::exception& e) {
        send_error(res, {500, apierr::internal, e.what(), nullptr});
      }
    };
  }

  void routes() {
    // Body limit enforced in the handler for a precise 413; this cap only
    // stops absurd payloads before they are buffered.
    http_.set_payload_max_length(opts_.upload_limit_bytes + 4u * 1024u * 1024u);
    http_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      if (res.status == 413) {
        send_error(res, {413, apierr::too_large, "payload exceeds the upload limit", nullptr});
      } else if (res.status == 404) {
        send_error(res, {404, apierr::not_found, "no such endpoint", nullptr});
      } else {
        send_error(res, {res.status, res.status < 500 ? apierr::bad_request : apierr::internal,
                         httplib::status_message(res.status), nullptr});
      }
      return httplib::Server::HandlerResponse::Handled;
    });

    http_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      if (store_.healthy()) {
        send_json(res, 200, {{"status", "ok"}, {"version", kVersion}});
      } else {
        auto body = to_json(ApiError{503, apierr::store_unavailable, "store is not reachable", nullptr});
        body["status"] = "unavailable";
        body["version"] = kVersion;
        send_json(res, 503, body);
      }
    });

    http_.Post("/documents", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      upload(req, res);
    }));

    http_.Get("/documents", guarded([this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& row : store_.list_jobs()) {
        out.push_back({{"doc_id", row.doc_id}, {"state", row.state}, {"updated_at", row.updated_at}});
      }
      send_json(res, 200, out);
    }));

    http_.Get(R"(/documents/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto row = store_.get_job(req.matches[1]);
      if (!row) throw Error(errc::not_found, "no document " + std::string(req.matches[1]));
      send_json(res, 200, job_view(pipeline::job_from_json(row->body)));
    }));

    http_.Get("/models", guarded([this](const httplib::Request& req, httplib::Response& res) {
      Params params(req.params.begin(), req.params.end());
      send_json(res, 200, store::to_json(store_.query_models(query_filter_from_params(params))));
    }));

    http_.Get(R"(/extractions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto rec = store_.get_record(req.matches[1]);
      if (!rec) throw Error(errc::not_found, "no record " + std::string(req.matches[1]));
      send_json(res, 200, record_view(*rec));
    }));

    http_.Get(R"(/extractions/([^/]+)/audit)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      if (!store_.get_record(id)) throw Error(errc::not_found, "no record " + id);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& a : store_.audit_trail(id)) out.push_back(store::to_json(a));
      send_json(res, 200, out);
    }));

    http_.Post(R"(/extractions/([^/]+)/review)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      review(req.matches[1], req, res);
    }));

    http_.Get("/stats/mechanisms", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, store::to_json(store_.mechanism_distribution()));
    }));
  }

  void upload(const httplib::Request& req, httplib::Response& res) {
    std::string bytes;
    std::string filename;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("file")) {
        throw ApiFailure({400, apierr::bad_request, "multipart field 'file' is required", nullptr});
      }
      const auto f = req.get_file_value("file");
      bytes = f.content;
      filename = f.filename;
    } else {
      bytes = req.body;
    }
    if (bytes.size() > opts_.upload_limit_bytes) {
      return send_error(res, {413, apierr::too_large, "upload exceeds the limit",
                              {{"limit_bytes", opts_.upload_limit_bytes}, {"size_bytes", bytes.size()}}});
    }
    if (!looks_like_pdf(bytes)) {
      return send_error(res, {422, apierr::not_a_pdf, "payload is not a PDF", {{"filename", filename}}});
    }
    const std::string sha = sha256_hex(bytes);
    std::lock_guard lk(upload_mu_);
    if (const auto existing = store_.find_job_by_sha(sha)) {
      // A failed document is retried when it is uploaded again.
      if (existing->state == to_string(pipeline::JobState::failed)) enqueue(existing->doc_id);
      return send_json(res, 200, {{"doc_id", existing->doc_id}, {"job_state", existing->state}, {"duplicate", true}});
    }
    const std::string doc_id = doc_id_for(sha);
    const auto path = opts_.upload_dir / (doc_id + ".pdf");
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw Error(errc::io_error, "cannot write " + path.string());
    }
    const auto job = pipeline::new_job(doc_id, sha, path.string(), prompts::version(), schema::kSchemaVersion);
    pipeline_.save_job(job);
    enqueue(doc_id);
    send_json(res, 202, {{"doc_id", doc_id}, {"job_state", to_string(job.state)}});
  }

  void review(const std::string& record_id, const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body.empty() ? "{}" : req.body);
    if (!body.is_object()) throw ApiFailure({400, apierr::bad_request, "body must be a JSON object", nullptr});
    const auto kind = store::review_action_from_string(body.value("action", std::string()));
    if (!kind) {
      throw ApiFailure({400, apierr::bad_request, "action must be one of verify, reject, edit",
                        {{"action", body.value("action", nlohmann::json())}}});
    }
    store::ReviewAction a;
    a.kind = *kind;
    a.payload = body.value("payload", nlohmann::json());
    a.note = body.value("note", std::string());
    a.reviewer = body.value("reviewer", std::string());
    if (body.contains("expected_version")) {
      const auto& v = body["expected_version"];
      if (!v.is_number_integer()) throw ApiFailure({400, apierr::bad_request, "expected_version must be an integer", nullptr});
      a.expected_version = v.get<std::int64_t>();
    }
    const auto updated = store_.set_review_status(record_id, a);
    {
      std::lock_guard lk(review_mu_);
      pipeline::sync_review_state(store_, updated.record.doc_id);
    }
    send_json(res, 200, record_view(updated));
  }

  // Thrown inside handlers for errors that have no library counterpart.
  struct ApiFailure : Error {
    explicit ApiFailure(ApiError e) : Error(e.code, e.message), err(std::move(e)) {}
    ApiError err;
  };

  static nlohmann::json record_view(const store::StoredRecord& s) {
    auto j = store::to_json(s);
    j["grounding"] = schema::to_json(schema::check_grounding(s.record.equation_latex, s.record.symbol_map));
    return j;
  }

  nlohmann::json job_view(const pipeline::ExtractionJob& job) {
    auto j = pipeline::to_json(job);
    j.erase("source_path");
    j["created_at"] = job.transitions.empty() ? nlohmann::json() : nlohmann::json(job.transitions.front().at);
    j["updated_at"] = job.transitions.empty() ? nlohmann::json() : nlohmann::json(job.transitions.back().at);
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& id : job.record_ids) {
      if (const auto r = store_.get_record(id)) recs.push_back(record_view(*r));
    }
    j["records"] = std::move(recs);
    return j;
  }

  void enqueue(const std::string& doc_id) {
    {
      std::lock_guard lk(queue_mu_);
      queue_.push_back(doc_id);
    }
    queue_cv_.notify_one();
  }

  void requeue_unsettled() {
    for (const auto& row : store_.list_jobs()) {
      const auto st = pipeline::job_state_from_string(row.state);
      if (st && !pipeline::is_settled(*st)) enqueue(row.doc_id);
    }
  }

  void start_workers() {
    for (int i = 0; i < opts_.job_workers; ++i) workers_.emplace_back([this] { work(); });
  }

  void work() {
    for (;;) {
      std::string doc_id;
      {
        std::unique_lock lk(queue_mu_);
        queue_cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        doc_id = queue_.front();
        queue_.pop_front();
        ++busy_;
      }
      try {
        if (const auto job = pipeline_.load_job(doc_id)) pipeline_.process_file(job->source_path, doc_id);
      } catch (const std::exception& e) {
        // The job stays unsettled and is picked up again on the next start.
        std::cerr << "cmdb: job " << doc_id << " interrupted: " << e.what() << "\n";
      }
      {
        std::lock_guard lk(queue_mu_);
        --busy_;
      }
      idle_cv_.notify_all();
    }
  }
};

}  // namespace cmdb::api
