#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "cmdb/agent/analyst.hpp"
#include "cmdb/agent/gatekeeper.hpp"
#include "cmdb/agent/prompts.hpp"
#include "cmdb/ingest/document.hpp"
#include "cmdb/pipeline/config.hpp"
#include "cmdb/pipeline/cost.hpp"
#include "cmdb/pipeline/job.hpp"
#include "cmdb/schema/record.hpp"
#include "cmdb/store/store.hpp"

namespace cmdb::pipeline {

struct PipelineConfig {
  std::size_t limit_chars = ingest::kDefaultHeadLimit;
  int correction_budget = 3;
  int workers = 4;
  std::chrono::milliseconds doc_timeout{300000};
  std::size_t context_chars = 1200;
  std::filesystem::path work_dir;  // where <doc_id>.serialized.json goes; empty = not persisted
  bool force = false;              // ignore the resume key
};

inline PipelineConfig pipeline_config_from(const Settings& s) {
  PipelineConfig c;
  c.limit_chars = static_cast<std::size_t>(setting_int(s, "limit_chars", static_cast<long long>(c.limit_chars), 1, 10000000));
  c.correction_budget = static_cast<int>(setting_int(s, "correction_budget", c.correction_budget, 1, 50));
  c.workers = static_cast<int>(setting_int(s, "workers", c.workers, 1, 256));
  c.doc_timeout = std::chrono::seconds(setting_int(s, "doc_timeout_s", 300, 1, 86400));
  c.context_chars = static_cast<std::size_t>(setting_int(s, "context_chars", static_cast<long long>(c.context_chars), 0, 1000000));
  c.work_dir = setting(s, "work_dir");
  return c;
}

enum class Stage { parse = 1, screen = 2, extract = 4 };
inline constexpr int kAllStages = 7;

struct DocOutcome {
  std::string doc_id;
  JobState state = JobState::queued;
  bool resumed = false;
  std::string error_code;
  std::string error;
  bool manual_screening = false;
  std::optional<double> gate_score;
  std::size_t records = 0;
};

struct PipelineReport {
  std::size_t docs_in = 0;
  std::map<std::string, std::size_t> state_counts;
  std::size_t resumed = 0;
  std::size_t records_stored = 0;
  std::vector<DocOutcome> docs;
  CostReport cost;

  bool has_failures() const {
    auto it = state_counts.find(to_string(JobState::failed));
    return it != state_counts.end() && it->second > 0;
  }
};

inline nlohmann::json to_json(const PipelineReport& r) {
  nlohmann::json docs = nlohmann::json::array();
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& d : r.docs) {
    nlohmann::json j = {{"doc_id", d.doc_id},   {"state", to_string(d.state)}, {"resumed", d.resumed},
                        {"records", d.records}, {"manual_screening", d.manual_screening}};
    j["gate_score"] = d.gate_score ? nlohmann::json(*d.gate_score) : nlohmann::json();
    if (!d.error_code.empty()) j["error"] = {{"code", d.error_code}, {"message", d.error}};
    docs.push_back(j);
    if (d.state == JobState::failed) failures.push_back({{"doc_id", d.doc_id}, {"code", d.error_code}, {"reason", d.error}});
  }
  nlohmann::json counts = nlohmann::json::object();
  for (auto s : kAllJobStates) counts[to_string(s)] = 0;
  for (const auto& [k, v] : r.state_counts) counts[k] = v;
  return {{"docs_in", r.docs_in},
          {"state_counts", counts},
          {"resumed", r.resumed},
          {"records_stored", r.records_stored},
          {"failures", failures},
          {"cost", to_json(r.cost)},
          {"documents", docs}};
}

inline std::string to_text(const PipelineReport& r) {
  auto count = [&](JobState s) {
    auto it = r.state_counts.find(to_string(s));
    return it == r.state_counts.end() ? std::size_t{0} : it->second;
  };
  std::string out;
  out += "documents:      " + std::to_string(r.docs_in) + " (" + std::to_string(r.resumed) + " resumed)\n";
  out += "screened:       " + std::to_string(r.cost.docs_screened) + "\n";
  out += "extracted:      " + std::to_string(r.cost.docs_extracted) + "\n";
  out += "rejected:       " + std::to_string(count(JobState::rejected)) + "\n";
  out += "needs review:   " + std::to_string(count(JobState::needs_review)) + "\n";
  out += "verified:       " + std::to_string(count(JobState::verified)) + "\n";
  out += "failed:         " + std::to_string(count(JobState::failed)) + "\n";
  out += "records stored: " + std::to_string(r.records_stored) + "\n";
  out += "tokens:         gatekeeper " + std::to_string(r.cost.gatekeeper.total()) + ", analyst " +
         std::to_string(r.cost.analyst.total()) + ", single-stage estimate " +
         std::to_string(r.cost.hypothetical_single_stage_tokens) + "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f%%", r.cost.savings_ratio * 100.0);
  out += std::string("savings:        ") + buf + "\n";
  for (const auto& d : r.docs) {
    if (d.state == JobState::failed) out += "  failed " + d.doc_id + ": " + d.error_code + ": " + d.error + "\n";
  }
  return out;
}

/// Sorted *.pdf files of a corpus directory.
inline std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw Error(errc::unreadable_corpus, "corpus directory " + dir.string() + " is missing or not a directory");
  }
  std::vector<std::filesystem::path> out;
  std::filesystem::directory_iterator it(dir, ec);
  if (ec) throw Error(errc::unreadable_corpus, "cannot list " + dir.string() + ": " + ec.message());
  for (const auto& e : it) {
    if (!e.is_regular_file()) continue;
    if (text::to_lower_ascii(e.path().extension().string()) == ".pdf") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(errc::empty_corpus, "no PDF files in " + dir.string());
  return out;
}

/// Drives documents through parse -> screen -> extract -> store with job
/// tracking. One instance may serve many runs; it is safe to call from
/// several threads.
class Pipeline {
public:
  Pipeline(store::Store& store, agent::ProviderClient& client, PipelineConfig cfg = {},
           const scaled::PlausibilityTable* plausibility = nullptr)
      : store_(store), client_(client), cfg_(std::move(cfg)), plausibility_(plausibility) {}

  const PipelineConfig& config() const { return cfg_; }

  /// Full run over a corpus directory.
  PipelineReport run(const std::filesystem::path& corpus_dir) { return run_stages(corpus_dir, kAllStages); }

  /// Runs only the given stages (bitmask of Stage) for every PDF.
  PipelineReport run_stages(const std::filesystem::path& corpus_dir, int stages) {
    const auto files = list_corpus(corpus_dir);
    std::vector<std::pair<std::filesystem::path, std::string>> items;
    for (const auto& f : files) items.emplace_back(f, f.stem().string());
    return run_items(items, stages);
  }

  PipelineReport run_items(const std::vector<std::pair<std::filesystem::path, std::string>>& items, int stages) {
    const std::size_t log_start = client_.call_log().size();
    std::vector<DocOutcome> outcomes(items.size());
    std::vector<std::optional<ExtractionJob>> jobs(items.size());
    std::vector<bool> screened_now(items.size(), false);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> fatal{false};
    std::mutex fatal_mu;
    std::optional<Error> fatal_error;

    auto worker = [&] {
      for (;;) {
        if (fatal) return;
        const std::size_t i = next++;
        if (i >= items.size()) return;
        try {
          bool resumed = false, screened = false;
          ExtractionJob job = advance(items[i].first, items[i].second, stages, resumed, screened);
          outcomes[i] = outcome_of(job, resumed);
          screened_now[i] = screened;
          jobs[i] = std::move(job);
        } catch (const Error& e) {
          std::lock_guard lk(fatal_mu);
          if (!fatal_error) fatal_error = e;
          fatal = true;
        }
      }
    };
    const int n = std::max(1, std::min<int>(cfg_.workers, static_cast<int>(items.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < n; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (fatal_error) throw *fatal_error;

    PipelineReport rep;
    rep.docs_in = items.size();
    std::set<std::string> ids;
    std::map<std::string, std::int64_t> single_stage;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& o = outcomes[i];
      ++rep.state_counts[to_string(o.state)];
      rep.resumed += o.resumed;
      rep.records_stored += o.records;
      ids.insert(o.doc_id);
      if (screened_now[i] && jobs[i]) single_stage[o.doc_id] = jobs[i]->hypothetical_tokens;
      rep.docs.push_back(o);
    }
    const auto log = client_.call_log();
    std::vector<agent::CallRecord> mine;
    for (std::size_t k = log_start; k < log.size(); ++k) {
      if (ids.count(log[k].doc_id)) mine.push_back(log[k]);
    }
    rep.cost = account_cost(mine, single_stage);
    return rep;
  }

  /// One document through the requested stages. Store outages propagate
  /// (Error store_unavailable); every other problem is recorded on the job.
  ExtractionJob process_file(const std::filesystem::path& pdf, const std::string& doc_id, int stages = kAllStages) {
    bool resumed = false, screened = false;
    return advance(pdf, doc_id, stages, resumed, screened);
  }

  std::optional<ExtractionJob> load_job(const std::string& doc_id) {
    auto row = store_.get_job(doc_id);
    if (!row) return std::nullopt;
    return job_from_json(row->body);
  }

  void save_job(const ExtractionJob& job) { store_.put_job({job.doc_id, job.sha256, to_string(job.state), to_json(job), ""}); }

private:
  static DocOutcome outcome_of(const ExtractionJob& j, bool resumed) {
    DocOutcome o;
    o.doc_id = j.doc_id;
    o.state = j.state;
    o.resumed = resumed;
    o.error_code = j.error_code;
    o.error = j.error;
    o.manual_screening = j.manual_screening;
    if (j.gate) o.gate_score = j.gate->score;
    o.records = j.record_ids.size();
    return o;
  }

  static bool has(int stages, Stage s) { return (stages & static_cast<int>(s)) != 0; }

  std::string prompt_version() const { return prompts::version(); }

  ingest::SerializedDoc load_serialized(const ExtractionJob& job) {
    if (!cfg_.work_dir.empty() && std::filesystem::exists(ingest::serialized_path(cfg_.work_dir, job.doc_id))) {
      return ingest::read_serialized(cfg_.work_dir, job.doc_id);
    }
    return ingest::parse_pdf(ingest::load_raw_document(job.source_path, job.doc_id));
  }

  ExtractionJob advance(const std::filesystem::path& pdf, const std::string& doc_id, int stages, bool& resumed,
                        bool& screened) {
    const auto deadline = agent::Clock::now() + cfg_.doc_timeout;
    std::optional<ingest::RawDocument> raw;
    std::string io_error;
    try {
      raw = ingest::load_raw_document(pdf, doc_id);
    } catch (const std::exception& e) {
      io_error = e.what();
    }
    const std::string sha = raw ? raw->sha256 : std::string();
    std::optional<ExtractionJob> existing = load_job(doc_id);
    ExtractionJob job;
    const bool same_key = existing && raw && existing->sha256 == sha && existing->prompt_version == prompt_version() &&
                          existing->schema_version == schema::kSchemaVersion;
    if (same_key && !cfg_.force && existing->state != JobState::failed) {
      job = *existing;
      if (is_settled(job.state)) {
        resumed = true;
        return job;
      }
    } else {
      job = new_job(doc_id, sha, pdf.string(), prompt_version(), schema::kSchemaVersion);
      save_job(job);
    }
    if (!raw) {
      fail(job, errc::io_error, io_error);
      save_job(job);
      return job;
    }

    std::optional<ingest::SerializedDoc> doc;
    try {
      if (job.state == JobState::queued && has(stages, Stage::parse)) {
        try {
          doc = ingest::parse_pdf(*raw);
          if (!cfg_.work_dir.empty()) {
            std::filesystem::create_directories(cfg_.work_dir);
            ingest::write_serialized(cfg_.work_dir, *doc);
          }
          const auto req = agent::build_analyst_request(*doc, analyst_options(deadline));
          job.hypothetical_tokens = agent::estimate_tokens(req.system_prompt) + agent::estimate_tokens(req.user_content);
          transition(job, JobState::parsed);
        } catch (const Error& e) {
          if (e.code() == errc::store_unavailable) throw;
          fail(job, e.code(), e.what());
        }
        save_job(job);
      }
      if (job.state == JobState::parsed && has(stages, Stage::screen)) {
        if (!doc) doc = load_serialized(job);
        transition(job, JobState::screening);
        save_job(job);
        screened = true;
        try {
          const auto head = ingest::truncate_head(*doc, cfg_.limit_chars);
          const auto verdict = agent::gatekeeper_screen(client_, head, deadline);
          job.gate = verdict;
          transition(job, verdict.relevant ? JobState::extracting : JobState::rejected);
        } catch (const Error& e) {
          if (e.code() == errc::store_unavailable) throw;
          job.manual_screening = e.code() == errc::unparseable_verdict;
          fail(job, e.code(), e.what());
        }
        save_job(job);
      }
      if (job.state == JobState::extracting && has(stages, Stage::extract)) {
        if (!doc) doc = load_serialized(job);
        const auto res = agent::analyst_extract(client_, *doc, analyst_options(deadline));
        job.analyst_attempts = res.attempts;
        job.correction_trace = res.correction_trace;
        if (res.status == agent::ExtractionStatus::ok) {
          job.record_ids.clear();
          for (const auto& r : res.records) job.record_ids.push_back(store_.upsert_record(r, "extract"));
          transition(job, JobState::needs_review);
        } else if (res.status == agent::ExtractionStatus::failed_schema) {
          fail(job, "failed_schema",
               "no schema-valid output after " + std::to_string(res.attempts) + " attempts; last errors: " +
                   summarize(res.correction_trace));
        } else {
          fail(job, res.error_code.empty() ? std::string(errc::provider_unavailable) : res.error_code, res.error);
        }
        save_job(job);
      }
    } catch (const Error& e) {
      if (e.code() == errc::store_unavailable) throw;
      if (!is_terminal(job.state)) {
        fail(job, e.code(), e.what());
        save_job(job);
      }
    } catch (const std::exception& e) {
      if (!is_terminal(job.state)) {
        fail(job, "internal", e.what());
        save_job(job);
      }
    }
    return job;
  }

  agent::AnalystOptions analyst_options(agent::Clock::time_point deadline) const {
    agent::AnalystOptions o;
    o.budget = cfg_.correction_budget;
    o.context_chars = cfg_.context_chars;
    o.plausibility = plausibility_;
    o.deadline = deadline;
    return o;
  }

  static std::string summarize(const std::vector<agent::TraceEntry>& trace) {
    if (trace.empty()) return "none";
    std::string out;
    for (const auto& e : trace.back().errors) {
      if (!out.empty()) out += "; ";
      out += e.json_path + ": " + e.message;
      if (out.size() > 400) {
        out += "; ...";
        break;
      }
    }
    return out;
  }

  store::Store& store_;
  agent::ProviderClient& client_;
  PipelineConfig cfg_;
  const scaled::PlausibilityTable* plausibility_;
};

/// Moves a needs_review job on once every one of its records has been
/// reviewed: all rejected -> rejected, otherwise -> verified.
inline std::optional<ExtractionJob> sync_review_state(store::Store& store, const std::string& doc_id) {
  auto row = store.get_job(doc_id);
  if (!row) return std::nullopt;
  ExtractionJob job = job_from_json(row->body);
  if (job.state != JobState::needs_review || job.record_ids.empty()) return job;
  bool all_rejected = true;
  for (const auto& id : job.record_ids) {
    const auto rec = store.get_record(id);
    if (!rec) continue;
    if (rec->record.review_status == schema::ReviewStatus::unverified) return job;
    all_rejected = all_rejected && rec->record.review_status == schema::ReviewStatus::rejected;
  }
  transition(job, all_rejected ? JobState::rejected : JobState::verified);
  store.put_job({job.doc_id, job.sha256, to_string(job.state), to_json(job), ""});
  return job;
}

}  // namespace cmdb::pipeline
