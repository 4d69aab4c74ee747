#pragma once

// The `cmdb` command line. Exit codes: 0 success, 1 some documents failed,
// 2 usage or fatal error.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmdb/agent/provider_factory.hpp"
#include "cmdb/api/server.hpp"
#include "cmdb/eval/evaluation.hpp"
#include "cmdb/pipeline/config.hpp"
#include "cmdb/pipeline/pipeline.hpp"
#include "cmdb/store/store.hpp"
#include "cmdb/version.hpp"
#include "json.hpp"

namespace cmdb::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitFatal = 2;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

namespace detail {

struct Options {
  std::string config_file;
  bool json = false;
  pipeline::Settings flags;  // only what was given on the command line

  std::string corpus_dir;
  std::string gt_file;
  std::string eval_db;
  std::string scores_file;
  double threshold = 1.0;
  std::string roc_csv;
  std::string out_file;
  std::string in_file;
  api::Params filter;
};

inline pipeline::Settings effective_settings(const Options& o) {
  pipeline::Settings file;
  if (!o.config_file.empty()) file = pipeline::load_settings_file(o.config_file);
  return pipeline::merge_settings({file, pipeline::settings_from_env(), o.flags});
}

inline std::string db_path(const pipeline::Settings& s) {
  const auto p = pipeline::setting(s, "db_path");
  return p.empty() ? store::default_db_path() : p;
}

inline bool is_export_file(const std::string& path) {
  const std::string ext = store::kExportExtension;
  return path.size() >= ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0;
}

inline scaled::PlausibilityTable plausibility(const pipeline::Settings& s) {
  const auto p = pipeline::setting(s, "plausibility");
  return scaled::PlausibilityTable::load(p.empty() ? scaled::PlausibilityTable::default_path()
                                                   : std::filesystem::path(p));
}

/// Provider stages need a configured transport; parsing alone does not.
inline std::shared_ptr<agent::Transport> transport_for(const pipeline::Settings& s, bool needed) {
  if (!needed) return agent::MockTransport::from_json({{"entries", nlohmann::json::array()}});
  return agent::make_transport(pipeline::setting(s, "provider"), s);
}

inline void print_error(const Streams& io, bool json, const std::string& code, const std::string& msg) {
  if (json) {
    io.out << nlohmann::json{{"code", code}, {"message", msg}}.dump() << "\n";
  }
  io.err << "cmdb: " << code << ": " << msg << "\n";
}

inline int run_pipeline(const Options& o, int stages, const Streams& io) {
  const auto s = effective_settings(o);
  const auto table = plausibility(s);
  store::Store st(db_path(s));
  const bool needs_provider = (stages & ~static_cast<int>(pipeline::Stage::parse)) != 0;
  agent::ProviderClient client(transport_for(s, needs_provider), pipeline::client_options_from(s));
  pipeline::Pipeline p(st, client, pipeline::pipeline_config_from(s), &table);
  const auto rep = p.run_stages(o.corpus_dir, stages);
  if (o.json) {
    io.out << pipeline::to_json(rep).dump(2) << "\n";
  } else {
    io.out << pipeline::to_text(rep);
  }
  return rep.has_failures() ? kExitPartial : kExitOk;
}

inline std::map<std::string, double> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::io_error, "cannot read " + path);
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (!j.is_object()) throw Error(errc::bad_config, path + ": expected a JSON object of doc_id -> score");
  std::map<std::string, double> out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw Error(errc::bad_config, path + ": score for " + k + " is not a number");
    out[k] = v.get<double>();
  }
  return out;
}

inline int run_eval(const Options& o, const Streams& io) {
  const auto gts = eval::read_gt_jsonl(o.gt_file);
  if (!std::filesystem::exists(o.eval_db)) throw Error(errc::io_error, "no database at " + o.eval_db);
  store::Store st(is_export_file(o.eval_db) ? std::string(":memory:") : o.eval_db);
  if (is_export_file(o.eval_db)) st.import_jsonl(o.eval_db);
  std::vector<schema::Record> records;
  for (const auto& r : st.query_all({})) records.push_back(r.record);

  std::map<std::string, double> scores;
  if (!o.scores_file.empty()) {
    scores = read_scores(o.scores_file);
  } else {
    for (const auto& row : st.list_jobs()) {
      const auto job = pipeline::job_from_json(row.body);
      if (job.gate) scores[job.doc_id] = job.gate->score;
    }
  }
  const auto rep = eval::evaluate(records, gts, scores, o.threshold);
  if (!o.roc_csv.empty() && rep.roc) {
    std::ofstream csv(o.roc_csv, std::ios::trunc);
    csv << eval::roc_csv(*rep.roc);
    if (!csv) throw Error(errc::io_error, "cannot write " + o.roc_csv);
  }
  if (o.json) {
    io.out << eval::to_json(rep).dump(2) << "\n";
    return kExitOk;
  }
  const auto& c = rep.counts;
  const auto& m = rep.metrics;
  char buf[256];
  io.out << "documents: " << gts.size() << ", extracted records: " << records.size() << "\n";
  io.out << "confusion: tp=" << c.tp << " fp=" << c.fp << " fn=" << c.fn << " tn=" << c.tn << "\n";
  std::snprintf(buf, sizeof buf, "precision %.1f%%  recall %.1f%%  F1 %.1f%%  FPR %.1f%%  accuracy %.1f%%\n",
                eval::pct1(m.precision), eval::pct1(m.recall), eval::pct1(m.f1), eval::pct1(m.fpr),
                eval::pct1(m.accuracy));
  io.out << buf;
  if (rep.roc) {
    std::snprintf(buf, sizeof buf, "ROC AUC %.3f over %zu scored documents\n", rep.roc->auc, rep.roc->points.size());
    io.out << buf;
  } else {
    io.out << "ROC: not available (needs gate scores for both relevant and irrelevant documents)\n";
  }
  return kExitOk;
}

inline std::string param_summary(const schema::Record& r) {
  std::string out;
  for (const auto& p : r.parameters) {
    if (!out.empty()) out += ", ";
    std::ostringstream v;
    v << p.value_si;
    out += p.symbol + "=" + v.str() + (p.unit_si.empty() ? "" : " " + p.unit_si);
    if (p.resolution_flag == scaled::ResolutionFlag::ambiguous) out += " (?)";
  }
  return out;
}

inline int run_query(const Options& o, const Streams& io) {
  const auto s = effective_settings(o);
  auto f = api::query_filter_from_params(o.filter);
  store::Store st(db_path(s));
  std::vector<store::StoredRecord> items;
  if (o.filter.count("page") || o.filter.count("page_size")) {
    items = st.query_models(f).items;
  } else {
    items = st.query_all(f);
  }
  if (o.json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : items) arr.push_back(store::to_json(r));
    io.out << arr.dump(2) << "\n";
    return kExitOk;
  }
  for (const auto& it : items) {
    const auto& r = it.record;
    io.out << r.record_id << "  " << r.material.material_name << "  [" << schema::to_string(r.material.material_class)
           << "]  " << schema::to_string(r.mechanism) << "  " << schema::to_string(r.review_status) << "\n"
           << "    " << r.equation_latex << "\n";
    if (!r.parameters.empty()) io.out << "    " << param_summary(r) << "\n";
  }
  io.out << items.size() << " record(s)\n";
  return kExitOk;
}

inline int run_export(const Options& o, const Streams& io) {
  const auto s = effective_settings(o);
  store::Store st(db_path(s));
  const auto n = st.export_jsonl(o.out_file);
  if (o.json) {
    io.out << nlohmann::json{{"out", o.out_file}, {"records", n}}.dump() << "\n";
  } else {
    io.out << "exported " << n << " record(s) to " << o.out_file << "\n";
  }
  return kExitOk;
}

inline int run_import(const Options& o, const Streams& io) {
  const auto s = effective_settings(o);
  store::Store st(db_path(s));
  const auto n = st.import_jsonl(o.in_file);
  if (o.json) {
    io.out << nlohmann::json{{"in", o.in_file}, {"records", n}}.dump() << "\n";
  } else {
    io.out << "imported " << n << " record(s) from " << o.in_file << "\n";
  }
  return kExitOk;
}

inline int run_stats(const Options& o, const Streams& io) {
  const auto s = effective_settings(o);
  store::Store st(db_path(s));
  const auto h = st.mechanism_distribution();
  if (o.json) {
    io.out << store::to_json(h).dump(2) << "\n";
    return kExitOk;
  }
  char buf[128];
  for (const auto& b : h.buckets) {
    std::snprintf(buf, sizeof buf, "%-26s %6lld  %5.1f%%\n", schema::to_string(b.mechanism),
                  static_cast<long long>(b.count), b.percentage);
    io.out << buf;
  }
  io.out << "total " << h.total << "\n";
  return kExitOk;
}

inline int run_serve(const Options& o, const Streams& io) {
  const auto s = effective_settings(o);
  const auto table = plausibility(s);
  store::Store st(db_path(s));
  agent::ProviderClient client(transport_for(s, true), pipeline::client_options_from(s));
  pipeline::Pipeline p(st, client, pipeline::pipeline_config_from(s), &table);
  auto opts = api::server_options_from(s);
  api::Server server(st, p, opts);

  // SIGINT/SIGTERM are taken synchronously by a watcher thread.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  const int port = server.bind();
  if (o.json) {
    io.out << nlohmann::json{{"listening", opts.host + ":" + std::to_string(port)}, {"version", kVersion}}.dump()
           << std::endl;
  } else {
    io.out << "cmdb " << kVersion << " listening on http://" << opts.host << ":" << port << std::endl;
  }
  if (opts.api_token.empty()) io.err << "cmdb: CM_API_TOKEN is not set; mutating endpoints are open\n";
  std::thread watcher([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.listen();
  // listen() also returns if the socket dies; wake the watcher in that case.
  pthread_kill(watcher.native_handle(), SIGTERM);
  watcher.join();
  server.stop();
  return kExitOk;
}

}  // namespace detail

/// Entry point shared by the binary and the tests.
inline int run(int argc, const char* const* argv, const Streams& io) {
  detail::Options o;
  CLI::App app{"Constitutive model database: PDF corpus to validated, searchable records.", "cmdb"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config_file, "Settings file (key = value); flags > CM_* environment > file")
      ->check(CLI::ExistingFile);
  app.add_flag("--json", o.json, "Machine-readable JSON output");

  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&o, key](const std::string& v) { o.flags[key] = v; }, help);
  };
  auto db_flag = [&](CLI::App* sub) { flag(sub, "--db", "db_path", "SQLite database (default $CM_DB_PATH or cmdb.sqlite)"); };
  auto pipeline_flags = [&](CLI::App* sub) {
    sub->add_option("corpus_dir", o.corpus_dir, "Directory of PDF files")->required();
    db_flag(sub);
    flag(sub, "--provider", "provider", "mock:<script.json> or http");
    flag(sub, "--workers", "workers", "Documents processed in parallel");
    flag(sub, "--limit-chars", "limit_chars", "Gatekeeper head length in characters");
    flag(sub, "--correction-budget", "correction_budget", "Analyst attempts per document");
    flag(sub, "--doc-timeout", "doc_timeout_s", "Per-document deadline in seconds");
    flag(sub, "--work-dir", "work_dir", "Where parsed documents are kept between stages");
    flag(sub, "--plausibility", "plausibility", "Plausibility table JSON");
  };

  int stages = 0;
  auto* ingest = app.add_subcommand("ingest", "Parse PDFs and record them as jobs");
  pipeline_flags(ingest);
  ingest->callback([&] { stages = static_cast<int>(pipeline::Stage::parse); });
  auto* screen = app.add_subcommand("screen", "Run the gatekeeper over parsed documents");
  pipeline_flags(screen);
  screen->callback([&] { stages = static_cast<int>(pipeline::Stage::screen); });
  auto* extract = app.add_subcommand("extract", "Run the analyst over documents that passed the gate");
  pipeline_flags(extract);
  extract->callback([&] { stages = static_cast<int>(pipeline::Stage::extract); });
  auto* run = app.add_subcommand("run", "Full pipeline: parse, screen, extract, store");
  pipeline_flags(run);
  run->callback([&] { stages = pipeline::kAllStages; });

  auto* ev = app.add_subcommand("eval", "Score stored records against expert ground truth");
  ev->add_option("--gt", o.gt_file, "Ground truth JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("--db", o.eval_db, "SQLite database or .cmdb.jsonl export")->required();
  ev->add_option("--scores", o.scores_file, "JSON object doc_id -> classifier score (default: gate scores)")
      ->check(CLI::ExistingFile);
  ev->add_option("--threshold", o.threshold, "Operating threshold for the ROC point")->capture_default_str();
  ev->add_option("--roc-csv", o.roc_csv, "Write the ROC curve as CSV");

  auto* q = app.add_subcommand("query", "Search stored records");
  db_flag(q);
  auto filter = [&](const std::string& name, const std::string& key, const std::string& help) {
    q->add_option_function<std::string>(name, [&o, key](const std::string& v) { o.filter.emplace(key, v); }, help);
  };
  filter("--material-class", "material_class", "stone, brick, mortar, timber, earthen, clay_suspension, ...");
  filter("--material", "material", "Substring of the material name");
  filter("--mechanism", "mechanism", "elasto_plasticity, failure_damage, rheology_time_dependent, ...");
  filter("--param", "param", "Parameter symbol (LaTeX)");
  filter("--min", "min", "Lower SI bound for --param");
  filter("--max", "max", "Upper SI bound for --param");
  filter("--q", "q", "Free-text substring");
  filter("--status", "status", "unverified, verified, rejected, edited");
  filter("--doc-id", "doc_id", "Records of one document");
  filter("--page", "page", "Page number (enables paging)");
  filter("--page-size", "page_size", "Records per page");

  auto* ex = app.add_subcommand("export", "Write every record as JSON lines");
  db_flag(ex);
  ex->add_option("--out", o.out_file, "Output file, conventionally *.cmdb.jsonl")->required();
  auto* im = app.add_subcommand("import", "Load a JSON lines export (all or nothing)");
  db_flag(im);
  im->add_option("in_file", o.in_file, "Export file")->required()->check(CLI::ExistingFile);

  auto* stats = app.add_subcommand("stats", "Mechanism distribution of stored records");
  db_flag(stats);

  auto* serve = app.add_subcommand("serve", "HTTP API");
  db_flag(serve);
  flag(serve, "--listen", "listen_addr", "host:port (default $CM_LISTEN_ADDR or 127.0.0.1:8080)");
  flag(serve, "--provider", "provider", "mock:<script.json> or http");
  flag(serve, "--workers", "workers", "Background extraction workers");
  flag(serve, "--upload-dir", "upload_dir", "Where uploaded PDFs are kept");
  flag(serve, "--upload-limit-mb", "upload_limit_mb", "Largest accepted upload");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    io.out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    io.err << "cmdb: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    io.err << (subs.empty() ? app.help() : subs.front()->help());
    if (o.json) io.out << nlohmann::json{{"code", "usage"}, {"message", e.what()}}.dump() << "\n";
    return kExitFatal;
  }

  try {
    if (stages) return detail::run_pipeline(o, stages, io);
    if (ev->parsed()) return detail::run_eval(o, io);
    if (q->parsed()) return detail::run_query(o, io);
    if (ex->parsed()) return detail::run_export(o, io);
    if (im->parsed()) return detail::run_import(o, io);
    if (stats->parsed()) return detail::run_stats(o, io);
    if (serve->parsed()) return detail::run_serve(o, io);
  } catch (const Error& e) {
    detail::print_error(io, o.json, e.code(), e.what());
    return kExitFatal;
  } catch (const std::exception& e) {
    detail::print_error(io, o.json, "internal", e.what());
    return kExitFatal;
  }
  return kExitFatal;
}

}  // namespace cmdb::cli
