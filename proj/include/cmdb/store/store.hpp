#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cmdb/error.hpp"
#include "cmdb/schema/record.hpp"
#include "cmdb/store/sqlite.hpp"
#include "cmdb/util/clock.hpp"
#include "cmdb/util/text.hpp"
#include "json.hpp"

namespace cmdb::store {

using schema::MaterialClass;
using schema::Mechanism;
using schema::Record;
using schema::ReviewStatus;

/// Raised for InvalidRecord / InvalidEdit, carrying the field errors.
class RecordError : public Error {
public:
  RecordError(std::string code, const std::string& message, std::vector<schema::FieldError> errors)
      : Error(std::move(code), message), errors_(std::move(errors)) {}
  const std::vector<schema::FieldError>& errors() const noexcept { return errors_; }

private:
  std::vector<schema::FieldError> errors_;
};

struct StoredRecord {
  Record record;
  std::int64_t version = 0;
  std::string updated_at;
};

inline nlohmann::json to_json(const StoredRecord& s) {
  nlohmann::json j = schema::to_json(s.record);
  j["version"] = s.version;
  j["updated_at"] = s.updated_at;
  return j;
}

struct QueryFilter {
  std::optional<MaterialClass> material_class;
  std::optional<std::string> material_name_substring;
  std::optional<Mechanism> mechanism;
  std::optional<std::string> parameter_symbol;
  std::optional<double> param_min_si;
  std::optional<double> param_max_si;
  std::optional<ReviewStatus> review_status;
  std::optional<std::string> text_query;  // substring over material and symbol-definition text
  std::optional<std::string> doc_id;
  int page = 1;
  int page_size = 50;
};

/// Throws Error(bad_filter) when the filter breaks its invariants.
inline void validate_filter(const QueryFilter& f) {
  auto bad = [](const std::string& m) { throw Error(errc::bad_filter, m); };
  if ((f.param_min_si || f.param_max_si) && (!f.parameter_symbol || text::trim(*f.parameter_symbol).empty())) {
    bad("parameter bounds require parameter_symbol");
  }
  if (f.param_min_si && !std::isfinite(*f.param_min_si)) bad("param_min_si must be finite");
  if (f.param_max_si && !std::isfinite(*f.param_max_si)) bad("param_max_si must be finite");
  if (f.param_min_si && f.param_max_si && *f.param_min_si > *f.param_max_si) bad("param_min_si exceeds param_max_si");
  if (f.page < 1) bad("page must be >= 1");
  if (f.page_size < 1 || f.page_size > 500) bad("page_size must be in [1, 500]");
  if (f.parameter_symbol) {
    try {
      if (!latex::is_single_identifier(*f.parameter_symbol)) bad("parameter_symbol is not a single symbol");
    } catch (const Error& e) {
      if (e.code() == errc::bad_filter) throw;
      bad(std::string("parameter_symbol: ") + e.what());
    }
  }
}

struct QueryPage {
  std::vector<StoredRecord> items;
  std::int64_t total = 0;
  int page = 1;
  int page_size = 50;
};

inline nlohmann::json to_json(const QueryPage& p) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& s : p.items) items.push_back(to_json(s));
  return {{"items", std::move(items)}, {"total", p.total}, {"page", p.page}, {"page_size", p.page_size}};
}

struct MechanismBucket {
  Mechanism mechanism = Mechanism::other;
  std::int64_t count = 0;
  double percentage = 0.0;
};

struct MechanismHistogram {
  std::vector<MechanismBucket> buckets;
  std::int64_t total = 0;
};

inline nlohmann::json to_json(const MechanismHistogram& h) {
  nlohmann::json b = nlohmann::json::array();
  for (const auto& x : h.buckets) {
    b.push_back({{"mechanism", schema::to_string(x.mechanism)}, {"count", x.count}, {"percentage", x.percentage}});
  }
  return {{"buckets", std::move(b)}, {"total", h.total}};
}

/// Shares of `counts` in tenths of a percent that sum to exactly 1000
/// (Hamilton / largest remainder). Ties go to the earlier index.
inline std::vector<std::int64_t> largest_remainder_tenths(const std::vector<std::int64_t>& counts) {
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  std::vector<std::int64_t> out(counts.size(), 0);
  if (total == 0) return out;
  std::vector<std::int64_t> rem(counts.size());
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out[i] = counts[i] * 1000 / total;
    rem[i] = counts[i] * 1000 % total;
    assigned += out[i];
  }
  std::vector<std::size_t> order(counts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < 1000; ++k, ++assigned) ++out[order[k]];
  return out;
}

inline MechanismHistogram histogram_from_counts(const std::vector<std::pair<Mechanism, std::int64_t>>& counts) {
  MechanismHistogram h;
  std::vector<std::int64_t> c;
  for (const auto& [m, n] : counts) {
    if (n <= 0) continue;
    h.buckets.push_back({m, n, 0.0});
    c.push_back(n);
    h.total += n;
  }
  const auto tenths = largest_remainder_tenths(c);
  for (std::size_t i = 0; i < h.buckets.size(); ++i) h.buckets[i].percentage = static_cast<double>(tenths[i]) / 10.0;
  return h;
}

enum class ReviewActionKind { verify, reject, edit };

inline const char* to_string(ReviewActionKind k) {
  switch (k) {
    case ReviewActionKind::verify: return "verify";
    case ReviewActionKind::reject: return "reject";
    case ReviewActionKind::edit: return "edit";
  }
  return "verify";
}

inline std::optional<ReviewActionKind> review_action_from_string(std::string_view s) {
  for (auto k : {ReviewActionKind::verify, ReviewActionKind::reject, ReviewActionKind::edit}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

struct ReviewAction {
  ReviewActionKind kind = ReviewActionKind::verify;
  nlohmann::json payload;  // edit only: JSON merge patch over the current record
  std::string note;
  std::string reviewer;
  std::optional<std::int64_t> expected_version;
};

struct AuditEntry {
  std::string record_id;
  std::int64_t version = 0;
  std::string action;
  std::string note;
  std::string reviewer;
  std::string at;
  nlohmann::json body;  // record content after the action
};

inline nlohmann::json to_json(const AuditEntry& a) {
  return {{"record_id", a.record_id}, {"version", a.version}, {"action", a.action}, {"note", a.note},
          {"reviewer", a.reviewer},   {"at", a.at},           {"body", a.body}};
}

struct JobRow {
  std::string doc_id;
  std::string sha256;
  std::string state;
  nlohmann::json body;  // owned by the pipeline
  std::string updated_at;
};

inline constexpr const char* kExportExtension = ".cmdb.jsonl";

/// Location from CM_DB_PATH, else ./cmdb.sqlite.
inline std::string default_db_path() {
  if (const char* p = std::getenv("CM_DB_PATH"); p && *p) return p;
  return "cmdb.sqlite";
}

/// SQLite-backed knowledge store. All calls are serialized through one
/// connection; review actions compare-and-set on the record version.
class Store {
public:
  explicit Store(const std::string& path = ":memory:") : path_(path), db_(path) {
    if (path != ":memory:") db_.exec("PRAGMA journal_mode=WAL");
    db_.exec("PRAGMA foreign_keys=ON");
    db_.exec(R"sql(
CREATE TABLE IF NOT EXISTS records (
  record_id TEXT PRIMARY KEY,
  doc_id TEXT NOT NULL,
  canon_eq TEXT NOT NULL,
  material_key TEXT NOT NULL,
  material_name TEXT NOT NULL,
  material_class TEXT NOT NULL,
  mechanism TEXT NOT NULL,
  review_status TEXT NOT NULL,
  search_text TEXT NOT NULL,
  body TEXT NOT NULL,
  version INTEGER NOT NULL,
  updated_at TEXT NOT NULL,
  UNIQUE (doc_id, canon_eq, material_key)
);
CREATE INDEX IF NOT EXISTS records_order ON records (material_name, record_id);
CREATE TABLE IF NOT EXISTS params (
  record_id TEXT NOT NULL REFERENCES records(record_id) ON DELETE CASCADE,
  idx INTEGER NOT NULL,
  symbol TEXT NOT NULL,
  value_si REAL NOT NULL,
  PRIMARY KEY (record_id, idx)
);
CREATE INDEX IF NOT EXISTS params_symbol ON params (symbol, value_si);
CREATE TABLE IF NOT EXISTS audit (
  record_id TEXT NOT NULL,
  version INTEGER NOT NULL,
  action TEXT NOT NULL,
  note TEXT NOT NULL,
  reviewer TEXT NOT NULL,
  at TEXT NOT NULL,
  body TEXT NOT NULL,
  PRIMARY KEY (record_id, version)
);
CREATE TABLE IF NOT EXISTS jobs (
  doc_id TEXT PRIMARY KEY,
  sha256 TEXT NOT NULL,
  state TEXT NOT NULL,
  body TEXT NOT NULL,
  updated_at TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS jobs_sha ON jobs (sha256);
)sql");
  }

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::string& path() const { return path_; }

  /// Simulates (or performs) shutdown; every later call raises StoreUnavailable.
  void close() {
    std::lock_guard lk(mu_);
    db_.close();
  }

  bool healthy() {
    std::lock_guard lk(mu_);
    if (!db_.is_open()) return false;
    try {
      sqlite::Statement s(db_.handle(), "SELECT 1");
      return s.step();
    } catch (const Error&) {
      return false;
    }
  }

  // ---------------------------------------------------------------- records

  /// Validates and inserts or updates by natural key (doc, canonical
  /// equation, material). Returns the record id.
  std::string upsert_record(const Record& r, const std::string& action = "upsert") {
    const nlohmann::json body = schema::to_json(r);
    const auto rep = schema::validate_record(body);
    if (!rep.valid) throw RecordError(errc::invalid_record, describe(rep.errors), rep.errors);
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Transaction tx(db_);
    std::string id = upsert_locked(r, action, "", "");
    tx.commit();
    return id;
  }

  std::optional<StoredRecord> get_record(const std::string& record_id) {
    std::lock_guard lk(mu_);
    ensure_open();
    return get_locked(record_id);
  }

  std::int64_t count() {
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Statement s(db_.handle(), "SELECT COUNT(*) FROM records");
    s.step();
    return s.int64(0);
  }

  QueryPage query_models(const QueryFilter& f) {
    validate_filter(f);
    std::lock_guard lk(mu_);
    ensure_open();
    std::string where = " WHERE 1=1";
    std::vector<std::function<void(sqlite::Statement&, int&)>> binds;
    auto add_text = [&](std::string clause, std::string v) {
      where += clause;
      binds.push_back([v = std::move(v)](sqlite::Statement& s, int& i) { s.bind(i++, v); });
    };
    if (f.material_class) add_text(" AND material_class = ?", schema::to_string(*f.material_class));
    if (f.mechanism) add_text(" AND mechanism = ?", schema::to_string(*f.mechanism));
    if (f.review_status) add_text(" AND review_status = ?", schema::to_string(*f.review_status));
    if (f.doc_id) add_text(" AND doc_id = ?", *f.doc_id);
    if (f.material_name_substring) {
      add_text(" AND instr(material_key, ?) > 0", text::fold(*f.material_name_substring));
    }
    if (f.text_query) add_text(" AND instr(search_text, ?) > 0", text::fold(*f.text_query));
    if (f.parameter_symbol) {
      std::string clause = " AND record_id IN (SELECT p.record_id FROM params p WHERE p.symbol = ?";
      const std::string sym = latex::canonical_symbol(*f.parameter_symbol);
      const auto lo = f.param_min_si;
      const auto hi = f.param_max_si;
      if (lo) clause += " AND p.value_si >= ?";
      if (hi) clause += " AND p.value_si <= ?";
      clause += ")";
      where += clause;
      binds.push_back([sym, lo, hi](sqlite::Statement& s, int& i) {
        s.bind(i++, sym);
        if (lo) s.bind(i++, *lo);
        if (hi) s.bind(i++, *hi);
      });
    }
    auto bind_all = [&](sqlite::Statement& s) {
      int i = 1;
      for (auto& b : binds) b(s, i);
    };
    QueryPage page;
    page.page = f.page;
    page.page_size = f.page_size;
    {
      sqlite::Statement s(db_.handle(), "SELECT COUNT(*) FROM records" + where);
      bind_all(s);
      s.step();
      page.total = s.int64(0);
    }
    sqlite::Statement s(db_.handle(), "SELECT body, version, updated_at FROM records" + where +
                                          " ORDER BY material_name, record_id LIMIT ? OFFSET ?");
    bind_all(s);
    // LIMIT/OFFSET come after every predicate placeholder.
    const int next = count_placeholders(where) + 1;
    s.bind(next, static_cast<std::int64_t>(f.page_size));
    s.bind(next + 1, static_cast<std::int64_t>(f.page - 1) * f.page_size);
    while (s.step()) page.items.push_back(row_to_stored(s.text(0), s.int64(1), s.text(2)));
    return page;
  }

  /// Every record matching the filter, ignoring pagination.
  std::vector<StoredRecord> query_all(QueryFilter f) {
    std::vector<StoredRecord> out;
    f.page_size = 500;
    for (f.page = 1;; ++f.page) {
      auto p = query_models(f);
      for (auto& s : p.items) out.push_back(std::move(s));
      if (static_cast<std::int64_t>(f.page) * f.page_size >= p.total) break;
    }
    return out;
  }

  /// Counts over every record that is not rejected.
  MechanismHistogram mechanism_distribution() {
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Statement s(db_.handle(),
                        "SELECT mechanism, COUNT(*) FROM records WHERE review_status != 'rejected' GROUP BY mechanism");
    std::map<std::string, std::int64_t> by_name;
    while (s.step()) by_name[s.text(0)] = s.int64(1);
    std::vector<std::pair<Mechanism, std::int64_t>> counts;
    for (auto m : schema::kAllMechanisms) {
      auto it = by_name.find(schema::to_string(m));
      if (it != by_name.end()) counts.emplace_back(m, it->second);
    }
    return histogram_from_counts(counts);
  }

  // ----------------------------------------------------------------- review

  StoredRecord set_review_status(const std::string& record_id, const ReviewAction& action) {
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Transaction tx(db_);
    auto cur = get_locked(record_id);
    if (!cur) throw Error(errc::not_found, "no record " + record_id);
    if (action.expected_version && *action.expected_version != cur->version) {
      throw Error(errc::version_conflict, "record " + record_id + " is at version " + std::to_string(cur->version) +
                                              ", expected " + std::to_string(*action.expected_version));
    }
    nlohmann::json next = schema::to_json(cur->record);
    switch (action.kind) {
      case ReviewActionKind::verify:
        next["review_status"] = "verified";
        break;
      case ReviewActionKind::reject:
        next["review_status"] = "rejected";
        break;
      case ReviewActionKind::edit:
        if (!action.payload.is_object()) {
          throw RecordError(errc::invalid_edit, "edit payload must be a JSON object",
                            {{"$", "edit payload must be a JSON object"}});
        }
        next.merge_patch(action.payload);
        next["record_id"] = cur->record.record_id;
        next["doc_id"] = cur->record.doc_id;
        next["review_status"] = "edited";
        break;
    }
    const auto rep = schema::validate_record(next);
    if (!rep.valid) {
      std::string msg = action.kind == ReviewActionKind::verify
                            ? "record cannot be verified while it breaks a schema rule; edit it first: "
                            : "edited record is invalid: ";
      throw RecordError(errc::invalid_edit, msg + describe(rep.errors), rep.errors);
    }
    const Record updated = schema::record_from_json(next);
    if (action.kind == ReviewActionKind::edit) {
      const auto clash = find_by_natural_key(updated);
      if (clash && *clash != record_id) {
        throw RecordError(errc::invalid_edit, "edit collides with existing record " + *clash,
                          {{"$.equation_latex", "same equation and material as record " + *clash}});
      }
    }
    write_locked(updated, cur->version, to_string(action.kind), action.note, action.reviewer);
    tx.commit();
    return *get_locked(record_id);
  }

  /// Versions in ascending order; the last body is the current content.
  std::vector<AuditEntry> audit_trail(const std::string& record_id) {
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Statement s(db_.handle(),
                        "SELECT version, action, note, reviewer, at, body FROM audit WHERE record_id = ? ORDER BY version");
    s.bind(1, record_id);
    std::vector<AuditEntry> out;
    while (s.step()) {
      out.push_back({record_id, s.int64(0), s.text(1), s.text(2), s.text(3), s.text(4),
                     nlohmann::json::parse(s.text(5))});
    }
    return out;
  }

  // ------------------------------------------------------ export / import

  /// One record per line, ordered by record_id. Returns the line count.
  std::size_t export_jsonl(const std::filesystem::path& path) {
    std::vector<std::string> lines;
    {
      std::lock_guard lk(mu_);
      ensure_open();
      sqlite::Statement s(db_.handle(), "SELECT body FROM records ORDER BY record_id");
      while (s.step()) lines.push_back(nlohmann::json::parse(s.text(0)).dump());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(errc::io_error, "cannot write " + path.string());
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw Error(errc::io_error, "write failed for " + path.string());
    return lines.size();
  }

  /// Loads an export. Ids and review statuses are kept; all-or-nothing.
  std::size_t import_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(errc::io_error, "cannot read " + path.string());
    std::vector<Record> recs;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (text::trim(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw RecordError(errc::invalid_record, "line " + std::to_string(n) + ": " + e.what(), {{"$", e.what()}});
      }
      const auto rep = schema::validate_record(j);
      if (!rep.valid) {
        throw RecordError(errc::invalid_record, "line " + std::to_string(n) + ": " + describe(rep.errors), rep.errors);
      }
      recs.push_back(schema::record_from_json(j));
    }
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Transaction tx(db_);
    for (const auto& r : recs) upsert_locked(r, "import", "", "");
    tx.commit();
    return recs.size();
  }

  // ------------------------------------------------------------------- jobs

  void put_job(const JobRow& job) {
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Statement s(db_.handle(),
                        "INSERT INTO jobs (doc_id, sha256, state, body, updated_at) VALUES (?, ?, ?, ?, ?) "
                        "ON CONFLICT(doc_id) DO UPDATE SET sha256 = excluded.sha256, state = excluded.state, "
                        "body = excluded.body, updated_at = excluded.updated_at");
    s.bind(1, job.doc_id).bind(2, job.sha256).bind(3, job.state).bind(4, job.body.dump()).bind(5, now_iso8601());
    s.run();
  }

  std::optional<JobRow> get_job(const std::string& doc_id) {
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Statement s(db_.handle(), "SELECT doc_id, sha256, state, body, updated_at FROM jobs WHERE doc_id = ?");
    s.bind(1, doc_id);
    if (!s.step()) return std::nullopt;
    return JobRow{s.text(0), s.text(1), s.text(2), nlohmann::json::parse(s.text(3)), s.text(4)};
  }

  std::optional<JobRow> find_job_by_sha(const std::string& sha256) {
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Statement s(db_.handle(),
                        "SELECT doc_id, sha256, state, body, updated_at FROM jobs WHERE sha256 = ? ORDER BY doc_id LIMIT 1");
    s.bind(1, sha256);
    if (!s.step()) return std::nullopt;
    return JobRow{s.text(0), s.text(1), s.text(2), nlohmann::json::parse(s.text(3)), s.text(4)};
  }

  std::vector<JobRow> list_jobs() {
    std::lock_guard lk(mu_);
    ensure_open();
    sqlite::Statement s(db_.handle(), "SELECT doc_id, sha256, state, body, updated_at FROM jobs ORDER BY doc_id");
    std::vector<JobRow> out;
    while (s.step()) out.push_back({s.text(0), s.text(1), s.text(2), nlohmann::json::parse(s.text(3)), s.text(4)});
    return out;
  }

private:
  static std::string describe(const std::vector<schema::FieldError>& errors) {
    std::string m;
    for (const auto& e : errors) {
      if (!m.empty()) m += "; ";
      m += e.json_path + ": " + e.message;
    }
    return m;
  }

  static int count_placeholders(const std::string& sql) {
    return static_cast<int>(std::count(sql.begin(), sql.end(), '?'));
  }

  static std::string canonical_equation(const std::string& eq) {
    try {
      return latex::normalize_equation(eq);
    } catch (const Error&) {
      return eq;
    }
  }

  static std::string search_text(const Record& r) {
    std::string t = r.material.material_name + "\n" + schema::to_string(r.material.material_class);
    for (const auto& b : r.symbol_map) t += "\n" + b.definition;
    return text::fold(t);
  }

  static StoredRecord row_to_stored(const std::string& body, std::int64_t version, std::string updated_at) {
    StoredRecord s;
    s.record = schema::record_from_json(nlohmann::json::parse(body));
    s.version = version;
    s.updated_at = std::move(updated_at);
    return s;
  }

  void ensure_open() const {
    if (!db_.is_open()) throw Error(errc::store_unavailable, "knowledge store is not available");
  }

  std::optional<StoredRecord> get_locked(const std::string& record_id) {
    sqlite::Statement s(db_.handle(), "SELECT body, version, updated_at FROM records WHERE record_id = ?");
    s.bind(1, record_id);
    if (!s.step()) return std::nullopt;
    return row_to_stored(s.text(0), s.int64(1), s.text(2));
  }

  std::optional<std::string> find_by_natural_key(const Record& r) {
    sqlite::Statement s(db_.handle(),
                        "SELECT record_id FROM records WHERE doc_id = ? AND canon_eq = ? AND material_key = ?");
    s.bind(1, r.doc_id).bind(2, canonical_equation(r.equation_latex)).bind(3, text::fold(r.material.material_name));
    if (!s.step()) return std::nullopt;
    return s.text(0);
  }

  std::string upsert_locked(Record r, const std::string& action, const std::string& note, const std::string& reviewer) {
    const auto by_key = find_by_natural_key(r);
    std::optional<StoredRecord> existing;
    if (!r.record_id.empty()) existing = get_locked(r.record_id);
    if (by_key && existing && *by_key != existing->record.record_id) {
      throw RecordError(errc::invalid_record, "record id " + r.record_id + " and natural key point at different records",
                        {{"$.record_id", "conflicts with record " + *by_key}});
    }
    if (!existing && by_key) existing = get_locked(*by_key);
    if (!existing) {
      if (r.record_id.empty()) r.record_id = schema::make_record_id(r.doc_id, r.equation_latex, r.material.material_name);
      write_locked(r, 0, action == "upsert" ? "create" : action, note, reviewer);
      return r.record_id;
    }
    r.record_id = existing->record.record_id;
    // Re-extraction must not silently undo a reviewer's decision.
    if (r.review_status == ReviewStatus::unverified && existing->record.review_status != ReviewStatus::unverified) {
      Record probe = r;
      probe.review_status = existing->record.review_status;
      if (probe == existing->record) return r.record_id;
    }
    if (r == existing->record) return r.record_id;
    write_locked(r, existing->version, action, note, reviewer);
    return r.record_id;
  }

  /// Writes `r` as version prev_version + 1 (insert when prev_version is 0)
  /// and appends the audit entry.
  void write_locked(const Record& r, std::int64_t prev_version, const std::string& action, const std::string& note,
                    const std::string& reviewer) {
    const std::string body = schema::to_json(r).dump();
    const std::string at = now_iso8601();
    const std::int64_t version = prev_version + 1;
    if (prev_version == 0) {
      sqlite::Statement s(db_.handle(),
                          "INSERT INTO records (record_id, doc_id, canon_eq, material_key, material_name, material_class, "
                          "mechanism, review_status, search_text, body, version, updated_at) "
                          "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)");
      s.bind(1, r.record_id).bind(2, r.doc_id).bind(3, canonical_equation(r.equation_latex));
      s.bind(4, text::fold(r.material.material_name)).bind(5, r.material.material_name);
      s.bind(6, schema::to_string(r.material.material_class)).bind(7, schema::to_string(r.mechanism));
      s.bind(8, schema::to_string(r.review_status)).bind(9, search_text(r)).bind(10, body);
      s.bind(11, version).bind(12, at);
      run_checked(s);
    } else {
      sqlite::Statement s(db_.handle(),
                          "UPDATE records SET doc_id = ?, canon_eq = ?, material_key = ?, material_name = ?, "
                          "material_class = ?, mechanism = ?, review_status = ?, search_text = ?, body = ?, "
                          "version = ?, updated_at = ? WHERE record_id = ? AND version = ?");
      s.bind(1, r.doc_id).bind(2, canonical_equation(r.equation_latex)).bind(3, text::fold(r.material.material_name));
      s.bind(4, r.material.material_name).bind(5, schema::to_string(r.material.material_class));
      s.bind(6, schema::to_string(r.mechanism)).bind(7, schema::to_string(r.review_status)).bind(8, search_text(r));
      s.bind(9, body).bind(10, version).bind(11, at).bind(12, r.record_id).bind(13, prev_version);
      run_checked(s);
      if (db_.changes() != 1) {
        throw Error(errc::version_conflict, "record " + r.record_id + " changed concurrently");
      }
      sqlite::Statement del(db_.handle(), "DELETE FROM params WHERE record_id = ?");
      del.bind(1, r.record_id);
      del.run();
    }
    for (std::size_t i = 0; i < r.parameters.size(); ++i) {
      sqlite::Statement p(db_.handle(), "INSERT INTO params (record_id, idx, symbol, value_si) VALUES (?, ?, ?, ?)");
      p.bind(1, r.record_id).bind(2, static_cast<std::int64_t>(i));
      p.bind(3, latex::canonical_symbol(r.parameters[i].symbol)).bind(4, r.parameters[i].value_si);
      p.run();
    }
    sqlite::Statement a(db_.handle(),
                        "INSERT INTO audit (record_id, version, action, note, reviewer, at, body) VALUES (?, ?, ?, ?, ?, ?, ?)");
    a.bind(1, r.record_id).bind(2, version).bind(3, action).bind(4, note).bind(5, reviewer).bind(6, at).bind(7, body);
    a.run();
  }

  static void run_checked(sqlite::Statement& s) {
    try {
      s.run();
    } catch (const Error& e) {
      if (e.code() == "constraint") {
        throw RecordError(errc::invalid_record, std::string("store constraint violated: ") + e.what(),
                          {{"$", e.what()}});
      }
      throw;
    }
  }

  std::string path_;
  sqlite::Database db_;
  std::mutex mu_;
};

}  // namespace cmdb::store
