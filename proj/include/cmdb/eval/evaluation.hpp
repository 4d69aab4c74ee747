#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmdb/error.hpp"
#include "cmdb/schema/latex.hpp"
#include "cmdb/schema/record.hpp"
#include "cmdb/util/decimal.hpp"
#include "cmdb/util/text.hpp"
#include "json.hpp"

namespace cmdb::eval {

struct GtModel {
  std::string equation_canonical;
  std::vector<schema::SymbolBinding> symbol_map;
  std::string material_name;
  schema::Mechanism mechanism = schema::Mechanism::other;
};

struct GroundTruthDoc {
  std::string doc_id;
  std::vector<GtModel> gt_models;
  std::int64_t candidate_block_count = 0;
};

inline nlohmann::json to_json(const GroundTruthDoc& d) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : d.gt_models) {
    nlohmann::json sm = nlohmann::json::array();
    for (const auto& b : m.symbol_map) sm.push_back(schema::to_json(b));
    models.push_back({{"equation_canonical", m.equation_canonical},
                      {"symbol_map", std::move(sm)},
                      {"material_name", m.material_name},
                      {"mechanism", schema::to_string(m.mechanism)}});
  }
  return {{"doc_id", d.doc_id}, {"gt_models", std::move(models)}, {"candidate_block_count", d.candidate_block_count}};
}

/// Equations are canonicalized on load (normalize_equation is idempotent).
inline GroundTruthDoc gt_doc_from_json(const nlohmann::json& j) {
  GroundTruthDoc d;
  try {
    d.doc_id = j.at("doc_id").get<std::string>();
    d.candidate_block_count = j.at("candidate_block_count").get<std::int64_t>();
    for (const auto& m : j.at("gt_models")) {
      GtModel g;
      g.equation_canonical = latex::normalize_equation(m.at("equation_canonical").get<std::string>());
      for (const auto& b : m.at("symbol_map")) {
        g.symbol_map.push_back({b.at("symbol").get<std::string>(), b.at("definition").get<std::string>(),
                                b.value("unit", std::string("dimensionless"))});
      }
      g.material_name = m.at("material_name").get<std::string>();
      const auto mech = schema::mechanism_from_string(m.value("mechanism", std::string("other")));
      if (!mech) throw Error(errc::bad_config, "unknown mechanism in ground truth for " + d.doc_id);
      g.mechanism = *mech;
      d.gt_models.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::bad_config, std::string("malformed ground-truth entry: ") + e.what());
  }
  if (d.candidate_block_count < 0 || static_cast<std::int64_t>(d.gt_models.size()) > d.candidate_block_count) {
    throw Error(errc::inconsistent_counts,
                d.doc_id + ": gt_models (" + std::to_string(d.gt_models.size()) + ") exceed candidate_block_count (" +
                    std::to_string(d.candidate_block_count) + ")");
  }
  return d;
}

inline std::vector<GroundTruthDoc> read_gt_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::io_error, "cannot read " + path.string());
  std::vector<GroundTruthDoc> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(gt_doc_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(errc::bad_config, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void write_gt_jsonl(const std::filesystem::path& path, const std::vector<GroundTruthDoc>& docs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(errc::io_error, "cannot write " + path.string());
  for (const auto& d : docs) out << to_json(d).dump() << '\n';
}

// ------------------------------------------------------------- matching

struct MatchOutcome {
  std::string doc_id;
  std::vector<std::pair<std::size_t, std::size_t>> tp;  // (extraction index, gt index)
  std::vector<std::size_t> fp;                          // extraction indices
  std::vector<std::size_t> fn;                          // gt indices
};

inline nlohmann::json to_json(const MatchOutcome& m) {
  nlohmann::json tp = nlohmann::json::array();
  for (auto [e, g] : m.tp) tp.push_back({{"extraction", e}, {"gt", g}});
  return {{"doc_id", m.doc_id}, {"tp", std::move(tp)}, {"fp", m.fp}, {"fn", m.fn}};
}

namespace detail {

inline std::map<std::string, std::string> definitions_by_symbol(const std::vector<schema::SymbolBinding>& sm) {
  std::map<std::string, std::string> out;
  for (const auto& b : sm) {
    std::string key;
    try {
      key = latex::canonical_symbol(b.symbol);
    } catch (const Error&) {
      key = b.symbol;
    }
    out[key] = text::fold(b.definition);
  }
  return out;
}

inline bool definitions_agree(const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b) {
  for (const auto& [sym, def] : a) {
    auto it = b.find(sym);
    if (it != b.end() && it->second != def) return false;
  }
  return true;
}

}  // namespace detail

/// Greedy one-to-one matching in extraction order: each extraction takes the
/// first unmatched GT model with the same canonical equation, the same
/// case-folded material and agreeing definitions on shared symbols.
inline MatchOutcome match_extractions(const std::vector<schema::Record>& extracted, const GroundTruthDoc& gt) {
  MatchOutcome out;
  out.doc_id = gt.doc_id;
  std::vector<bool> taken(gt.gt_models.size(), false);
  std::vector<std::map<std::string, std::string>> gt_defs;
  for (const auto& g : gt.gt_models) gt_defs.push_back(detail::definitions_by_symbol(g.symbol_map));
  for (std::size_t i = 0; i < extracted.size(); ++i) {
    const auto& e = extracted[i];
    std::string canon;
    try {
      canon = latex::normalize_equation(e.equation_latex);
    } catch (const Error&) {
      out.fp.push_back(i);
      continue;
    }
    const std::string material = text::fold(e.material.material_name);
    const auto defs = detail::definitions_by_symbol(e.symbol_map);
    bool matched = false;
    for (std::size_t k = 0; k < gt.gt_models.size() && !matched; ++k) {
      if (taken[k]) continue;
      const auto& g = gt.gt_models[k];
      if (g.equation_canonical != canon || text::fold(g.material_name) != material) continue;
      if (!detail::definitions_agree(defs, gt_defs[k])) continue;
      taken[k] = true;
      out.tp.emplace_back(i, k);
      matched = true;
    }
    if (!matched) out.fp.push_back(i);
  }
  for (std::size_t k = 0; k < taken.size(); ++k) {
    if (!taken[k]) out.fn.push_back(k);
  }
  return out;
}

// ------------------------------------------------------------ confusion

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline nlohmann::json to_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

/// tn = total candidate blocks - tp - fp - fn.
inline ConfusionCounts confusion_from_totals(std::int64_t tp, std::int64_t fp, std::int64_t fn,
                                             std::int64_t candidate_total) {
  ConfusionCounts c{tp, fp, fn, candidate_total - tp - fp - fn};
  if (c.tn < 0) {
    throw Error(errc::inconsistent_counts, "candidate blocks (" + std::to_string(candidate_total) +
                                               ") fewer than tp+fp+fn (" + std::to_string(tp + fp + fn) + ")");
  }
  return c;
}

inline ConfusionCounts confusion(const std::vector<MatchOutcome>& outcomes, const std::vector<GroundTruthDoc>& gts) {
  std::map<std::string, const GroundTruthDoc*> by_id;
  for (const auto& g : gts) {
    if (!by_id.emplace(g.doc_id, &g).second) throw Error(errc::mismatched_doc_sets, "duplicate GT doc " + g.doc_id);
  }
  std::set<std::string> seen;
  std::int64_t tp = 0, fp = 0, fn = 0, cands = 0;
  for (const auto& o : outcomes) {
    if (!by_id.count(o.doc_id)) throw Error(errc::mismatched_doc_sets, "outcome for unknown doc " + o.doc_id);
    if (!seen.insert(o.doc_id).second) throw Error(errc::mismatched_doc_sets, "two outcomes for doc " + o.doc_id);
    tp += static_cast<std::int64_t>(o.tp.size());
    fp += static_cast<std::int64_t>(o.fp.size());
    fn += static_cast<std::int64_t>(o.fn.size());
  }
  if (seen.size() != by_id.size()) {
    for (const auto& [id, _] : by_id) {
      if (!seen.count(id)) throw Error(errc::mismatched_doc_sets, "no outcome for GT doc " + id);
    }
  }
  for (const auto& g : gts) cands += g.candidate_block_count;
  return confusion_from_totals(tp, fp, fn, cands);
}

/// Groups records by doc_id and matches each GT doc. Records for documents
/// absent from the GT raise MismatchedDocSets.
inline std::vector<MatchOutcome> match_corpus(const std::vector<schema::Record>& records,
                                              const std::vector<GroundTruthDoc>& gts) {
  std::map<std::string, std::vector<schema::Record>> by_doc;
  for (const auto& r : records) by_doc[r.doc_id].push_back(r);
  std::set<std::string> gt_ids;
  for (const auto& g : gts) gt_ids.insert(g.doc_id);
  for (const auto& [doc, _] : by_doc) {
    if (!gt_ids.count(doc)) throw Error(errc::mismatched_doc_sets, "extractions for doc " + doc + " not in ground truth");
  }
  std::vector<MatchOutcome> out;
  for (const auto& g : gts) {
    auto it = by_doc.find(g.doc_id);
    out.push_back(match_extractions(it == by_doc.end() ? std::vector<schema::Record>{} : it->second, g));
  }
  return out;
}

// -------------------------------------------------------------- metrics

struct MetricsReport {
  double precision = 0, recall = 0, f1 = 0, fpr = 0, accuracy = 0;
};

inline double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline MetricsReport metrics(const ConfusionCounts& c) {
  MetricsReport m;
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.fpr = ratio(c.fp, c.fp + c.tn);
  m.accuracy = ratio(c.tp + c.tn, c.tp + c.fp + c.fn + c.tn);
  return m;
}

/// Percent with one decimal, for display.
inline double pct1(double v) { return std::round(v * 1000.0) / 10.0; }

inline nlohmann::json to_json(const MetricsReport& m) {
  return {{"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"fpr", m.fpr},
          {"accuracy", m.accuracy},
          {"display_percent",
           {{"precision", pct1(m.precision)},
            {"recall", pct1(m.recall)},
            {"f1", pct1(m.f1)},
            {"fpr", pct1(m.fpr)},
            {"accuracy", pct1(m.accuracy)}}}};
}

// ------------------------------------------------------------------- ROC

struct ScoredItem {
  double score = 0;
  bool is_positive = false;
};

struct RocPoint {
  double threshold = 0, fpr = 0, tpr = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0;
  RocPoint operating_point;
};

/// Thresholds sweep the distinct scores in descending order (equal scores
/// form one step); a point counts items with score >= threshold. The AUC is
/// the trapezoidal area with (0,0) and (1,1) added.
inline RocCurve roc(std::vector<ScoredItem> scored, double operating_threshold) {
  std::int64_t P = 0, N = 0;
  for (const auto& s : scored) {
    if (!std::isfinite(s.score)) throw std::invalid_argument("roc: scores must be finite");
    (s.is_positive ? P : N) += 1;
  }
  if (P == 0 || N == 0) {
    throw Error(errc::degenerate_classes, "roc needs at least one positive and one negative (got " +
                                              std::to_string(P) + " positive, " + std::to_string(N) + " negative)");
  }
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredItem& a, const ScoredItem& b) { return a.score > b.score; });
  RocCurve c;
  std::int64_t tp = 0, fp = 0, prev_tp = 0, prev_fp = 0;
  std::int64_t twice_area = 0;  // Σ Δfp·(tp1+tp2), in units of 1/(2PN)
  for (std::size_t i = 0; i < scored.size();) {
    const double t = scored[i].score;
    for (; i < scored.size() && scored[i].score == t; ++i) (scored[i].is_positive ? tp : fp) += 1;
    twice_area += (fp - prev_fp) * (tp + prev_tp);
    prev_tp = tp;
    prev_fp = fp;
    c.points.push_back({t, static_cast<double>(fp) / N, static_cast<double>(tp) / P});
  }
  // The sweep always ends at (1,1), so only (0,0) needs adding, and it adds no area.
  c.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(P) * static_cast<double>(N));
  std::int64_t op_tp = 0, op_fp = 0;
  for (const auto& s : scored) {
    if (s.score >= operating_threshold) (s.is_positive ? op_tp : op_fp) += 1;
  }
  c.operating_point = {operating_threshold, static_cast<double>(op_fp) / N, static_cast<double>(op_tp) / P};
  return c;
}

inline nlohmann::json to_json(const RocCurve& c) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points) pts.push_back({{"threshold", p.threshold}, {"fpr", p.fpr}, {"tpr", p.tpr}});
  return {{"points", std::move(pts)},
          {"auc", c.auc},
          {"operating_point",
           {{"threshold", c.operating_point.threshold}, {"fpr", c.operating_point.fpr}, {"tpr", c.operating_point.tpr}}}};
}

/// "threshold,fpr,tpr" header then one row per point, LF line ends.
inline std::string roc_csv(const RocCurve& c) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : c.points) {
    out += decimal::shortest(p.threshold) + "," + decimal::shortest(p.fpr) + "," + decimal::shortest(p.tpr) + "\n";
  }
  return out;
}

// --------------------------------------------------------------- report

struct EvalReport {
  std::vector<MatchOutcome> outcomes;
  ConfusionCounts counts;
  MetricsReport metrics;
  std::optional<RocCurve> roc;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& o : r.outcomes) docs.push_back(to_json(o));
  nlohmann::json j = {{"confusion", to_json(r.counts)}, {"metrics", to_json(r.metrics)}, {"documents", std::move(docs)}};
  j["roc"] = r.roc ? to_json(*r.roc) : nlohmann::json();
  return j;
}

/// Document-level ROC input: a doc is positive when its GT lists a model.
inline std::vector<ScoredItem> doc_scores(const std::vector<GroundTruthDoc>& gts,
                                          const std::map<std::string, double>& score_by_doc) {
  std::vector<ScoredItem> out;
  for (const auto& g : gts) {
    auto it = score_by_doc.find(g.doc_id);
    if (it == score_by_doc.end()) continue;
    out.push_back({it->second, !g.gt_models.empty()});
  }
  return out;
}

inline EvalReport evaluate(const std::vector<schema::Record>& records, const std::vector<GroundTruthDoc>& gts,
                           const std::map<std::string, double>& score_by_doc = {}, double operating_threshold = 1.0) {
  EvalReport r;
  r.outcomes = match_corpus(records, gts);
  r.counts = confusion(r.outcomes, gts);
  r.metrics = metrics(r.counts);
  if (!score_by_doc.empty()) {
    try {
      r.roc = roc(doc_scores(gts, score_by_doc), operating_threshold);
    } catch (const Error& e) {
      if (e.code() != errc::degenerate_classes) throw;
    }
  }
  return r;
}

}  // namespace cmdb::eval
