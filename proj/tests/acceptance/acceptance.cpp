// Acceptance suite. One line per criterion:
//
//   PASS  <name>  <detail>
//   FAIL  <name>  <detail>
//
// Exit status is 0 when every failing line is on the known list below, 1
// otherwise. --strict makes any failure fatal.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmdb/agent/analyst.hpp"
#include "cmdb/agent/mock.hpp"
#include "cmdb/eval/evaluation.hpp"
#include "cmdb/pipeline/pipeline.hpp"
#include "cmdb/schema/record.hpp"
#include "cmdb/schema/scaled.hpp"
#include "cmdb/store/store.hpp"
#include "support/fixture_files.hpp"
#include "support/oracles.hpp"
#include "support/record_gen.hpp"
#include "support/store_oracle.hpp"

using namespace cmdb;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool ok = true;
  std::ostringstream detail;
  std::vector<std::string> misses;

  void need(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      misses.push_back(what);
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 1) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(prec);
  o << v;
  return o.str();
}

// ------------------------------------------------------------------ checks

void metrics_reproduction(Outcome& o) {
  const auto t0 = Clock::now();
  const auto m = eval::metrics({185, 45, 37, 1311});
  const double secs = seconds_since(t0);
  const double p = m.precision * 100, r = m.recall * 100, f = m.f1 * 100, fpr = m.fpr * 100;
  o.need(std::abs(p - 80.4) <= 0.05, "precision");
  o.need(std::abs(r - 83.3) <= 0.05, "recall");
  o.need(std::abs(f - 81.9) <= 0.05, "f1");
  o.need(std::abs(fpr - 3.3) <= 0.05, "fpr");
  o.need(secs < 1.0, "runtime");
  o.detail << "P=" << fmt(p, 2) << " R=" << fmt(r, 2) << " F1=" << fmt(f, 2) << " FPR=" << fmt(fpr, 2);
}

void scaled_value_case(Outcome& o) {
  const auto t0 = Clock::now();
  const auto r = scaled::resolve_scaled_value(2.33, "×10^3", "viscosity of aqueous suspension",
                                              scaled::Band{1e-5, 1e-1, "Pa·s"}, "Pa·s");
  const double secs = seconds_since(t0);
  o.need(r.value_si == 2.33e-3, "value");
  o.need(r.flag == scaled::ResolutionFlag::scale_resolved, "flag");
  o.need(r.unit_si == "Pa·s", "unit");
  o.need(secs < 1.0, "runtime");
  std::ostringstream v;
  v.precision(17);
  v << r.value_si;
  o.detail << "value_si=" << v.str() << " " << r.unit_si << " flag=" << scaled::to_string(r.flag);
}

/// Grounded iff the map keys are exactly the equation's symbols and no two
/// definitions coincide after case and whitespace folding. The symbol set is
/// known by construction, not recomputed by the library.
void grounding_property(Outcome& o) {
  const std::vector<std::string> atoms = {"\\sigma", "E", "\\epsilon", "\\eta_0", "\\tau_y", "k", "n", "\\dot{\\gamma}",
                                          "x", "\\phi"};
  const std::vector<std::string> ops = {" + ", " - ", " = ", " ", " / "};
  std::mt19937 rng(20261018);
  int cases = 0, grounded = 0, disagreements = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::string eq;
    std::set<std::string> truth;
    const int n = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      const auto& a = atoms[rng() % atoms.size()];
      truth.insert(a);
      if (i) eq += ops[rng() % ops.size()];
      eq += a;
    }
    if (rng() % 3 == 0) eq = "\\frac{d" + eq.substr(0, eq.find(' ')) + "}{dt} = " + eq;

    std::vector<schema::SymbolBinding> map;
    std::set<std::string> keys;
    for (const auto& a : atoms) {
      const bool in = truth.count(a) > 0;
      if (in ? rng() % 10 != 0 : rng() % 15 == 0) {
        map.push_back({a, "meaning of " + a, "Pa"});
        keys.insert(a);
      }
    }
    // Now and then two symbols share a meaning, spelled differently.
    if (map.size() >= 2 && rng() % 6 == 0) map[1].definition = "  MEANING of   " + map[0].symbol;

    std::set<std::string> defs;
    bool injective = true;
    for (const auto& b : map) {
      std::string d;
      for (char c : b.definition) {
        if (c == ' ' && (d.empty() || d.back() == ' ')) continue;
        d += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
      while (!d.empty() && d.back() == ' ') d.pop_back();
      injective = defs.insert(d).second && injective;
    }
    const bool expect = keys == truth && injective;
    const bool got = schema::check_grounding(eq, map).grounded;
    ++cases;
    grounded += got;
    if (got != expect) {
      ++disagreements;
      if (o.misses.size() < 3) o.misses.push_back(eq);
    }
  }
  o.need(cases >= 100, "cases");
  o.need(disagreements == 0, "agreement");
  o.need(grounded > 0 && grounded < cases, "both verdicts exercised");
  o.detail << cases << " pairs, " << grounded << " grounded, " << disagreements << " disagreements";
}

const testing::FixtureDoc& fixture_doc(const std::string& id) {
  static const auto corpus = testing::fixture_corpus();
  for (const auto& d : corpus) {
    if (d.doc_id == id) return d;
  }
  throw std::runtime_error("no fixture " + id);
}

ingest::SerializedDoc doc_from_text(const std::string& id, const std::string& text) {
  ingest::SerializedDoc d;
  d.doc_id = id;
  d.full_text = text;
  d.char_count = utf8::length(text);
  d.equation_candidates = ingest::segment_equation_candidates(d);
  return d;
}

std::string records_reply(const std::vector<nlohmann::json>& recs) { return nlohmann::json{{"records", recs}}.dump(); }

agent::ClientOptions fast_client() {
  agent::ClientOptions c;
  c.backoff = std::chrono::milliseconds(0);
  return c;
}

void self_correction(Outcome& o) {
  const auto& fx = fixture_doc("doc14");
  auto broken = fx.analyst_records;
  broken[0].erase("validation");
  auto mock = std::make_shared<agent::MockTransport>();
  mock->add_text("analyst", "doc14", 1, records_reply(broken));
  mock->add_text("analyst", "doc14", 2, records_reply(fx.analyst_records));
  agent::ProviderClient client(mock, fast_client());
  const auto fixed = agent::analyst_extract(client, doc_from_text("doc14", fx.text));
  o.need(fixed.status == agent::ExtractionStatus::ok, "recovers");
  o.need(fixed.attempts == 2, "two attempts");
  o.need(fixed.correction_trace.size() == 1, "one trace entry");

  auto rec = fx.analyst_records[0];
  rec["symbol_map"].erase(2);
  auto bad = std::make_shared<agent::MockTransport>();
  bad->add_text("analyst", "x", 0, records_reply(std::vector<nlohmann::json>{rec}));
  agent::ProviderClient bad_client(bad, fast_client());
  agent::AnalystOptions opt;
  opt.budget = 3;
  const auto exhausted = agent::analyst_extract(bad_client, doc_from_text("x", "t"), opt);
  o.need(exhausted.status == agent::ExtractionStatus::failed_schema, "gives up");
  o.need(exhausted.attempts == 3, "three attempts");
  o.need(bad_client.call_log().size() == 3, "three calls");
  o.detail << "recovering: attempts=" << fixed.attempts << " trace=" << fixed.correction_trace.size()
           << "; always invalid, budget 3: attempts=" << exhausted.attempts
           << " calls=" << bad_client.call_log().size();
}

void end_to_end_fixture(Outcome& o) {
  const auto root = fs::temp_directory_path() / "cmdb_acceptance_fixture";
  fs::remove_all(root);
  const auto paths = testing::write_fixture_files(root);
  const auto table = scaled::PlausibilityTable::load(scaled::PlausibilityTable::default_path());

  const auto t0 = Clock::now();
  store::Store st;
  auto transport = agent::MockTransport::from_json(testing::fixture_mock_script());
  agent::ProviderClient client(transport, fast_client());
  pipeline::Pipeline pipe(st, client, {}, &table);
  const auto rep = pipe.run(paths.corpus_dir);

  std::vector<schema::Record> recs;
  bool all_valid = true, all_grounded = true;
  for (const auto& s : st.query_all({})) {
    recs.push_back(s.record);
    all_valid = all_valid && schema::validate_record(schema::to_json(s.record)).valid;
    all_grounded = all_grounded && schema::check_grounding(s.record.equation_latex, s.record.symbol_map).grounded;
  }
  const auto gts = eval::read_gt_jsonl(paths.ground_truth);
  const auto counts = eval::confusion(eval::match_corpus(recs, gts), gts);

  std::set<std::string> passed, analyst_docs;
  for (const auto& d : rep.docs) {
    if (d.state == pipeline::JobState::needs_review) passed.insert(d.doc_id);
  }
  for (const auto& c : client.call_log()) {
    if (c.tier == agent::ModelTier::analyst_tier) analyst_docs.insert(c.doc_id);
  }
  const double secs = seconds_since(t0);
  fs::remove_all(root);

  const std::set<std::string> expected_pass{"doc03", "doc05", "doc08", "doc11", "doc14", "doc17"};
  o.need(recs.size() == 9, "nine records");
  o.need(all_valid, "schema-valid");
  o.need(all_grounded, "grounded");
  o.need(counts == eval::ConfusionCounts{8, 1, 1, 30}, "confusion matrix");
  o.need(passed == expected_pass, "gate");
  o.need(analyst_docs == expected_pass, "analyst calls");
  o.need(secs < 30.0, "runtime");
  o.detail << rep.docs_in << " docs, " << recs.size() << " records, tp=" << counts.tp << " fp=" << counts.fp
           << " fn=" << counts.fn << " tn=" << counts.tn << ", analyst calls on " << analyst_docs.size() << " docs, "
           << fmt(secs, 2) << " s";
}

std::vector<eval::ScoredItem> scored(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<eval::ScoredItem> v;
  for (double p : pos) v.push_back({p, true});
  for (double n : neg) v.push_back({n, false});
  return v;
}

void auc_oracle(Outcome& o) {
  std::mt19937 rng(77);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 199);
    std::vector<double> pos, neg;
    const bool coarse = trial % 2 == 0;
    for (int i = 0; i < n; ++i) {
      const double s = coarse ? (rng() % 7) / 6.0 : std::uniform_real_distribution<double>(0, 1)(rng);
      (rng() % 2 ? pos : neg).push_back(s);
    }
    if (pos.empty()) pos.push_back(0.5);
    if (neg.empty()) neg.push_back(0.5);
    worst = std::max(worst, std::abs(eval::roc(scored(pos, neg), 0.5).auc - testing::pairwise_auc(pos, neg)));
  }
  const double four = eval::roc(scored({0.9, 0.4}, {0.6, 0.2}), 0.5).auc;
  o.need(worst <= 1e-12, "random sets");
  o.need(four == 0.75, "four-point fixture");
  o.detail << "1000 sets, max |trapezoid - pairwise| = " << worst << "; four-point AUC = " << four;
}

void mechanism_histogram(Outcome& o) {
  store::Store st;
  std::mt19937 rng(5);
  const std::pair<schema::Mechanism, int> plan[] = {{schema::Mechanism::elasto_plasticity, 59},
                                                    {schema::Mechanism::failure_damage, 46},
                                                    {schema::Mechanism::rheology_time_dependent, 23},
                                                    {schema::Mechanism::other, 57}};
  int serial = 0;
  for (auto [m, n] : plan) {
    for (int i = 0; i < n; ++i) {
      auto r = testing::random_record(rng, serial++);
      r.mechanism = m;
      st.upsert_record(r);
    }
  }
  const auto h = st.mechanism_distribution();
  auto pct = [&](schema::Mechanism m) {
    for (const auto& b : h.buckets) {
      if (b.mechanism == m) return b.percentage;
    }
    return -1.0;
  };
  const double ep = pct(schema::Mechanism::elasto_plasticity);
  const double fd = pct(schema::Mechanism::failure_damage);
  const double rh = pct(schema::Mechanism::rheology_time_dependent);
  o.need(h.total == 185, "total");
  o.need(ep == 31.9, "elasto_plasticity");
  o.need(fd == 24.8, "failure_damage");
  o.need(rh == 12.4, "rheology_time_dependent");
  o.detail << "total=" << h.total << " elasto_plasticity=" << fmt(ep) << " failure_damage=" << fmt(fd)
           << " rheology_time_dependent=" << fmt(rh) << " (wanted 31.9/24.8/12.4; 46/185 = "
           << fmt(100.0 * 46 / 185, 3) << "% rounds to 24.9)";
}

void store_round_trip(Outcome& o) {
  std::mt19937 rng(4242);
  std::vector<schema::Record> seed;
  seed.reserve(10000);
  for (int i = 0; i < 10000; ++i) seed.push_back(testing::random_record(rng, i, 400));
  for (int i = 0; i < 10000; i += 7) seed[i].review_status = i % 2 ? schema::ReviewStatus::rejected
                                                                   : schema::ReviewStatus::verified;
  for (auto& r : seed) {
    for (const auto& p : r.parameters) {
      if (p.resolution_flag == schema::ResolutionFlag::ambiguous) r.review_status = schema::ReviewStatus::unverified;
    }
  }
  store::Store a;
  for (const auto& r : seed) a.upsert_record(r);

  int scan_mismatch = 0, scan_filters = 0;
  std::vector<store::QueryFilter> matrix;
  for (int trial = 0; trial < 150; ++trial) {
    auto f = testing::random_filter(rng);
    matrix.push_back(f);
    const auto want = testing::oracle_ids(seed, f);
    f.page_size = 1 + static_cast<int>(rng() % 500);
    const auto page = a.query_models(f);
    const std::size_t n = std::min<std::size_t>(want.size(), static_cast<std::size_t>(f.page_size));
    const bool same = page.total == static_cast<std::int64_t>(want.size()) &&
                      testing::ids_of(page.items) == std::vector<std::string>(want.begin(), want.begin() + static_cast<long>(n)) &&
                      testing::ids_of(a.query_all(f)) == want;
    scan_mismatch += !same;
    ++scan_filters;
  }

  const auto dir = fs::temp_directory_path() / "cmdb_acceptance_store";
  fs::create_directories(dir);
  const auto file = dir / (std::string("dump") + store::kExportExtension);
  const auto exported = a.export_jsonl(file);
  store::Store b;
  const auto imported = b.import_jsonl(file);
  fs::remove_all(dir);
  int rt_mismatch = 0;
  matrix.push_back({});
  for (auto f : matrix) {
    std::vector<nlohmann::json> ja, jb;
    for (const auto& x : a.query_all(f)) ja.push_back(schema::to_json(x.record));
    for (const auto& x : b.query_all(f)) jb.push_back(schema::to_json(x.record));
    rt_mismatch += ja != jb;
  }
  const bool hist_same = to_json(a.mechanism_distribution()) == to_json(b.mechanism_distribution());

  o.need(a.count() == 10000, "seeded");
  o.need(scan_mismatch == 0, "scan equivalence");
  o.need(exported == 10000 && imported == 10000, "export/import counts");
  o.need(rt_mismatch == 0 && hist_same, "round trip");
  o.detail << "10000 records, " << scan_filters << " filters vs scan (" << scan_mismatch << " mismatches), "
           << matrix.size() << " queries after export/import (" << rt_mismatch << " mismatches)";
}

struct Criterion {
  const char* name;
  std::function<void(Outcome&)> run;
  const char* known_gap = nullptr;  // why it cannot pass, when it cannot
};

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
  const std::vector<Criterion> criteria = {
      {"metrics_reproduction", metrics_reproduction},
      {"scaled_value_case_study", scaled_value_case},
      {"grounding_property", grounding_property},
      {"self_correction_loop", self_correction},
      {"end_to_end_fixture", end_to_end_fixture},
      {"auc_oracle", auc_oracle},
      {"mechanism_histogram", mechanism_histogram,
       "46 of 185 is 24.86%, which one-decimal rounding (and largest remainder) turns into 24.9, not 24.8"},
      {"store_round_trip", store_round_trip},
  };

  int unexpected = 0, known = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.ok = false;
      o.misses.push_back(std::string("exception: ") + e.what());
    }
    std::cout << (o.ok ? "PASS  " : "FAIL  ") << c.name << "  " << o.detail.str();
    if (!o.ok) {
      std::cout << "  [missed:";
      for (const auto& m : o.misses) std::cout << ' ' << m;
      std::cout << ']';
    }
    std::cout << '\n';
    if (!o.ok && c.known_gap) {
      std::cout << "      known gap: " << c.known_gap << '\n';
      ++known;
    } else if (!o.ok) {
      ++unexpected;
    }
  }
  std::cout << criteria.size() - static_cast<std::size_t>(unexpected + known) << " passed, " << known
            << " known gap, " << unexpected << " unexpected failures\n";
  return unexpected > 0 || (strict && known > 0) ? 1 : 0;
}
