#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <thread>

#include "cmdb/store/store.hpp"
#include "support/record_gen.hpp"
#include "support/store_oracle.hpp"

using namespace cmdb;
using namespace cmdb::store;
using schema::make_parameter;
using schema::make_validation;
using cmdb::testing::ids_of;
using cmdb::testing::oracle_ids;
using cmdb::testing::random_filter;

namespace {

Record hooke(const std::string& doc = "d1", const std::string& material = "Ancient Sandstone") {
  Record r;
  r.doc_id = doc;
  r.equation_latex = "\\sigma = E \\epsilon";
  r.symbol_map = {{"\\sigma", "stress", "Pa"}, {"E", "Young's modulus", "Pa"}, {"\\epsilon", "strain", "dimensionless"}};
  r.material = {material, MaterialClass::stone, "", ""};
  r.parameters = {make_parameter("E", 30, "GPa")};
  r.validation = make_validation("uniaxial compression");
  r.mechanism = Mechanism::elasticity;
  r.record_id = schema::make_record_id(r.doc_id, r.equation_latex, r.material.material_name);
  return r;
}

}  // namespace

// ------------------------------------------------------------------ upsert

TEST(Upsert, NewRecordGetsItsId) {
  Store s;
  const Record r = hooke();
  EXPECT_EQ(s.upsert_record(r), r.record_id);
  EXPECT_EQ(s.count(), 1);
  auto got = s.get_record(r.record_id);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->record, r);
  EXPECT_EQ(got->version, 1);
}

TEST(Upsert, IdempotentOnNaturalKey) {
  Store s;
  Record r = hooke();
  const auto id = s.upsert_record(r);
  EXPECT_EQ(s.upsert_record(r), id);
  EXPECT_EQ(s.count(), 1);
  EXPECT_EQ(s.get_record(id)->version, 1);

  // Same natural key written differently: spacing and material case.
  Record r2 = r;
  r2.equation_latex = "\\sigma=E\\epsilon";
  r2.material.material_name = "ancient sandstone";
  r2.record_id.clear();
  EXPECT_EQ(s.upsert_record(r2), id);
  EXPECT_EQ(s.count(), 1);
  EXPECT_EQ(s.get_record(id)->version, 2);
}

TEST(Upsert, InvalidRecordLeavesStoreUntouched) {
  Store s;
  s.upsert_record(hooke("d0"));
  Record bad = hooke();
  bad.validation.present = false;  // method is non-empty
  try {
    s.upsert_record(bad);
    FAIL() << "expected InvalidRecord";
  } catch (const RecordError& e) {
    EXPECT_EQ(e.code(), errc::invalid_record);
    ASSERT_FALSE(e.errors().empty());
    EXPECT_EQ(e.errors()[0].json_path, "$.validation.present");
  }
  EXPECT_EQ(s.count(), 1);
}

TEST(Upsert, ReextractionDoesNotUndoReview) {
  Store s;
  Record r = hooke();
  s.upsert_record(r);
  s.set_review_status(r.record_id, {ReviewActionKind::verify, {}, "ok", "alice", std::nullopt});
  s.upsert_record(r);
  EXPECT_EQ(s.get_record(r.record_id)->record.review_status, ReviewStatus::verified);
}

// ------------------------------------------------------------------ query

TEST(Query, EmptyFilterReturnsAllPaginated) {
  Store s;
  std::mt19937 rng(3);
  for (int i = 0; i < 120; ++i) s.upsert_record(cmdb::testing::random_record(rng, i));
  QueryFilter f;
  f.page_size = 50;
  const auto p1 = s.query_models(f);
  EXPECT_EQ(p1.total, 120);
  EXPECT_EQ(p1.items.size(), 50u);
  f.page = 3;
  EXPECT_EQ(s.query_models(f).items.size(), 20u);
  f.page = 4;
  EXPECT_TRUE(s.query_models(f).items.empty());
  EXPECT_EQ(s.query_all({}).size(), 120u);
}

TEST(Query, StoneFilterMatchesSeedScan) {
  Store s;
  std::mt19937 rng(5);
  std::vector<Record> seed;
  for (int i = 0; i < 300; ++i) {
    seed.push_back(cmdb::testing::random_record(rng, i));
    s.upsert_record(seed.back());
  }
  QueryFilter f;
  f.material_class = MaterialClass::stone;
  const auto got = ids_of(s.query_all(f));
  EXPECT_EQ(got, oracle_ids(seed, f));
  EXPECT_FALSE(got.empty());
}

TEST(Query, YoungsModulusBandMatchesLinearScan) {
  Store s;
  std::mt19937 rng(6);
  std::vector<Record> seed;
  for (int i = 0; i < 400; ++i) {
    seed.push_back(cmdb::testing::random_record(rng, i));
    s.upsert_record(seed.back());
  }
  QueryFilter f;
  f.parameter_symbol = "E";
  f.param_min_si = 1e9;
  f.param_max_si = 1e11;
  const auto got = s.query_all(f);
  EXPECT_EQ(ids_of(got), oracle_ids(seed, f));
  ASSERT_FALSE(got.empty());
  for (const auto& g : got) {
    bool in_band = false;
    for (const auto& p : g.record.parameters) in_band |= p.symbol == "E" && p.value_si >= 1e9 && p.value_si <= 1e11;
    EXPECT_TRUE(in_band);
  }
}

TEST(Query, BadFilters) {
  Store s;
  auto expect_bad = [&](QueryFilter f) {
    try {
      s.query_models(f);
      ADD_FAILURE() << "expected BadFilter";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), errc::bad_filter);
    }
  };
  QueryFilter f;
  f.param_min_si = 1.0;
  expect_bad(f);
  f = {};
  f.param_max_si = 1.0;
  expect_bad(f);
  f = {};
  f.page_size = 0;
  expect_bad(f);
  f.page_size = 501;
  expect_bad(f);
  f = {};
  f.page = 0;
  expect_bad(f);
  f = {};
  f.parameter_symbol = "E";
  f.param_min_si = 5;
  f.param_max_si = 1;
  expect_bad(f);
  f = {};
  f.parameter_symbol = "a + b";
  expect_bad(f);
  f = {};
  f.page_size = 500;
  EXPECT_NO_THROW(s.query_models(f));
}

TEST(Query, ScanEquivalenceOnTenThousandRecords) {
  Store s;
  std::mt19937 rng(42);
  std::vector<Record> seed;
  seed.reserve(10000);
  for (int i = 0; i < 10000; ++i) seed.push_back(cmdb::testing::random_record(rng, i, 400));
  // Some review traffic so status filters have something to find.
  for (int i = 0; i < 10000; i += 7) {
    seed[i].review_status = i % 2 ? ReviewStatus::rejected : ReviewStatus::verified;
  }
  for (auto& r : seed) {
    bool ambiguous = false;
    for (const auto& p : r.parameters) ambiguous |= p.resolution_flag == schema::ResolutionFlag::ambiguous;
    if (ambiguous) r.review_status = ReviewStatus::unverified;
    s.upsert_record(r);
  }
  ASSERT_EQ(s.count(), 10000);
  int nonempty = 0;
  for (int trial = 0; trial < 120; ++trial) {
    QueryFilter f = random_filter(rng);
    const auto want = oracle_ids(seed, f);
    f.page_size = 1 + static_cast<int>(rng() % 500);
    const auto page = s.query_models(f);
    ASSERT_EQ(page.total, static_cast<std::int64_t>(want.size())) << "trial " << trial;
    const std::size_t n = std::min<std::size_t>(want.size(), static_cast<std::size_t>(f.page_size));
    ASSERT_EQ(ids_of(page.items), std::vector<std::string>(want.begin(), want.begin() + static_cast<long>(n)));
    if (want.size() <= 2000) {
      ASSERT_EQ(ids_of(s.query_all(f)), want) << "trial " << trial;
    }
    nonempty += !want.empty();
  }
  EXPECT_GT(nonempty, 30);
}

// -------------------------------------------------------------- histogram

TEST(Histogram, LargestRemainderAlwaysSumsToHundred) {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::int64_t> c(1 + rng() % 8);
    std::int64_t total = 0;
    for (auto& x : c) total += x = rng() % 200;
    const auto t = largest_remainder_tenths(c);
    if (total == 0) continue;
    std::int64_t sum = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      sum += t[i];
      // Each share is within one tenth of its exact value.
      EXPECT_LE(std::abs(static_cast<double>(t[i]) - 1000.0 * c[i] / total), 1.0);
    }
    EXPECT_EQ(sum, 1000);
  }
}

TEST(Histogram, SeededCountsGiveExpectedShares) {
  Store s;
  std::mt19937 rng(1);
  const std::pair<Mechanism, int> plan[] = {{Mechanism::elasto_plasticity, 59},
                                            {Mechanism::failure_damage, 46},
                                            {Mechanism::rheology_time_dependent, 23},
                                            {Mechanism::other, 57}};
  int serial = 0;
  for (auto [m, n] : plan) {
    for (int i = 0; i < n; ++i) {
      Record r = cmdb::testing::random_record(rng, serial++);
      r.mechanism = m;
      s.upsert_record(r);
    }
  }
  // Rejected records do not count.
  Record rej = cmdb::testing::random_record(rng, serial++);
  rej.mechanism = Mechanism::elasticity;
  s.upsert_record(rej);
  s.set_review_status(rej.record_id, {ReviewActionKind::reject, {}, "", "", std::nullopt});

  const auto h = s.mechanism_distribution();
  EXPECT_EQ(h.total, 185);
  ASSERT_EQ(h.buckets.size(), 4u);
  std::int64_t count_sum = 0;
  double pct_sum = 0;
  for (const auto& b : h.buckets) {
    count_sum += b.count;
    pct_sum += b.percentage;
  }
  EXPECT_EQ(count_sum, h.total);
  EXPECT_NEAR(pct_sum, 100.0, 0.1);
  EXPECT_DOUBLE_EQ(h.buckets[0].percentage, 31.9);
  EXPECT_DOUBLE_EQ(h.buckets[2].percentage, 12.4);
  EXPECT_DOUBLE_EQ(h.buckets[3].percentage, 30.8);
  // 46/185 = 24.86%, so one-decimal rounding gives 24.9.
  EXPECT_DOUBLE_EQ(h.buckets[1].percentage, 24.9);
}

TEST(Histogram, EmptyAndSingle) {
  Store s;
  auto h = s.mechanism_distribution();
  EXPECT_EQ(h.total, 0);
  EXPECT_TRUE(h.buckets.empty());
  s.upsert_record(hooke());
  h = s.mechanism_distribution();
  ASSERT_EQ(h.buckets.size(), 1u);
  EXPECT_EQ(h.buckets[0].mechanism, Mechanism::elasticity);
  EXPECT_DOUBLE_EQ(h.buckets[0].percentage, 100.0);
}

// ----------------------------------------------------------------- review

TEST(Review, VerifyUnverified) {
  Store s;
  const Record r = hooke();
  s.upsert_record(r);
  const auto out = s.set_review_status(r.record_id, {ReviewActionKind::verify, {}, "checked table 2", "alice", 1});
  EXPECT_EQ(out.record.review_status, ReviewStatus::verified);
  EXPECT_EQ(out.version, 2);
  const auto trail = s.audit_trail(r.record_id);
  ASSERT_EQ(trail.size(), 2u);
  EXPECT_EQ(trail[1].action, "verify");
  EXPECT_EQ(trail[1].note, "checked table 2");
  EXPECT_EQ(trail[1].reviewer, "alice");
  EXPECT_FALSE(trail[1].at.empty());
}

TEST(Review, EditFixesScaleResolutionAndKeepsOldVersion) {
  Store s;
  Record r = hooke();
  r.parameters = {make_parameter("E", 2.5, "GPa", "×10^3")};  // no band: stays literal and ambiguous
  ASSERT_EQ(r.parameters[0].resolution_flag, schema::ResolutionFlag::ambiguous);
  s.upsert_record(r);

  // Verifying an ambiguous value is refused.
  try {
    s.set_review_status(r.record_id, {ReviewActionKind::verify, {}, "", "", std::nullopt});
    FAIL() << "expected InvalidEdit";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::invalid_edit);
  }

  nlohmann::json patch = {{"parameters", nlohmann::json::array({schema::to_json(r.parameters[0])})}};
  patch["parameters"][0]["value_si"] = 2.5e6;
  patch["parameters"][0]["resolution_flag"] = "scale_resolved";
  const auto out = s.set_review_status(r.record_id, {ReviewActionKind::edit, patch, "reads as 10^-3", "bob", 1});
  EXPECT_EQ(out.record.review_status, ReviewStatus::edited);
  EXPECT_DOUBLE_EQ(out.record.parameters[0].value_si, 2.5e6);
  EXPECT_EQ(out.version, 2);

  const auto trail = s.audit_trail(r.record_id);
  ASSERT_EQ(trail.size(), 2u);
  EXPECT_DOUBLE_EQ(trail[0].body["parameters"][0]["value_si"].get<double>(), 2.5e12);
  EXPECT_EQ(trail[0].body["parameters"][0]["resolution_flag"], "ambiguous");
  EXPECT_EQ(trail[1].body, schema::to_json(out.record));
}

TEST(Review, RejectVerifiedShowsBothTransitions) {
  Store s;
  const Record r = hooke();
  s.upsert_record(r);
  s.set_review_status(r.record_id, {ReviewActionKind::verify, {}, "", "", std::nullopt});
  const auto out = s.set_review_status(r.record_id, {ReviewActionKind::reject, {}, "wrong material", "", std::nullopt});
  EXPECT_EQ(out.record.review_status, ReviewStatus::rejected);
  const auto trail = s.audit_trail(r.record_id);
  ASSERT_EQ(trail.size(), 3u);
  EXPECT_EQ(trail[1].action, "verify");
  EXPECT_EQ(trail[2].action, "reject");
}

TEST(Review, Errors) {
  Store s;
  const Record r = hooke();
  s.upsert_record(r);
  try {
    s.set_review_status("cm-nope", {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::not_found);
  }
  try {
    s.set_review_status(r.record_id, {ReviewActionKind::edit, {{"confidence", 3.0}}, "", "", std::nullopt});
    FAIL();
  } catch (const RecordError& e) {
    EXPECT_EQ(e.code(), errc::invalid_edit);
    EXPECT_EQ(e.errors()[0].json_path, "$.confidence");
  }
  try {
    s.set_review_status(r.record_id, {ReviewActionKind::verify, {}, "", "", 7});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::version_conflict);
  }
  EXPECT_EQ(s.get_record(r.record_id)->version, 1);
}

TEST(Review, CompareAndSetLetsExactlyOneStaleWriterWin) {
  Store s;
  const Record r = hooke();
  s.upsert_record(r);
  std::atomic<int> ok{0}, conflict{0};
  std::vector<std::thread> ts;
  for (int i = 0; i < 8; ++i) {
    ts.emplace_back([&, i] {
      try {
        s.set_review_status(r.record_id, {ReviewActionKind::edit, {{"confidence", 0.1 * i}}, "", "", 1});
        ++ok;
      } catch (const Error& e) {
        if (e.code() == errc::version_conflict) ++conflict;
      }
    });
  }
  for (auto& t : ts) t.join();
  EXPECT_EQ(ok.load(), 1);
  EXPECT_EQ(conflict.load(), 7);
}

TEST(Review, AuditMonotoneAndReconstructsCurrent) {
  Store s;
  std::mt19937 rng(77);
  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) ids.push_back(s.upsert_record(cmdb::testing::random_record(rng, i)));
  std::map<std::string, std::size_t> len;
  for (int step = 0; step < 400; ++step) {
    const auto& id = ids[rng() % ids.size()];
    ReviewAction a;
    a.kind = static_cast<ReviewActionKind>(rng() % 3);
    if (a.kind == ReviewActionKind::edit) {
      a.payload = rng() % 5 ? nlohmann::json{{"confidence", (rng() % 100) / 100.0}}
                            : nlohmann::json{{"confidence", 2.0}};  // invalid
    }
    try {
      s.set_review_status(id, a);
    } catch (const Error&) {
    }
    const auto trail = s.audit_trail(id);
    ASSERT_GE(trail.size(), len[id]);
    len[id] = trail.size();
    const auto cur = s.get_record(id);
    ASSERT_EQ(trail.back().body, schema::to_json(cur->record));
    ASSERT_EQ(trail.back().version, cur->version);
  }
}

// ---------------------------------------------------------- export/import

TEST(ExportImport, RoundTripPreservesQueries) {
  const auto dir = std::filesystem::temp_directory_path() / "cmdb_store_rt";
  std::filesystem::create_directories(dir);
  const auto file = dir / (std::string("dump") + kExportExtension);
  Store a;
  std::mt19937 rng(11);
  for (int i = 0; i < 500; ++i) a.upsert_record(cmdb::testing::random_record(rng, i));
  const auto first = a.query_all({});
  for (int i = 0; i < 40; ++i) {
    a.set_review_status(first[static_cast<std::size_t>(i) * 3].record.record_id,
                        {i % 2 ? ReviewActionKind::reject : ReviewActionKind::edit,
                         i % 2 ? nlohmann::json() : nlohmann::json{{"confidence", 0.5}}, "", "", std::nullopt});
  }
  EXPECT_EQ(a.export_jsonl(file), 500u);

  Store b;
  EXPECT_EQ(b.import_jsonl(file), 500u);
  for (int trial = 0; trial < 60; ++trial) {
    QueryFilter f = random_filter(rng);
    f.page_size = 500;
    std::vector<nlohmann::json> ja, jb;
    for (const auto& x : a.query_all(f)) ja.push_back(schema::to_json(x.record));
    for (const auto& x : b.query_all(f)) jb.push_back(schema::to_json(x.record));
    ASSERT_EQ(ja, jb);
  }
  EXPECT_EQ(to_json(a.mechanism_distribution()), to_json(b.mechanism_distribution()));
  std::filesystem::remove_all(dir);
}

TEST(ExportImport, BadLineRejectsWholeFile) {
  const auto file = std::filesystem::temp_directory_path() / "cmdb_bad.cmdb.jsonl";
  {
    std::ofstream out(file);
    out << schema::to_json(hooke("d1")).dump() << "\n{not json\n";
  }
  Store s;
  EXPECT_THROW(s.import_jsonl(file), RecordError);
  EXPECT_EQ(s.count(), 0);
  std::filesystem::remove(file);
}

// ------------------------------------------------------------ availability

TEST(Store, ClosedStoreIsUnavailable) {
  Store s;
  s.upsert_record(hooke());
  EXPECT_TRUE(s.healthy());
  s.close();
  EXPECT_FALSE(s.healthy());
  try {
    s.query_models({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::store_unavailable);
  }
}

TEST(Store, PersistsAcrossReopen) {
  const auto file = std::filesystem::temp_directory_path() / "cmdb_reopen.sqlite";
  std::filesystem::remove(file);
  {
    Store s(file.string());
    s.upsert_record(hooke());
    s.put_job({"d1", "abc", "needs_review", {{"k", 1}}, ""});
  }
  {
    Store s(file.string());
    EXPECT_EQ(s.count(), 1);
    ASSERT_TRUE(s.get_job("d1"));
    EXPECT_EQ(s.get_job("d1")->state, "needs_review");
    EXPECT_EQ(s.find_job_by_sha("abc")->doc_id, "d1");
  }
  std::filesystem::remove(file);
  std::filesystem::remove(file.string() + "-wal");
  std::filesystem::remove(file.string() + "-shm");
}
