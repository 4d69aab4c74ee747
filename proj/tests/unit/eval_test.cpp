#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cmdb/eval/evaluation.hpp"
#include "support/oracles.hpp"

using namespace cmdb;
using namespace cmdb::eval;
using schema::Record;

namespace {

Record extraction(const std::string& eq, const std::string& material,
                  std::vector<schema::SymbolBinding> sm = {{"\\sigma", "stress", "Pa"},
                                                           {"E", "Young's modulus", "Pa"},
                                                           {"\\epsilon", "strain", "dimensionless"}}) {
  Record r;
  r.doc_id = "d";
  r.equation_latex = eq;
  r.symbol_map = std::move(sm);
  r.material.material_name = material;
  return r;
}

GtModel gt_model(const std::string& eq, const std::string& material,
                 std::vector<schema::SymbolBinding> sm = {{"\\sigma", "Stress", "Pa"},
                                                          {"E", "young's modulus", "Pa"},
                                                          {"\\epsilon", "strain", "dimensionless"}}) {
  return {latex::normalize_equation(eq), std::move(sm), material, schema::Mechanism::elasticity};
}

std::vector<ScoredItem> items(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<ScoredItem> v;
  for (double p : pos) v.push_back({p, true});
  for (double n : neg) v.push_back({n, false});
  return v;
}

}  // namespace

// ------------------------------------------------------------- matching

TEST(Match, IdenticalExtractionIsTruePositive) {
  GroundTruthDoc gt{"d", {gt_model("\\sigma = E \\epsilon", "Sandstone")}, 4};
  const auto m = match_extractions({extraction("\\sigma=E\\epsilon", " sandstone")}, gt);
  ASSERT_EQ(m.tp.size(), 1u);
  EXPECT_TRUE(m.fp.empty());
  EXPECT_TRUE(m.fn.empty());
}

TEST(Match, IntermediateDerivationStepIsFalsePositive) {
  const std::vector<schema::SymbolBinding> sm{{"f_m", "masonry strength", "Pa"},
                                              {"K", "fitting constant", "dimensionless"},
                                              {"f_b", "brick strength", "Pa"},
                                              {"f_j", "mortar strength", "Pa"},
                                              {"\\alpha", "brick exponent", "dimensionless"},
                                              {"\\beta", "mortar exponent", "dimensionless"}};
  GroundTruthDoc gt{"d", {gt_model("f_m = K f_b^{\\alpha} f_j^{\\beta}", "Clay brick masonry", sm)}, 4};
  const auto m = match_extractions(
      {extraction("\\ln f_m = \\ln K + \\alpha \\ln f_b + \\beta \\ln f_j", "Clay brick masonry", sm)}, gt);
  EXPECT_TRUE(m.tp.empty());
  EXPECT_EQ(m.fp, std::vector<std::size_t>{0});
  EXPECT_EQ(m.fn, std::vector<std::size_t>{0});
}

TEST(Match, UnmatchedGroundTruthIsFalseNegative) {
  GroundTruthDoc gt{"d", {gt_model("\\sigma = E \\epsilon", "Sandstone")}, 3};
  const auto m = match_extractions({}, gt);
  EXPECT_EQ(m.fn.size(), 1u);
}

TEST(Match, PhysicalMeaningMustAgreeOnSharedSymbols) {
  GroundTruthDoc gt{"d", {gt_model("\\sigma = E \\epsilon", "Sandstone")}, 3};
  auto e = extraction("\\sigma = E \\epsilon", "Sandstone",
                      {{"\\sigma", "stress", "Pa"}, {"E", "elastic energy", "J"}, {"\\epsilon", "strain", "1"}});
  EXPECT_EQ(match_extractions({e}, gt).fp.size(), 1u);
  // Different material also fails.
  EXPECT_EQ(match_extractions({extraction("\\sigma = E \\epsilon", "Granite")}, gt).fp.size(), 1u);
}

TEST(Match, TokenizerFailureCountsAsFalsePositive) {
  GroundTruthDoc gt{"d", {gt_model("\\sigma = E \\epsilon", "Sandstone")}, 3};
  const auto m = match_extractions({extraction("\\frac{a", "Sandstone")}, gt);
  EXPECT_EQ(m.fp.size(), 1u);
  EXPECT_EQ(m.fn.size(), 1u);
}

TEST(Match, GreedyDocumentOrderPinsAmbiguousCases) {
  // Two identical GT entries and three identical extractions: the first two
  // extractions take GT 0 and 1 in order, the third is FP.
  GroundTruthDoc gt{"d", {gt_model("a = b", "X", {}), gt_model("a = b", "X", {})}, 5};
  const auto m = match_extractions({extraction("a=b", "X", {}), extraction("a = b", "x", {}), extraction("a=b", "X", {})}, gt);
  ASSERT_EQ(m.tp.size(), 2u);
  EXPECT_EQ(m.tp[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(m.tp[1], (std::pair<std::size_t, std::size_t>{1, 1}));
  EXPECT_EQ(m.fp, std::vector<std::size_t>{2});
}

TEST(Match, ConservationAndPermutationInvariance) {
  std::mt19937 rng(21);
  const char* eqs[] = {"a = b", "a = b + c", "y = m x", "\\sigma = E \\epsilon", "\\tau = \\eta \\dot{\\gamma}"};
  const char* mats[] = {"A", "B"};
  for (int trial = 0; trial < 300; ++trial) {
    GroundTruthDoc gt{"d", {}, 40};
    std::set<std::pair<int, int>> used;
    for (int k = 0; k < 6; ++k) {
      const int e = rng() % 5, mm = rng() % 2;
      if (!used.insert({e, mm}).second) continue;  // unambiguous GT
      gt.gt_models.push_back(gt_model(eqs[e], mats[mm], {}));
    }
    std::vector<Record> ex;
    std::set<std::pair<int, int>> ex_used;
    for (int k = 0; k < 7; ++k) {
      const int e = rng() % 5, mm = rng() % 2;
      if (!ex_used.insert({e, mm}).second) continue;
      ex.push_back(extraction(eqs[e], mats[mm], {}));
    }
    const auto m = match_extractions(ex, gt);
    ASSERT_EQ(m.tp.size() + m.fp.size(), ex.size());
    ASSERT_EQ(m.tp.size() + m.fn.size(), gt.gt_models.size());
    auto shuffled = ex;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto m2 = match_extractions(shuffled, gt);
    ASSERT_EQ(m2.tp.size(), m.tp.size());
    ASSERT_EQ(m2.fp.size(), m.fp.size());
    ASSERT_EQ(m2.fn.size(), m.fn.size());
  }
}

// ------------------------------------------------------------ confusion

TEST(Confusion, ReportedCountsGiveTrueNegatives) {
  EXPECT_EQ(confusion_from_totals(185, 45, 37, 1578), (ConfusionCounts{185, 45, 37, 1311}));
}

TEST(Confusion, SmallCases) {
  GroundTruthDoc empty{"d", {}, 10};
  EXPECT_EQ(confusion({match_extractions({}, empty)}, {empty}), (ConfusionCounts{0, 0, 0, 10}));
  GroundTruthDoc one{"d", {gt_model("\\sigma = E \\epsilon", "S")}, 5};
  EXPECT_EQ(confusion({match_extractions({extraction("\\sigma = E \\epsilon", "S")}, one)}, {one}),
            (ConfusionCounts{1, 0, 0, 4}));
}

TEST(Confusion, MismatchedDocSets) {
  GroundTruthDoc a{"a", {}, 3}, b{"b", {}, 3};
  const auto oa = match_extractions({}, a);
  EXPECT_THROW(confusion({oa}, {a, b}), Error);
  try {
    confusion({oa, oa}, {a});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::mismatched_doc_sets);
  }
  Record stray = extraction("a=b", "X", {});
  stray.doc_id = "zzz";
  EXPECT_THROW(match_corpus({stray}, {a}), Error);
}

TEST(Confusion, NegativeTrueNegativesRejected) {
  try {
    confusion_from_totals(5, 5, 5, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::inconsistent_counts);
  }
}

// -------------------------------------------------------------- metrics

TEST(Metrics, ReportedConfusionMatrix) {
  const auto m = metrics({185, 45, 37, 1311});
  EXPECT_NEAR(m.precision * 100, 80.4, 0.05);
  EXPECT_NEAR(m.recall * 100, 83.3, 0.05);
  EXPECT_NEAR(m.f1 * 100, 81.9, 0.05);
  EXPECT_NEAR(m.fpr * 100, 3.3, 0.05);
  EXPECT_DOUBLE_EQ(m.precision, 185.0 / 230.0);
  EXPECT_DOUBLE_EQ(m.fpr, 45.0 / 1356.0);
  EXPECT_DOUBLE_EQ(pct1(m.f1), 81.9);
}

TEST(Metrics, ZeroAndUnit) {
  const auto z = metrics({0, 0, 0, 0});
  EXPECT_EQ(z.precision, 0);
  EXPECT_EQ(z.recall, 0);
  EXPECT_EQ(z.f1, 0);
  EXPECT_EQ(z.fpr, 0);
  EXPECT_EQ(z.accuracy, 0);
  const auto h = metrics({1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(h.precision, 0.5);
  EXPECT_DOUBLE_EQ(h.recall, 0.5);
  EXPECT_DOUBLE_EQ(h.f1, 0.5);
  EXPECT_DOUBLE_EQ(h.fpr, 0.5);
}

TEST(Metrics, F1IsHarmonicMean) {
  std::mt19937 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto r = [&rng](int n) { return static_cast<std::int64_t>(rng() % static_cast<unsigned>(n)); };
    ConfusionCounts c{r(300), r(300), r(300), r(3000)};
    const auto m = metrics(c);
    if (m.precision > 0 && m.recall > 0) {
      EXPECT_NEAR(1.0 / m.f1, 0.5 * (1.0 / m.precision + 1.0 / m.recall), 1e-12);
    }
    for (double v : {m.precision, m.recall, m.f1, m.fpr, m.accuracy}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

// ------------------------------------------------------------------ ROC

TEST(Roc, PerfectSeparation) { EXPECT_EQ(roc(items({0.9, 0.8}, {0.1, 0.2}), 0.5).auc, 1.0); }

TEST(Roc, TieIsHalf) { EXPECT_EQ(roc(items({0.6}, {0.6}), 0.5).auc, 0.5); }

TEST(Roc, FourPointFixture) {
  const auto c = roc(items({0.9, 0.4}, {0.6, 0.2}), 0.5);
  EXPECT_EQ(c.auc, 0.75);
  EXPECT_EQ(c.auc, cmdb::testing::pairwise_auc({0.9, 0.4}, {0.6, 0.2}));
  ASSERT_EQ(c.points.size(), 4u);
  EXPECT_EQ(c.points.back().fpr, 1.0);
  EXPECT_EQ(c.points.back().tpr, 1.0);
  EXPECT_EQ(c.operating_point.tpr, 0.5);
  EXPECT_EQ(c.operating_point.fpr, 0.5);
  EXPECT_EQ(roc_csv(c), "threshold,fpr,tpr\n0.9,0,0.5\n0.6,0.5,0.5\n0.4,0.5,1\n0.2,1,1\n");
}

TEST(Roc, DegenerateClasses) {
  try {
    roc(items({0.3, 0.4}, {}), 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::degenerate_classes);
  }
  EXPECT_THROW(roc(items({}, {0.1}), 0.5), Error);
}

TEST(Roc, TrapezoidEqualsPairwiseOnRandomSets) {
  std::mt19937 rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 199);
    std::vector<double> pos, neg;
    const bool coarse = trial % 2 == 0;  // coarse scores force many ties
    for (int i = 0; i < n; ++i) {
      const double s = coarse ? (rng() % 7) / 6.0 : std::uniform_real_distribution<double>(0, 1)(rng);
      (rng() % 2 ? pos : neg).push_back(s);
    }
    if (pos.empty()) pos.push_back(0.5);
    if (neg.empty()) neg.push_back(0.5);
    const auto c = roc(items(pos, neg), 0.5);
    ASSERT_NEAR(c.auc, cmdb::testing::pairwise_auc(pos, neg), 1e-12);
    for (std::size_t i = 1; i < c.points.size(); ++i) ASSERT_GE(c.points[i].fpr, c.points[i - 1].fpr);
  }
}

// ---------------------------------------------------------------- GT I/O

TEST(GroundTruth, JsonLinesRoundTrip) {
  const auto file = std::filesystem::temp_directory_path() / "cmdb_gt_rt.jsonl";
  std::vector<GroundTruthDoc> docs{{"a", {gt_model("\\sigma=E\\epsilon", "S")}, 4}, {"b", {}, 2}};
  write_gt_jsonl(file, docs);
  const auto back = read_gt_jsonl(file);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(to_json(back[0]), to_json(docs[0]));
  EXPECT_EQ(back[0].gt_models[0].equation_canonical, "\\sigma = E \\epsilon");
  std::filesystem::remove(file);
}

TEST(GroundTruth, MoreModelsThanCandidatesRejected) {
  nlohmann::json j = to_json(GroundTruthDoc{"a", {gt_model("a=b", "X", {}), gt_model("c=d", "X", {})}, 1});
  try {
    gt_doc_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::inconsistent_counts);
  }
}
