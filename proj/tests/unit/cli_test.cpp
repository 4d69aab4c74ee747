#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmdb/cli/app.hpp"
#include "support/fixture_files.hpp"

using namespace cmdb;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cmdb_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cmdb");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), {out, err});
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
protected:
  fs::path dir;
  cmdb::testing::FixturePaths fx;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("cmdb_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fx = cmdb::testing::write_fixture_files(dir / "fixtures");
    unsetenv("CM_DB_PATH");
    unsetenv("CM_PROVIDER");
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string db(const std::string& name = "cmdb.sqlite") const { return (dir / name).string(); }
  std::string provider() const { return "mock:" + fx.mock_script.string(); }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
};

}  // namespace

TEST_F(Cli, RunPrintsReport) {
  const auto r = cmdb_cli({"run", fx.corpus_dir.string(), "--provider", provider(), "--db", db()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("records stored: 9"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("rejected:       14"), std::string::npos) << r.out;

  const auto again = cmdb_cli({"run", fx.corpus_dir.string(), "--provider", provider(), "--db", db(), "--json"});
  ASSERT_EQ(again.code, 0);
  const auto j = json::parse(again.out);
  EXPECT_EQ(j["resumed"], 20);
  EXPECT_EQ(j["cost"]["analyst_tier"]["calls"], 0);
}

TEST_F(Cli, ExportThenEvalReproducesConfusionMatrix) {
  ASSERT_EQ(cmdb_cli({"run", fx.corpus_dir.string(), "--provider", provider(), "--db", db()}).code, 0);
  const auto out = (dir / "out.cmdb.jsonl").string();
  const auto ex = cmdb_cli({"export", "--db", db(), "--out", out, "--json"});
  ASSERT_EQ(ex.code, 0) << ex.err;
  EXPECT_EQ(json::parse(ex.out)["records"], 9);

  const auto ev = cmdb_cli({"eval", "--gt", fx.ground_truth.string(), "--db", out, "--json"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto j = json::parse(ev.out);
  EXPECT_EQ(j["confusion"], (json{{"tp", 8}, {"fp", 1}, {"fn", 1}, {"tn", 30}}));
  EXPECT_DOUBLE_EQ(j["metrics"]["precision"].get<double>(), 8.0 / 9.0);
  EXPECT_DOUBLE_EQ(j["metrics"]["recall"].get<double>(), 8.0 / 9.0);
  EXPECT_DOUBLE_EQ(j["metrics"]["fpr"].get<double>(), 1.0 / 31.0);
  EXPECT_TRUE(j["roc"].is_null());  // an export carries no gate scores

  const auto text = cmdb_cli({"eval", "--gt", fx.ground_truth.string(), "--db", out});
  EXPECT_NE(text.out.find("tp=8 fp=1 fn=1 tn=30"), std::string::npos) << text.out;
  EXPECT_NE(text.out.find("precision 88.9%"), std::string::npos) << text.out;
}

TEST_F(Cli, EvalOnDatabaseUsesGateScores) {
  ASSERT_EQ(cmdb_cli({"run", fx.corpus_dir.string(), "--provider", provider(), "--db", db()}).code, 0);
  const auto csv = dir / "roc.csv";
  const auto ev = cmdb_cli({"eval", "--gt", fx.ground_truth.string(), "--db", db(), "--json", "--roc-csv", csv.string(),
                       "--threshold", "0.5"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto j = json::parse(ev.out);
  EXPECT_EQ(j["confusion"]["tp"], 8);
  ASSERT_FALSE(j["roc"].is_null());
  EXPECT_GE(j["roc"]["auc"].get<double>(), 0.5);
  EXPECT_LE(j["roc"]["auc"].get<double>(), 1.0);
  EXPECT_EQ(slurp(csv).rfind("threshold,fpr,tpr\n", 0), 0u);
}

TEST_F(Cli, StagedCommandsEqualSingleShotRun) {
  ASSERT_EQ(cmdb_cli({"run", fx.corpus_dir.string(), "--provider", provider(), "--db", db("a.sqlite")}).code, 0);
  const auto work = (dir / "work").string();
  for (const char* stage : {"ingest", "screen", "extract"}) {
    const auto r = cmdb_cli({stage, fx.corpus_dir.string(), "--provider", provider(), "--db", db("b.sqlite"), "--work-dir",
                        work});
    ASSERT_EQ(r.code, 0) << stage << ": " << r.err;
  }
  ASSERT_EQ(cmdb_cli({"export", "--db", db("a.sqlite"), "--out", (dir / "a.cmdb.jsonl").string()}).code, 0);
  ASSERT_EQ(cmdb_cli({"export", "--db", db("b.sqlite"), "--out", (dir / "b.cmdb.jsonl").string()}).code, 0);
  auto strip = [](const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      auto j = json::parse(line);
      j.erase("updated_at");
      out.push_back(j);
    }
    return out;
  };
  const auto a = strip(slurp(dir / "a.cmdb.jsonl"));
  EXPECT_EQ(a.size(), 9u);
  EXPECT_EQ(a, strip(slurp(dir / "b.cmdb.jsonl")));

  store::Store sa(db("a.sqlite")), sb(db("b.sqlite"));
  ASSERT_EQ(sa.list_jobs().size(), sb.list_jobs().size());
  for (const auto& ja : sa.list_jobs()) EXPECT_EQ(sb.get_job(ja.doc_id)->state, ja.state) << ja.doc_id;
}

TEST_F(Cli, QueryOnEmptyStoreIsEmptyArray) {
  const auto r = cmdb_cli({"query", "--mechanism", "elasto_plasticity", "--json", "--db", db()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "[]\n");
}

TEST_F(Cli, QueryFilters) {
  ASSERT_EQ(cmdb_cli({"run", fx.corpus_dir.string(), "--provider", provider(), "--db", db()}).code, 0);
  const auto r = cmdb_cli({"query", "--db", db(), "--material", "kaolinite", "--json"});
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["doc_id"], "doc11");
  const auto text = cmdb_cli({"query", "--db", db(), "--param", "\\eta_\\infty", "--min", "1e-3", "--max", "1e-2"});
  EXPECT_NE(text.out.find("1 record(s)"), std::string::npos) << text.out;
  EXPECT_NE(text.out.find("Pa·s"), std::string::npos);
  const auto bad = cmdb_cli({"query", "--db", db(), "--min", "1", "--json"});
  EXPECT_EQ(bad.code, 2);
  EXPECT_EQ(json::parse(bad.out)["code"], "bad_filter");
}

TEST_F(Cli, JsonOutputParsesForEverySubcommand) {
  const auto c = fx.corpus_dir.string();
  const auto p = provider();
  const auto out = (dir / "x.cmdb.jsonl").string();
  const std::vector<std::vector<std::string>> cmds = {
      {"ingest", c, "--db", db()},
      {"screen", c, "--db", db(), "--provider", p},
      {"extract", c, "--db", db(), "--provider", p},
      {"run", c, "--db", db(), "--provider", p},
      {"eval", "--gt", fx.ground_truth.string(), "--db", db()},
      {"query", "--db", db()},
      {"query", "--db", db(), "--page", "1", "--page-size", "2"},
      {"export", "--db", db(), "--out", out},
      {"import", out, "--db", db("copy.sqlite")},
      {"stats", "--db", db()},
      {"run", (dir / "missing").string(), "--db", db()},
  };
  for (auto args : cmds) {
    args.push_back("--json");
    const auto r = cmdb_cli(args);
    EXPECT_TRUE(json::accept(r.out)) << args[0] << ": " << r.out;
  }
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cmdb_cli({}).code, 2);
  EXPECT_EQ(cmdb_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cmdb_cli({"run"}).code, 2);
  EXPECT_EQ(cmdb_cli({"query", "--colour", "red"}).code, 2);
  EXPECT_EQ(cmdb_cli({"--help"}).code, 0);
  EXPECT_EQ(cmdb_cli({"--version"}).out, std::string(kVersion) + "\n");

  const auto missing = cmdb_cli({"run", (dir / "missing").string(), "--db", db(), "--provider", provider()});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("unreadable_corpus"), std::string::npos);
  fs::create_directories(dir / "empty");
  EXPECT_EQ(cmdb_cli({"run", (dir / "empty").string(), "--db", db(), "--provider", provider()}).code, 2);
  EXPECT_EQ(cmdb_cli({"run", fx.corpus_dir.string(), "--db", db()}).code, 2);  // no provider configured
  EXPECT_EQ(cmdb_cli({"eval", "--gt", fx.ground_truth.string(), "--db", db("nope.sqlite")}).code, 2);

  // One document's provider outage is a partial failure.
  auto script = json::parse(slurp(fx.mock_script));
  for (auto& e : script["entries"]) {
    if (e["doc_id"] == "doc08") e["fail"] = "outage";
  }
  const auto broken = dir / "broken.json";
  std::ofstream(broken) << script.dump();
  const auto partial = cmdb_cli({"run", fx.corpus_dir.string(), "--db", db(), "--provider", "mock:" + broken.string(),
                            "--json"});
  EXPECT_EQ(partial.code, 1);
  const auto j = json::parse(partial.out);
  ASSERT_EQ(j["failures"].size(), 1u);
  EXPECT_EQ(j["failures"][0]["doc_id"], "doc08");
}

TEST_F(Cli, SettingsPrecedence) {
  const auto conf = dir / "cmdb.conf";
  std::ofstream(conf) << "# test\ndb_path = " << db("from_file.sqlite") << "\n";
  ASSERT_EQ(cmdb_cli({"--config", conf.string(), "stats"}).code, 0);
  EXPECT_TRUE(fs::exists(db("from_file.sqlite")));

  setenv("CM_DB_PATH", db("from_env.sqlite").c_str(), 1);
  ASSERT_EQ(cmdb_cli({"--config", conf.string(), "stats"}).code, 0);
  EXPECT_TRUE(fs::exists(db("from_env.sqlite")));

  ASSERT_EQ(cmdb_cli({"--config", conf.string(), "stats", "--db", db("from_flag.sqlite")}).code, 0);
  EXPECT_TRUE(fs::exists(db("from_flag.sqlite")));
  unsetenv("CM_DB_PATH");

  std::ofstream(dir / "bad.conf") << "db_pth = x\n";
  const auto bad = cmdb_cli({"--config", (dir / "bad.conf").string(), "stats", "--json"});
  EXPECT_EQ(bad.code, 2);
  EXPECT_EQ(json::parse(bad.out)["code"], "bad_config");

  // Provider from the config file.
  std::ofstream(dir / "prov.conf") << "provider = \"mock:" << fx.mock_script.string() << "\"\nworkers = 2\n";
  EXPECT_EQ(cmdb_cli({"--config", (dir / "prov.conf").string(), "run", fx.corpus_dir.string(), "--db", db()}).code, 0);
}

TEST_F(Cli, ImportRoundTrip) {
  ASSERT_EQ(cmdb_cli({"run", fx.corpus_dir.string(), "--provider", provider(), "--db", db()}).code, 0);
  const auto out = (dir / "all.cmdb.jsonl").string();
  ASSERT_EQ(cmdb_cli({"export", "--db", db(), "--out", out}).code, 0);
  ASSERT_EQ(cmdb_cli({"import", out, "--db", db("copy.sqlite")}).code, 0);
  auto records = [&](const std::string& path) {
    auto j = json::parse(cmdb_cli({"query", "--db", path, "--json"}).out);
    for (auto& r : j) r.erase("updated_at");
    return j;
  };
  EXPECT_EQ(records(db()).size(), 9u);
  EXPECT_EQ(records(db()), records(db("copy.sqlite")));
  EXPECT_EQ(cmdb_cli({"stats", "--db", db(), "--json"}).out, cmdb_cli({"stats", "--db", db("copy.sqlite"), "--json"}).out);
}
