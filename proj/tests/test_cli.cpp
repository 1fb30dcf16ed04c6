#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "carbrec/cli.hpp"
#include "carbrec/models.hpp"

using namespace carbrec;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("carbrec_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kTinyTrain =
    R"({"state_size": 4, "fc_width": 8, "fc_layers": 2, "blocks": 2, "max_epochs": 2, "patience": 2, "batch_sizes": [64]})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("content hash is FNV-1a 64") {
  CHECK(content_hash("") == "cbf29ce484222325");
  CHECK(content_hash("a") == "af63dc4c8601ec8c");
}

TEST_CASE("smoke: synth, preprocess, extract, train with two seeds, eval") {
  const fs::path w = scratch("smoke");
  spit(w / "train.json", kTinyTrain);
  auto r = cli({"--seed", "3", "synth", "--out", (w / "raw").string(), "--subjects", "2", "--days", "24"});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(w / "raw" / "S1.csv"));
  r = cli({"preprocess", "--in", (w / "raw").string(), "--out", (w / "clean").string(), "--report",
           (w / "realign.json").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(json::parse(slurp(w / "realign.json")).contains("S2"));
  r = cli({"extract", "--scenario", "CarbsAll", "--class", "inertial", "--in", (w / "clean" / "S1.csv").string(),
           "--out", (w / "examples").string()});
  REQUIRE(r.code == kExitOk);
  CHECK_FALSE(fs::is_empty(w / "examples"));
  r = cli({"train", "--in", (w / "clean").string(), "--out", (w / "ckpt").string(), "--config",
           (w / "train.json").string(), "--scenario", "CarbsAll", "--arch", "nbeats", "--seeds", "2"});
  REQUIRE(r.code == kExitOk);
  std::size_t ckpts = 0;
  for (const auto& e : fs::directory_iterator(w / "ckpt")) ckpts += e.path().extension() == ".ckpt";
  CHECK(ckpts == 4);
  r = cli({"eval", "--checkpoints", (w / "ckpt").string(), "--data", (w / "clean").string(), "--report",
           (w / "report.json").string()});
  REQUIRE(r.code == kExitOk);
  const json rep = json::parse(slurp(w / "report.json"));
  REQUIRE(rep["reports"].size() == 1);
  CHECK(rep["reports"][0]["runs"].size() == 4);
  fs::remove_all(w);
}

TEST_CASE("pipeline from one config") {
  const fs::path w = scratch("pipeline");
  json cfg{{"work_dir", (w / "work").string()},
           {"synthetic", {{"subjects", 2}, {"days", 24}}},
           {"scenarios", {"CarbsAll"}},
           {"architectures", {"lstm"}},
           {"train", json::parse(kTinyTrain)}};
  cfg["train"].erase("blocks");
  spit(w / "pipeline.json", cfg.dump());
  const auto r = cli({"pipeline", "--config", (w / "pipeline.json").string()});
  INFO(r.err);
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(w / "work" / "reports" / "eval.json"));
  CHECK(fs::exists(w / "work" / "reports" / "stats.txt"));
  fs::remove_all(w);
}

TEST_CASE("stages are idempotent") {
  const fs::path w = scratch("idem");
  REQUIRE(cli({"synth", "--out", (w / "raw").string(), "--subjects", "2", "--days", "22"}).code == kExitOk);
  REQUIRE(cli({"preprocess", "--data", (w / "raw").string(), "--out", (w / "clean").string()}).code == kExitOk);
  const std::string m1 = slurp(w / "raw" / "manifest.json"), c1 = slurp(w / "clean" / "manifest.json");
  const auto t1 = fs::last_write_time(w / "clean" / "S1.csv");
  const std::string s1 = slurp(w / "clean" / "S1.csv");
  REQUIRE(cli({"synth", "--out", (w / "raw").string(), "--subjects", "2", "--days", "22"}).code == kExitOk);
  REQUIRE(cli({"preprocess", "--data", (w / "raw").string(), "--out", (w / "clean").string()}).code == kExitOk);
  CHECK(slurp(w / "raw" / "manifest.json") == m1);
  CHECK(slurp(w / "clean" / "manifest.json") == c1);
  CHECK(slurp(w / "clean" / "S1.csv") == s1);
  CHECK(fs::last_write_time(w / "clean" / "S1.csv") == t1);  // not rewritten
  const json manifest = json::parse(m1);
  CHECK(manifest["S1.csv"] == content_hash(slurp(w / "raw" / "S1.csv")));
  fs::remove_all(w);
}

TEST_CASE("invalid scenario exits 2 and lists the valid names") {
  const fs::path w = scratch("badname");
  REQUIRE(cli({"synth", "--out", (w / "raw").string(), "--subjects", "1", "--days", "22"}).code == kExitOk);
  const auto r = cli({"extract", "--scenario", "Carbs", "--data", (w / "raw").string()});
  CHECK(r.code == kExitUsage);
  const json e = json::parse(r.err)["error"];
  CHECK(e["kind"] == "invalid_name");
  CHECK(e["valid"] == json::array({"CarbsAll", "CarbsNoBolus", "BolusAll", "BolusWithCarbs"}));
  const auto t = cli({"train", "--data", (w / "raw").string(), "--out", (w / "c").string(), "--scenario", "Bolus"});
  CHECK(t.code == kExitUsage);
  fs::remove_all(w);
}

TEST_CASE("eval without checkpoints exits 3") {
  const fs::path w = scratch("nockpt");
  REQUIRE(cli({"synth", "--out", (w / "raw").string(), "--subjects", "1", "--days", "22"}).code == kExitOk);
  fs::create_directories(w / "empty");
  const auto r = cli({"eval", "--checkpoints", (w / "empty").string(), "--data", (w / "raw").string()});
  CHECK(r.code == kExitNoCheckpoints);
  CHECK(json::parse(r.err)["error"]["exit_code"] == 3);
  fs::remove_all(w);
}

TEST_CASE("config errors enumerate every violation") {
  const fs::path w = scratch("cfg");
  spit(w / "train.json", R"({"max_epoch": 3, "patience": -1, "scenario": "CarbsAll"})");
  REQUIRE(cli({"synth", "--out", (w / "raw").string(), "--subjects", "1", "--days", "22"}).code == kExitOk);
  const auto r = cli({"train", "--data", (w / "raw").string(), "--out", (w / "c").string(), "--config",
                      (w / "train.json").string()});
  CHECK(r.code == kExitUsage);
  const std::string msg = json::parse(r.err)["error"]["message"];
  CHECK(msg.find("max_epoch: unknown key") != std::string::npos);
  CHECK(msg.find("patience") != std::string::npos);

  spit(w / "pipe.json", R"({"work_dir": "x", "scenarios": ["Nope"], "extra": 1})");
  const auto p = cli({"pipeline", "--config", (w / "pipe.json").string()});
  CHECK(p.code == kExitUsage);
  const std::string pm = json::parse(p.err)["error"]["message"];
  CHECK(pm.find("extra") != std::string::npos);
  CHECK(pm.find("Nope") != std::string::npos);
  CHECK(pm.find("exactly one of synthetic and input") != std::string::npos);
  fs::remove_all(w);
}

TEST_CASE("usage errors and help") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"synth"}).code == kExitUsage);  // --out is required
  const auto h = cli({"train", "--help"});
  CHECK(h.code == kExitOk);
  CHECK(h.out.find("--max-epochs") != std::string::npos);
  for (const char* sub : {"ingest", "synth", "preprocess", "extract", "stats", "train", "eval", "serve"}) {
    CHECK(cli({sub, "--help"}).code == kExitOk);
  }
  CHECK(cli({"experiment", "horizons", "--help"}).code == kExitOk);
}

TEST_CASE("ingest: XML parts of one patient merge into one CSV") {
  const fs::path w = scratch("ingest");
  const std::string fx = CARBREC_FIXTURE_DIR;
  const auto r = cli({"ingest", "--format", "ohio-xml", "--in", fx + "/subject_b.xml", "--out", (w / "out").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(w / "out" / "559.csv"));
  CHECK(r.out.find("warning") != std::string::npos);
  const auto bad = cli({"ingest", "--format", "json", "--in", fx + "/subject_b.xml", "--out", (w / "o").string()});
  CHECK(bad.code == kExitUsage);
  CHECK(json::parse(bad.err)["error"]["valid"] == json::array({"csv", "ohio-xml"}));
  fs::remove_all(w);
}

TEST_CASE("stats over a directory") {
  const fs::path w = scratch("stats");
  REQUIRE(cli({"synth", "--out", (w / "raw").string(), "--subjects", "2", "--days", "22"}).code == kExitOk);
  const auto r = cli({"stats", "--data", (w / "raw").string(), "--json", (w / "stats.json").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("S2") != std::string::npos);
  CHECK(fs::exists(w / "stats.json"));
  fs::remove_all(w);
}

TEST_CASE("missing input path fails with exit 1") {
  const auto r = cli({"stats", "--data", "/nonexistent/carbrec"});
  CHECK(r.code == kExitFailure);
  CHECK(json::parse(r.err)["error"]["kind"] == "failure");
}

}  // TEST_SUITE
