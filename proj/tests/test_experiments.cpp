#include "doctest.h"

#include "edln/experiments.hpp"

#include <filesystem>
#include <set>
#include <sstream>

using namespace edln;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("edln_test_exp_" + name);
  fs::remove_all(p);
  return p;
}

Json quick(const std::string& scenario, const fs::path& outdir, bool artifacts = false) {
  return {{"scenario", scenario}, {"instances", 2}, {"outdir", outdir.string()}, {"write_artifacts", artifacts}};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream s(text);
  for (std::string l; std::getline(s, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("every scenario has a complete, valid default config") {
  for (const auto& name : scenario_names()) {
    CAPTURE(name);
    const Json d = default_config_json(name);
    CHECK(d["scenario"] == name);
    const ScenarioConfig c = load_config(Json::object(), name);
    CHECK(c.scenario == name);
    CHECK_NOTHROW(c.validate());
    CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));
    CHECK(config_from_json(config_to_json(c)).hash() == c.hash());
  }
  CHECK_THROWS_AS(default_config_json("nosuch"), std::invalid_argument);
  CHECK_THROWS_AS(load_config(Json::object()), std::invalid_argument);
}

TEST_CASE("user documents merge over the defaults") {
  const ScenarioConfig c = load_config(
      {{"scenario", "platonic_sgd"}, {"seed", 7}, {"train", {{"steps", 50}}}, {"net_b", {{"depth", 4}}}});
  const ScenarioConfig d = load_config(Json::object(), "platonic_sgd");
  CHECK(c.seed == 7);
  CHECK(c.train.steps == 50);
  CHECK(c.train.learning_rate == d.train.learning_rate);
  CHECK(c.net_b.depth == 4);
  CHECK(c.net_b.width == d.net_b.width);
  CHECK(c.thresholds == d.thresholds);

  const ScenarioConfig named = load_config({{"scenario", "platonic_sgd"}}, "saddle_break");
  CHECK(named.scenario == "saddle_break");
}

TEST_CASE("config validation") {
  auto bad = [](Json j) { CHECK_THROWS_AS(load_config(j, "platonic_closed_form"), std::invalid_argument); };
  bad({{"bogus", 1}});
  bad({{"train", {{"bogus", 1}}}});
  bad({{"params", {{"bogus", 1}}}});
  bad({{"thresholds", {{"min_alignment", "high"}}}});
  bad({{"instances", 0}});
  bad({{"probes", 3}});
  bad({{"net_a", {{"depth", 1}}}});
  bad({{"net_a", {{"depth", 3}, {"widths", {6}}}}});
  bad({{"net_a", {{"width", 2}}}});
  bad({{"data", {{"rank", 0}}}});
  bad({{"data", {{"cond_z", 0.5}}}});
  bad({{"train", {{"learning_rate", -1.0}}}});
  bad({{"train", {{"algorithm", "adam"}}}});
  bad({{"data", 3}});
  bad(Json::array());
  CHECK_THROWS_AS(load_config({{"params", {{"interface", 5}}}}, "non_platonic_minima"), std::invalid_argument);
}

TEST_CASE("config hash is stable and tracks content only") {
  const ScenarioConfig a = load_config(Json::object(), "saddle_break");
  ScenarioConfig b = a;
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.outdir = "/elsewhere";
  b.parallelism = 4;
  b.write_artifacts = false;
  CHECK(a.hash() == b.hash());
  b.seed = 1;
  CHECK(a.hash() != b.hash());
  ScenarioConfig c = a;
  c.thresholds["min_alignment"] = 0.5;
  CHECK(a.hash() != c.hash());
  CHECK(load_config(Json::object(), "saddle_break").hash() == a.hash());
}

TEST_CASE("parse_axis") {
  const SweepAxis a = parse_axis("train.weight_decay=0,1e-3,0.01");
  CHECK(a.name == "train.weight_decay");
  REQUIRE(a.values.size() == 3);
  CHECK(a.values[1].get<double>() == 1e-3);
  const SweepAxis s = parse_axis("algorithm=sgd,full_batch_gd");
  CHECK(s.values[0] == "sgd");
  const SweepAxis t = parse_axis("identity_embeddings=true,false");
  CHECK(t.values[0] == true);
  CHECK_THROWS_AS(parse_axis("depth"), std::invalid_argument);
  CHECK_THROWS_AS(parse_axis("=1,2"), std::invalid_argument);
  CHECK_THROWS_AS(parse_axis("depth="), std::invalid_argument);
  CHECK_THROWS_AS(parse_axis("depth=1,,2"), std::invalid_argument);
}

TEST_CASE("runs are deterministic and every metric reaches the summary csv") {
  const auto dir = temp_dir("det");
  const ScenarioConfig cfg = load_config(quick("platonic_closed_form", dir));
  const ScenarioResult r1 = run_scenario(cfg);
  const ScenarioResult r2 = run_scenario(cfg);
  CHECK(r1.pass);
  CHECK(r1.error.empty());
  CHECK(r1.config_hash == cfg.hash());
  REQUIRE(r1.summary.size() == r2.summary.size());
  for (std::size_t i = 0; i < r1.summary.size(); ++i) {
    CHECK(r1.summary[i].first == r2.summary[i].first);
    CHECK(r1.summary[i].second == r2.summary[i].second);
  }
  CHECK(r1.summary_csv() == r2.summary_csv());

  ScenarioConfig other = cfg;
  other.seed = 1;
  CHECK(run_scenario(other).metric("min_alignment") != r1.metric("min_alignment"));
  CHECK_THROWS(r1.metric("no_such_metric"));

  const auto rows = lines(r1.summary_csv());
  REQUIRE(rows.size() >= 4);
  CHECK(rows[0].rfind("# edln scenario=platonic_closed_form config_hash=" + cfg.hash(), 0) == 0);
  CHECK(rows[0].find("versions=") != std::string::npos);
  CHECK(rows[2] == "kind,name,value,op,threshold,pass");
  std::set<std::string> names;
  for (const auto& l : rows)
    if (l.rfind("metric,", 0) == 0) names.insert(l.substr(7, l.find(',', 7) - 7));
  for (const auto& [k, v] : r1.summary) CHECK(names.count(k) == 1);
  std::size_t checks = 0;
  for (const auto& l : rows) checks += l.rfind("check,", 0) == 0;
  CHECK(checks == r1.checks.size());
  CHECK(rows.back() == "verdict,pass,1,,,1");
  CHECK(!fs::exists(dir));
}

TEST_CASE("artifact layout") {
  const auto dir = temp_dir("art");
  Json doc = quick("platonic_sgd", dir, true);
  doc["train"] = {{"steps", 40}, {"record_every", 20}, {"checkpoint_every", 20}};
  doc["instances"] = 1;
  const ScenarioConfig c = load_config(doc);
  const ScenarioResult r = run_scenario(c);
  const fs::path root = dir / "platonic_sgd" / c.hash();
  for (const char* f : {"config.snapshot", "summary.csv", "trace.csv", "trace_b.csv", "alignment.csv",
                        "balance_a.csv", "data_model.json", "networks/net_a.net", "networks/net_b.net"}) {
    CAPTURE(f);
    CHECK(fs::exists(root / f));
  }
  CHECK(r.artifacts.at("summary") == (root / "summary.csv").string());
  CHECK(fs::exists(root / "networks" / "a" / "ckpt_20.net"));
  const ScenarioConfig snap = load_config(Json::parse(read_text_file(root / "config.snapshot")));
  CHECK(snap.hash() == c.hash());
  const EdlnNetwork a = load_network(root / "networks" / "net_a.net");
  CHECK(a.depth() == c.net_a.depth);
  CHECK(lines(read_text_file(root / "trace.csv"))[0].rfind("step,loss,entropy_S", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("sweep: cartesian product, bare keys and failure recording") {
  const auto dir = temp_dir("sweep");
  Json base = quick("platonic_closed_form", dir, true);
  base["instances"] = 1;
  std::string csv;
  const auto runs = sweep(base, {parse_axis("depth=2,3"), parse_axis("seed=0,1")}, &csv);
  REQUIRE(runs.size() == 4);
  for (const auto& r : runs) {
    CHECK(r.result.pass);
    CHECK(r.result.error.empty());
  }
  CHECK(runs[2].point.at("depth") == 3);
  CHECK(runs[2].point.at("seed") == 0);
  const ScenarioConfig c3 = load_config(Json::parse(read_text_file(
      dir / "platonic_closed_form" / runs[2].result.config_hash / "config.snapshot")));
  CHECK(c3.net_a.depth == 3);
  CHECK(c3.net_b.depth == 3);
  REQUIRE(!csv.empty());
  const auto rows = lines(read_text_file(csv));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].rfind("run,depth,seed,scenario,config_hash,pass,error,", 0) == 0);
  CHECK(rows[3].rfind("2,3,0,platonic_closed_form," + runs[2].result.config_hash + ",1,,", 0) == 0);

  Json single = base;
  single["write_artifacts"] = false;
  const auto none = sweep(single, {});
  REQUIRE(none.size() == 1);
  CHECK(none[0].result.summary_csv() == run_scenario(load_config(single)).summary_csv());

  const auto mixed = sweep(single, {parse_axis("instances=1,0")});
  REQUIRE(mixed.size() == 2);
  CHECK(mixed[0].result.pass);
  CHECK(!mixed[1].result.pass);
  CHECK(mixed[1].result.error.find("instances") != std::string::npos);

  CHECK_THROWS_AS(sweep(single, {parse_axis("no_such_key=1")}), std::invalid_argument);
  fs::remove_all(dir);
}
