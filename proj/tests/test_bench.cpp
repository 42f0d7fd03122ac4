#include <doctest.h>

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "xmbench/bench.hpp"

using namespace xmb;
using nlohmann::json;

namespace {

json tiny_config_json(int folds, const json& methods) {
  return {{"dataset",
           {{"synthetic",
             {{"num_classes", 6},
              {"samples_per_class", 20},
              {"dim_a", 10},
              {"dim_b", 8},
              {"seed", 11}}}}},
          {"protocol", {{"folds", folds}, {"seed", 3}}},
          {"methods", methods}};
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

int line_count(const std::string& text) {
  int lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  return lines;
}

const AggregateResult& aggregate_named(const EvalReport& report,
                                       const std::string& method,
                                       const std::string& mode,
                                       const std::string& direction) {
  for (const AggregateResult& agg : report.aggregates) {
    if (agg.method == method && agg.mode == mode && agg.direction == direction)
      return agg;
  }
  FAIL("no aggregate for " << method << " " << mode << " " << direction);
  static AggregateResult none;
  return none;
}

}  // namespace

TEST_CASE("an empty config fills in the full default grid") {
  RunConfig cfg = parse_run_config(json::object());
  REQUIRE(cfg.methods.size() == 4);
  CHECK(cfg.methods[0].name == "cm");
  CHECK(cfg.methods[1].name == "sm");
  CHECK(cfg.methods[2].name == "scm");
  CHECK(cfg.methods[3].name == "ts");
  for (const MethodConfig& m : cfg.methods) CHECK_FALSE(m.binarize);
  CHECK(cfg.modes == std::vector<TaskMode>{TaskMode::non_xtd, TaskMode::xtd});
  CHECK(cfg.directions == std::vector<Direction>{Direction::image_to_text,
                                                 Direction::text_to_image});
  CHECK(cfg.code_lengths == std::vector<int>{8, 16, 32});
  CHECK(cfg.n_folds == 5);
  CHECK(cfg.seed == 7);
  CHECK(cfg.fraction_db == 0.8);
  CHECK(cfg.similarity == Similarity::cosine);
  CHECK(cfg.tie_policy.kind == TiePolicy::Kind::expected_ap_analytic);
  CHECK(cfg.tie_policy.seed == 7);
  CHECK(cfg.synthetic);
}

TEST_CASE("configs with unknown or inconsistent fields are rejected") {
  CHECK_THROWS_WITH_AS(parse_run_config({{"datasets", json::object()}}),
                       doctest::Contains("datasets"), std::runtime_error);
  CHECK_THROWS(parse_run_config({{"protocol", {{"folds", 0}}}}));
  CHECK_THROWS(parse_run_config({{"protocol", {{"fraction_db", 1.0}}}}));
  CHECK_THROWS(parse_run_config(
      {{"methods", json::array({{{"name", "ts"}, {"binarize", true}}})}}));
  CHECK_THROWS(parse_run_config(
      {{"methods", json::array({{{"name", "sm"}}, {{"name", "sm"}}})}}));
  CHECK_THROWS(parse_run_config({{"modes", json::array({"non_xtd", "non_xtd"})}}));
  CHECK_THROWS(parse_run_config({{"code_lengths", json::array({8, 8})}}));
  CHECK_THROWS(parse_run_config({{"code_lengths", json::array({0})}}));
  CHECK_THROWS(parse_run_config(
      {{"dataset", {{"path", "x"}, {"synthetic", json::object()}}}}));
  CHECK_THROWS(parse_run_config(
      {{"methods", json::array({{{"name", "sm"}, {"embeddings_a", "x.xmbf"}}})}}));
}

TEST_CASE("the config hash tracks content, not key order or formatting") {
  RunConfig a = parse_run_config(json::parse(
      R"({"protocol": {"folds": 2, "seed": 3}, "methods": [{"name": "sm"}]})"));
  RunConfig b = parse_run_config(json::parse(
      R"({"methods": [{"kind": "sm"}], "protocol": {"seed": 3, "folds": 2}})"));
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);

  RunConfig c = parse_run_config(json::parse(
      R"({"protocol": {"folds": 2, "seed": 4}, "methods": [{"name": "sm"}]})"));
  CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("the name hash matches its published reference vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("a single-method run fills the whole fold by task grid") {
  RunConfig cfg =
      parse_run_config(tiny_config_json(5, json::array({{{"name", "sm"}}})));
  cfg.cmc_max_rank = 7;
  CrossModalDataset ds = acquire_dataset(cfg);
  RunOutcome outcome = run_benchmark(cfg, ds, 1, "");
  CHECK(outcome.failed_cells == 0);
  // 1 method x 2 modes x 2 directions x 5 folds.
  REQUIRE(outcome.report.cells.size() == 20);
  REQUIRE(outcome.report.aggregates.size() == 4);
  for (const CellResult& cell : outcome.report.cells) {
    CHECK(cell.ok());
    CHECK(cell.map.defined_queries > 0);
    CHECK((0.0 <= cell.map.value && cell.map.value <= 1.0));
    CHECK(cell.cmc.values.size() == 7);
    CHECK(cell.query_count > 0);
    CHECK(cell.gallery_size > 0);
    CHECK(cell.code_length == 0);
  }
  for (const AggregateResult& agg : outcome.report.aggregates) {
    CHECK(agg.n_folds == 5);
    CHECK((0.0 <= agg.mean_map && agg.mean_map <= 1.0));
  }
  CHECK(outcome.manifest["config_hash"] == config_hash(cfg));

  // Classifiers generalize to seen classes far better than to unseen ones.
  for (const char* dir : {"i2t", "t2i"}) {
    const AggregateResult& seen = aggregate_named(outcome.report, "sm", "non_xtd", dir);
    const AggregateResult& unseen = aggregate_named(outcome.report, "sm", "xtd", dir);
    CHECK(seen.mean_map > unseen.mean_map);
  }
}

TEST_CASE("identical runs produce byte-identical reports") {
  RunConfig cfg =
      parse_run_config(tiny_config_json(2, json::array({{{"name", "sm"}}})));
  CrossModalDataset ds = acquire_dataset(cfg);
  RunOutcome first = run_benchmark(cfg, ds, 1, "");
  RunOutcome second = run_benchmark(cfg, ds, 1, "");
  CHECK(first.report.to_json() == second.report.to_json());
}

TEST_CASE("a rerun over an unchanged output directory reuses the cached models") {
  RunConfig cfg =
      parse_run_config(tiny_config_json(2, json::array({{{"name", "sm"}}})));
  CrossModalDataset ds = acquire_dataset(cfg);
  oracle::TempDir tmp("bench_cache");
  RunOutcome first = run_benchmark(cfg, ds, 1, tmp.path);
  emit_report(first, tmp.path);
  for (const json& unit : first.manifest["units"])
    CHECK(unit["status"] == "trained");

  RunOutcome second = run_benchmark(cfg, ds, 1, tmp.path);
  for (const json& unit : second.manifest["units"])
    CHECK(unit["status"] == "cached");
  CHECK(second.report.to_json() == first.report.to_json());
}

TEST_CASE("one failing method cannot take down the rest of the grid") {
  json methods = json::array(
      {{{"name", "sm"}},
       {{"name", "ghost"},
        {"kind", "precomputed"},
        {"embeddings_a", "no_such_file_a.xmbf"},
        {"embeddings_b", "no_such_file_b.xmbf"}}});
  RunConfig cfg = parse_run_config(tiny_config_json(2, methods));
  CrossModalDataset ds = acquire_dataset(cfg);
  RunOutcome outcome = run_benchmark(cfg, ds, 1, "");
  // The ghost column fails all 2x2x2 cells; sm scores all of its own.
  CHECK(outcome.failed_cells == 8);
  int sm_ok = 0, ghost_failed = 0;
  for (const CellResult& cell : outcome.report.cells) {
    if (cell.method == "sm") {
      CHECK(cell.ok());
      ++sm_ok;
    }
    if (cell.method == "ghost") {
      CHECK_FALSE(cell.ok());
      CHECK(cell.error.find("training failed") == 0);
      ++ghost_failed;
    }
  }
  CHECK(sm_ok == 8);
  CHECK(ghost_failed == 8);
  // Aggregates only cover columns whose folds all scored.
  for (const AggregateResult& agg : outcome.report.aggregates)
    CHECK(agg.method == "sm");
}

TEST_CASE("report artifacts land on disk with one row per aggregate") {
  json methods = json::array({{{"name", "cm"}}, {{"name", "sm"}}});
  RunConfig cfg = parse_run_config(tiny_config_json(2, methods));
  CrossModalDataset ds = acquire_dataset(cfg);
  RunOutcome outcome = run_benchmark(cfg, ds, 1, "");
  REQUIRE(outcome.report.aggregates.size() == 8);

  oracle::TempDir tmp("bench_report");
  emit_report(outcome, tmp.path);
  CHECK(slurp(tmp.path / "report.json") == outcome.report.to_json() + "\n");

  const std::string summary = slurp(tmp.path / "summary.csv");
  CHECK(line_count(summary) == 9);  // header + 2 methods x 2 modes x 2 directions
  CHECK(summary.rfind("method,code_length,mode,direction,folds,mean_map", 0) == 0);

  for (const AggregateResult& agg : outcome.report.aggregates) {
    const std::string cmc = slurp(tmp.path / ("cmc_" + agg.key() + ".csv"));
    CHECK(line_count(cmc) == static_cast<int>(agg.mean_cmc.size()) + 1);
  }
  CHECK(std::filesystem::exists(tmp.path / "manifest.json"));
  CHECK(std::filesystem::exists(tmp.path / "fold_plan.json"));
}

TEST_CASE("emitted reports are byte-identical across output directories") {
  RunConfig cfg =
      parse_run_config(tiny_config_json(2, json::array({{{"name", "sm"}}})));
  CrossModalDataset ds = acquire_dataset(cfg);
  oracle::TempDir left("bench_left");
  oracle::TempDir right("bench_right");
  emit_report(run_benchmark(cfg, ds, 1, ""), left.path);
  emit_report(run_benchmark(cfg, ds, 1, ""), right.path);
  CHECK(slurp(left.path / "report.json") == slurp(right.path / "report.json"));
  CHECK(slurp(left.path / "summary.csv") == slurp(right.path / "summary.csv"));
}

TEST_CASE("stored run files score back to the hand-computed average precision") {
  RunFile run;
  run.gallery_ids = {"g0", "g1", "g2"};
  RankedList list;
  list.query_id = "q0";
  list.order = {2, 0, 1};
  list.scores = {3.0, 2.0, 1.0};
  list.tie_groups = {{0, 1}, {1, 2}, {2, 3}};
  run.lists = {list};

  std::vector<std::string> ids = {"q0", "g0", "g1", "g2"};
  LabelTable labels;
  labels.labels = {{1}, {0}, {1}, {1}};
  labels.num_classes = 2;

  json scored = score_run(run, ids, labels);
  // Ranked relevance 1,0,1 : AP = (1/1 + 2/3) / 2.
  CHECK(scored["map"].get<double>() == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(scored["num_queries"] == 1);
  CHECK(scored["gallery_size"] == 3);
  CHECK(scored["defined_queries"] == 1);
  CHECK(scored["excluded_queries"] == 0);
  CHECK(scored["cmc"][0].get<double>() == 1.0);
  CHECK(scored["per_query"][0]["id"] == "q0");

  // Unknown query ids cannot be scored.
  run.lists[0].query_id = "mystery";
  CHECK_THROWS(score_run(run, ids, labels));
}
