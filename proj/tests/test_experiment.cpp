#include <doctest.h>

#include <fstream>
#include <sstream>

#include "collapselab/error.hpp"
#include "collapselab/experiment.hpp"
#include "support.hpp"

using namespace collapselab;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({
  "version": 1,
  "seed": 3,
  "output": "unused",
  "conditions": [
    {"name": "tiny", "kernel": "text", "generations": 1, "size": 80, "replicates": 2,
     "text": {"sampler": {"max_length": 60}},
     "source": {"toy": {"documents": 120, "vocabulary": 300}},
     "metrics": ["output_vocabulary", "perplexity_real", "ttr", "safety_score"],
     "safety_cases": 8},
    {"name": "tiny_pop", "kernel": "population", "generations": 2, "size": 300,
     "source": {"toy": {"records": 400, "dimension": 4}},
     "population": {"components": 2},
     "bootstrap": {"n": 100, "iterations": 3}}
  ]
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = testing::temp_path(name);
  fs::remove_all(dir);
  return dir;
}

std::string error_of(const std::string& json) {
  try {
    parse_experiment_config(json);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config validation errors") {
  CHECK(error_of("{not json").find("JSON") != std::string::npos);
  CHECK(error_of(R"({"version": 2, "seed": 1, "conditions": []})").find("version") != std::string::npos);
  const auto unknown = error_of(R"({"version": 1, "seed": 1, "conditions": [{"name": "a", "temprature": 1}]})");
  CHECK(unknown.find("temprature") != std::string::npos);
  CHECK(error_of(R"({"version": 1, "seed": 1, "extra": 0, "conditions": [{"name": "a"}]})").find("extra") !=
        std::string::npos);
  CHECK_FALSE(error_of(R"({"version": 1, "seed": 1, "conditions": [{"name": "a", "size": 10, "sizes": [10, 10]}]})")
                  .empty());
  CHECK_FALSE(error_of(R"({"version": 1, "seed": 1, "conditions": [{"name": "a b"}]})").empty());
  CHECK_FALSE(error_of(R"({"version": 1, "seed": 1, "conditions": [{"name": "a"}, {"name": "a"}]})").empty());
  CHECK_FALSE(error_of(R"({"version": 1, "seed": 1, "conditions": [{"name": "a", "real_fraction": 1.5}]})").empty());
  CHECK_FALSE(error_of(R"({"version": 1, "seed": 1, "conditions": [{"name": "a", "metrics": ["nope"]}]})").empty());
  CHECK_FALSE(error_of(R"({"version": 1, "seed": 1, "conditions": [{"name": "a", "text": {"sampler": {"top_p": 2}}}]})")
                  .empty());
}

TEST_CASE("config defaults, volume schedules and seeds") {
  const auto c = parse_experiment_config(R"({"version": 1, "seed": 10, "conditions": [
      {"name": "a", "replicates": 3},
      {"name": "b", "seeds": [7, 8], "volume": {"base": 500, "multipliers": [2, 3, 4, 5]}},
      {"name": "p", "kernel": "population"}]})");
  REQUIRE(c.conditions.size() == 3);
  CHECK(c.conditions[0].seeds == std::vector<std::uint64_t>{10, 11, 12});
  CHECK(c.conditions[0].chain.sizes == std::vector<std::size_t>{4000});
  CHECK(c.conditions[1].chain.sizes == std::vector<std::size_t>{500, 1000, 1500, 2000, 2500});
  CHECK(c.conditions[2].chain.sizes == std::vector<std::size_t>{5000});
  const auto moved = with_master_seed(c, 100);
  CHECK(moved.conditions[0].seeds == std::vector<std::uint64_t>{100, 101, 102});
  CHECK(moved.conditions[1].seeds == std::vector<std::uint64_t>{7, 8});
  CHECK(config_hash(moved) != config_hash(c));
  CHECK(config_hash(c) == config_hash(parse_experiment_config(c.canonical)));
  CHECK(c.conditions[0].block_hash != c.conditions[1].block_hash);
}

TEST_CASE("bootstrap presets") {
  auto boot = [](const std::string& block) {
    const auto c = parse_experiment_config(R"({"version": 1, "seed": 1, "conditions": [
        {"name": "p", "kernel": "population", "bootstrap": )" + block + "}]}");
    return std::make_pair(c.conditions[0].bootstrap_n, c.conditions[0].bootstrap_iterations);
  };
  CHECK(boot(R"({"preset": "images"})") == std::make_pair<std::size_t, std::size_t>(5534, 10));
  CHECK(boot(R"({"preset": "statistics"})") == std::make_pair<std::size_t, std::size_t>(1384, 10));
  // Explicit values override the preset.
  CHECK(boot(R"({"preset": "statistics", "iterations": 4})") == std::make_pair<std::size_t, std::size_t>(1384, 4));
  CHECK(error_of(R"({"version": 1, "seed": 1, "conditions": [
      {"name": "p", "kernel": "population", "bootstrap": {"preset": "huge"}}]})")
            .find("preset") != std::string::npos);
}

TEST_CASE("metric catalogs name their producers") {
  CHECK(text_metric_catalog().at("perplexity_real").module == "genkernel");
  CHECK(population_metric_catalog().contains("frechet_distance"));
  CHECK(panel_metrics("safety").front() == "safety_score");
  CHECK(panel_metrics("ttr") == std::vector<std::string>{"ttr"});
}

TEST_CASE("tiny run writes the documented layout and is byte-reproducible") {
  const auto config = parse_experiment_config(kTiny);
  RunOptions opts;
  opts.out = fresh_dir("run-a");
  const auto a = run_experiment(config, opts);
  REQUIRE(a.complete);
  opts.out = fresh_dir("run-b");
  const auto b = run_experiment(config, opts);
  REQUIRE(b.complete);
  for (const auto* cond : {"tiny", "tiny_pop"}) {
    const auto ra = slurp(fs::path(a.directory) / cond / "report.csv");
    CHECK_FALSE(ra.empty());
    CHECK(ra == slurp(fs::path(b.directory) / cond / "report.csv"));
  }
  CHECK(a.conditions[0].rows.size() == 4);  // 2 seeds x generations 0..1
  CHECK(a.conditions[1].rows.size() == 3);
  const auto gen = fs::path(a.directory) / "tiny" / "seed-3" / "gen-1";
  for (const auto* f : {"model.txt", "synthetic.jsonl", "composition.json", "metrics.csv"}) CHECK(fs::exists(gen / f));
  CHECK(fs::exists(fs::path(a.directory) / "tiny_pop" / "seed-3" / "gen-2" / "synthetic.csv"));
  const auto manifest = slurp(fs::path(a.directory) / "manifest.json");
  CHECK(manifest.find("\"complete\": true") != std::string::npos);
  CHECK(manifest.find(a.config_hash) != std::string::npos);

  const auto report = slurp(fs::path(a.directory) / "tiny" / "report.csv");
  CHECK(report.rfind("condition,seed,generation,output_vocabulary,perplexity_real,safety_score,ttr\n", 0) == 0);
}

TEST_CASE("jsonl reports and plot data") {
  const auto config = parse_experiment_config(kTiny);
  RunOptions opts;
  opts.out = fresh_dir("run-jsonl");
  opts.format = ReportFormat::Jsonl;
  const auto run = run_experiment(config, opts);
  REQUIRE(run.complete);
  const auto line = slurp(fs::path(run.directory) / "tiny" / "report.jsonl");
  CHECK(line.rfind("{\"condition\":\"tiny\",\"seed\":3,\"generation\":0,", 0) == 0);

  const auto rows = plot_series(run.directory, "ttr");
  REQUIRE(rows.size() == 2);  // generations 0 and 1, two seeds each
  for (const auto& r : rows) {
    CHECK(r.condition == "tiny");
    CHECK(r.ci_low <= r.value);
    CHECK(r.value <= r.ci_high);
  }
  const auto fd = plot_series(run.directory, "frechet_distance");
  CHECK(fd.size() == 3);
  const auto text = format_plot_rows(rows);
  CHECK(text.rfind("generation,condition,metric,value,ci-low,ci-high\n", 0) == 0);

  const auto out = fresh_dir("plots");
  const auto files = emit_plot_data(run.directory, "ttr", out);
  REQUIRE(files.size() == 1);
  CHECK(fs::exists(files[0]));
  try {
    plot_series(run.directory, "coherence");
    FAIL("expected an error for an unevaluated metric");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("ttr") != std::string::npos);
  }
}

TEST_CASE("invalid configs and incomplete runs leave nothing to read") {
  const auto dir = fresh_dir("bad-config");
  fs::create_directories(dir);
  const auto path = dir / "bad.json";
  std::ofstream(path) << R"({"version": 1, "seed": 1, "output": "out", "conditions": [{"name": "a", "sise": 3}]})";
  CHECK_THROWS_AS(load_experiment_config(path), Error);
  CHECK_FALSE(fs::exists(dir / "out"));
  CHECK_THROWS_AS(load_run_reports(dir), Error);

  // A condition whose chain cannot run is reported, not thrown.
  const auto config = parse_experiment_config(R"({"version": 1, "seed": 1, "conditions": [
      {"name": "too_big", "generations": 1, "size": 500, "source": {"toy": {"documents": 100, "vocabulary": 200}}}]})");
  RunOptions opts;
  opts.out = fresh_dir("run-incomplete");
  const auto run = run_experiment(config, opts);
  CHECK_FALSE(run.complete);
  REQUIRE(run.conditions[0].error.has_value());
  CHECK_THROWS_AS(load_run_reports(run.directory), Error);
}

}
