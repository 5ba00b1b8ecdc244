#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "collapselab/corpus.hpp"
#include "collapselab/population.hpp"
#include "collapselab/recursion.hpp"

namespace collapselab {

inline constexpr int kConfigVersion = 1;
inline constexpr int kReportVersion = 1;
inline constexpr const char* kToolVersion = "0.3.0";

struct MetricValue {
  double value = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
};

struct GenerationMetrics {
  std::uint64_t seed = 0;
  int generation = 0;
  std::map<std::string, MetricValue> metrics;
};

struct TextSource {
  std::filesystem::path corpus;  // empty = toy corpus
  CorpusFormat format = CorpusFormat::LineRecord;
  ToyPopulationSpec toy;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
  std::uint64_t split_seed = 7;
};

struct PopulationSource {
  std::filesystem::path file;  // empty = toy population
  ToyFeatureSpec toy;
};

struct ConditionConfig {
  std::string name;
  ChainConfig chain;
  std::vector<std::uint64_t> seeds;  // one chain per seed
  TextSource text_source;
  PopulationSource population_source;
  std::set<std::string> metrics;  // empty = every metric of the kernel
  std::size_t bootstrap_n = 1000;
  std::size_t bootstrap_iterations = 10;
  std::size_t safety_cases = 200;
  std::string block_hash;  // of this condition's JSON block; stamped on decision logs
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output;
  std::vector<ConditionConfig> conditions;
  std::string canonical;  // normalised JSON the hash is computed over
};

// Strict JSON config: unknown keys and version mismatches are errors.
// Relative paths resolve against `base_dir`.
ExperimentConfig parse_experiment_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string config_hash(const ExperimentConfig& config);

// Metric names each kernel can report, with the module and operation that
// produce them.
struct MetricOrigin {
  std::string module;
  std::string operation;
  std::string input;
};
const std::map<std::string, MetricOrigin>& text_metric_catalog();
const std::map<std::string, MetricOrigin>& population_metric_catalog();

struct ConditionResult {
  std::string name;
  std::vector<GenerationMetrics> rows;
  std::optional<std::string> error;
  std::vector<std::filesystem::path> artifacts;
};

// Runs every seed of the condition. When `artifact_dir` is non-empty each
// generation writes its model, synthetic output, composition and metrics.
ConditionResult run_condition(const ConditionConfig& condition, const std::filesystem::path& artifact_dir = {});

enum class ReportFormat { Csv, Jsonl };
ReportFormat parse_report_format(std::string_view s);

std::string format_report(const ConditionResult& result, ReportFormat format);

struct RunOptions {
  std::filesystem::path out;  // overrides the config's output directory
  std::size_t workers = 1;
  ReportFormat format = ReportFormat::Csv;
  std::optional<std::uint64_t> seed;  // overrides the master seed
  bool write_generation_artifacts = true;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t master_seed = 0;
  bool complete = false;
  double wall_clock_seconds = 0.0;
  std::vector<ConditionResult> conditions;
  std::filesystem::path directory;
};

// Honours COLLAPSELAB_DETERMINISTIC=1 by forcing a single worker.
RunManifest run_experiment(const ExperimentConfig& config, const RunOptions& options);

// Applies a --seed override: conditions without explicit seeds follow the
// master seed.
ExperimentConfig with_master_seed(ExperimentConfig config, std::uint64_t seed);

struct PlotRow {
  int generation = 0;
  std::string condition;
  std::string metric;
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

// Reads the condition reports of a run directory and aggregates each metric
// per generation across seeds (mean, 95% bootstrap interval of the mean;
// Frechet rows carry mean -/+ sd for single-seed runs).
std::vector<PlotRow> plot_series(const std::filesystem::path& run_dir, const std::string& metric);
std::string format_plot_rows(const std::vector<PlotRow>& rows);
// Named figure panels map to metric lists; any metric name is also a panel.
std::vector<std::string> panel_metrics(const std::string& panel);
std::vector<std::filesystem::path> emit_plot_data(const std::filesystem::path& run_dir, const std::string& panel,
                                                  const std::filesystem::path& out_dir);

// Loaded condition report rows, keyed by condition name.
std::map<std::string, std::vector<GenerationMetrics>> load_run_reports(const std::filesystem::path& run_dir);

}  // namespace collapselab
