#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "collapselab/corpus.hpp"

namespace collapselab {

// One image stand-in: a feature vector plus labels and demographics.
struct FeatureRecord {
  Eigen::VectorXd vector;
  std::set<std::string> labels;
  Demographics demographics;
  Provenance provenance;
};

using Population = std::vector<FeatureRecord>;

// Rows = records.
Eigen::MatrixXd feature_matrix(const Population& records);

// Columnar text format: header "x0,...,x{d-1},label:<name>...,sex,age,provenance".
Population parse_population(std::string_view content);
Population load_population(const std::filesystem::path& path);
std::string format_population(const Population& records, const std::vector<std::string>& label_names);
void save_population(const std::filesystem::path& path, const Population& records,
                     const std::vector<std::string>& label_names);

inline constexpr double kCovarianceFloor = 1e-6;

struct GaussianMixtureModel {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;

  std::size_t components() const { return weights.size(); }
  std::size_t dimension() const { return means.empty() ? 0 : static_cast<std::size_t>(means.front().size()); }
  void validate() const;
  // Mean per-record log-likelihood.
  double mean_log_likelihood(const Eigen::MatrixXd& rows) const;
};

// Age bins of 5 years starting at 18; the last bin is [98, 100].
inline constexpr int kAgeBinWidth = 5;
inline constexpr std::size_t kAgeBins = 17;
std::size_t age_bin(int age);

struct DemographicDistribution {
  double male_probability = 0.5;
  std::array<double, kAgeBins> age_histogram{};

  void validate() const;
};

// Sex and age conditioned on the mixture component, so a record's
// demographics travel with its phenotype.
struct AttributeModel {
  std::vector<DemographicDistribution> components;

  void validate(std::size_t expected_components) const;
  // Mixture-weighted marginal.
  DemographicDistribution marginal(const std::vector<double>& weights) const;
};

struct EmFit {
  GaussianMixtureModel gmm;
  AttributeModel attributes;
  std::vector<double> log_likelihood_trace;  // mean per-record, one entry per iteration
  bool converged = false;
};

struct EmOptions {
  std::size_t components = 4;
  double tolerance = 1e-6;
  std::size_t max_iterations = 200;
  std::uint64_t seed = 0;
};

EmFit fit_population_model(const Population& records, const EmOptions& options);

// Temperature 1 samples the fitted models exactly. Below 1, covariances are
// scaled by the temperature and the component weights, sex probabilities and
// age histogram are sharpened (p^(1/T), renormalized): the population
// analogue of low-temperature decoding.
struct PopulationSamplerConfig {
  double temperature = 1.0;
};

Population sample_population(const GaussianMixtureModel& gmm, const AttributeModel& attributes, std::size_t n,
                             std::uint64_t seed, int generation, const PopulationSamplerConfig& config = {});

std::string serialize_population_model(const GaussianMixtureModel& gmm, const AttributeModel& attributes);
std::pair<GaussianMixtureModel, AttributeModel> deserialize_population_model(std::string_view data);

// Seeded feature population standing in for an image cohort: m Gaussian
// clusters, labels tied to cluster membership with per-cluster prevalence,
// demographics from the baseline cohort.
struct ToyFeatureSpec {
  std::size_t dimension = 16;
  std::size_t clusters = 4;
  std::size_t records = 5000;
  double cluster_spread = 3.0;  // sd of cluster centres around the origin
  std::vector<double> cluster_weights = {0.4, 0.3, 0.2, 0.1};
  // label -> per-cluster prevalence
  std::vector<std::pair<std::string, std::vector<double>>> labels = {
      {"cardiomegaly", {0.8, 0.6, 0.5, 0.4}},
      {"effusion", {0.6, 0.7, 0.5, 0.4}},
      {"atelectasis", {0.5, 0.6, 0.6, 0.4}},
      {"consolidation", {0.05, 0.05, 0.1, 0.7}},
  };
  // Per-cluster demographics; the largest cluster is the male-leaning,
  // middle-aged majority phenotype. Marginals: 53.2% male, age ~64.8 +/- 17.
  std::vector<double> cluster_male_fraction = {0.61, 0.50, 0.48, 0.42};
  std::vector<double> cluster_age_mean = {60.0, 68.0, 66.0, 72.0};
  std::vector<double> cluster_age_sd = {14.0, 17.0, 18.0, 20.0};
  std::uint64_t seed = 42;
};

Population synthesize_toy_population(const ToyFeatureSpec& spec);

}  // namespace collapselab
