#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "collapselab/population.hpp"

namespace collapselab {

// Sample covariance (n - 1 denominator) of the rows.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& rows);

// FD between two Gaussians. The square root term uses the symmetrised
// product sqrt(A) B sqrt(A), whose eigenvalues are clipped at zero.
double frechet_distance(const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mean_b,
                        const Eigen::MatrixXd& cov_b);
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct BootstrapEstimate {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> values;
};

BootstrapEstimate bootstrap_frechet(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synthetic,
                                    std::size_t n_per_condition, std::size_t iterations, std::uint64_t seed);

// Two conflicting per-condition sample sizes are in use, 5,534 and 1,384.
// Both ship; neither is the default.
struct BootstrapPreset {
  std::size_t n_per_condition;
  std::size_t iterations;
};
inline constexpr BootstrapPreset kBootstrapImages{5534, 10};
inline constexpr BootstrapPreset kBootstrapStatistics{1384, 10};
// "images" or "statistics"; anything else throws.
BootstrapPreset bootstrap_preset(std::string_view name);

struct ProbeOptions {
  double learning_rate = 0.5;
  std::size_t epochs = 400;
  double l2 = 0.0;
};

struct LabelProbe {
  std::string label;
  Eigen::VectorXd weights;
  double bias = 0.0;
  std::vector<double> loss_trace;
  bool skipped = false;  // only one class present in training data
};

// Logistic probes over standardised features, one per label.
struct ProbeClassifier {
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;
  std::vector<LabelProbe> probes;

  const LabelProbe* probe(const std::string& label) const;
  Eigen::MatrixXd standardize(const Eigen::MatrixXd& rows) const;
  // Rows = records, columns follow `probes`.
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& rows) const;
};

struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd grad_w;
  double grad_b = 0.0;
};

// Mean binary cross-entropy plus (l2/2)|w|^2.
LossGradient logistic_loss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double b,
                           double l2 = 0.0);

ProbeClassifier train_probe(const Eigen::MatrixXd& features, const std::vector<std::set<std::string>>& labels,
                            const std::vector<std::string>& label_names, const ProbeOptions& options,
                            std::uint64_t seed);
ProbeClassifier train_probe(const Population& records, const std::vector<std::string>& label_names,
                            const ProbeOptions& options, std::uint64_t seed);

struct PrevalenceEntry {
  double mean_probability = 0.0;
  std::size_t positives = 0;
};

// Positive means probability strictly above the threshold. Skipped probes
// are omitted.
std::map<std::string, PrevalenceEntry> probe_prevalence(const ProbeClassifier& probe, const Eigen::MatrixXd& features,
                                                        double threshold = 0.5);

// Probability that a random positive outranks a random negative, ties 1/2.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Features followed by each record's coordinate variance and mean absolute
// first difference (stand-ins for contrast and edge content).
Eigen::MatrixXd composite_embedding(const Eigen::MatrixXd& rows);

class MahalanobisReference {
 public:
  explicit MahalanobisReference(const Eigen::MatrixXd& reference);
  Eigen::VectorXd distances(const Eigen::MatrixXd& candidates) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

Eigen::VectorXd mahalanobis_scores(const Eigen::MatrixXd& candidates, const Eigen::MatrixXd& reference);

struct DemographicSummary {
  std::size_t male = 0;
  std::size_t female = 0;
  std::vector<double> ages;

  double male_fraction() const;
};

DemographicSummary demographic_summary(const Population& records);

struct DemographicDrift {
  double age_wasserstein = 0.0;
  double male_fraction = 0.0;
  double gender_chi_square = 0.0;
  double gender_p_value = 1.0;
};

// Age drift by Wasserstein-1; sex counts tested against the baseline male
// share.
DemographicDrift demographic_drift(const DemographicSummary& baseline, const DemographicSummary& current);

}  // namespace collapselab
