#include "collapselab/imagemetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "collapselab/error.hpp"
#include "collapselab/rng.hpp"
#include "collapselab/stats.hpp"

namespace collapselab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd sample_covariance(const MatrixXd& rows) {
  if (rows.rows() < 2) throw Error("covariance needs at least two records");
  const MatrixXd centered = rows.rowwise() - rows.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
}

namespace {

MatrixXd psd_sqrt(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const VectorXd& mean_a, const MatrixXd& cov_a, const VectorXd& mean_b, const MatrixXd& cov_b) {
  const Index d = mean_a.size();
  if (mean_b.size() != d || cov_a.rows() != d || cov_a.cols() != d || cov_b.rows() != d || cov_b.cols() != d)
    throw Error("Frechet distance inputs differ in dimension");
  const MatrixXd ra = psd_sqrt(cov_a);
  const MatrixXd inner = ra * cov_b * ra;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fd = (mean_a - mean_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
  return std::max(fd, 0.0);
}

double frechet_distance(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols()) throw Error("Frechet distance inputs differ in dimension");
  if (a.rows() <= a.cols() || b.rows() <= b.cols())
    throw Error("Frechet distance needs more records than dimensions");
  return frechet_distance(a.colwise().mean().transpose(), sample_covariance(a), b.colwise().mean().transpose(),
                          sample_covariance(b));
}

namespace {

MatrixXd resample(const MatrixXd& pool, std::size_t n, Rng& rng) {
  MatrixXd out(static_cast<Index>(n), pool.cols());
  for (std::size_t i = 0; i < n; ++i)
    out.row(static_cast<Index>(i)) = pool.row(static_cast<Index>(rng.index(static_cast<std::size_t>(pool.rows()))));
  return out;
}

}  // namespace

BootstrapPreset bootstrap_preset(std::string_view name) {
  if (name == "images") return kBootstrapImages;
  if (name == "statistics") return kBootstrapStatistics;
  throw Error("unknown bootstrap preset '" + std::string(name) + "' (expected images or statistics)");
}

BootstrapEstimate bootstrap_frechet(const MatrixXd& real, const MatrixXd& synthetic, std::size_t n_per_condition,
                                    std::size_t iterations, std::uint64_t seed) {
  if (iterations < 2) throw Error("bootstrap Frechet needs at least two iterations");
  if (static_cast<std::size_t>(real.rows()) < n_per_condition ||
      static_cast<std::size_t>(synthetic.rows()) < n_per_condition)
    throw Error("bootstrap Frechet pools are smaller than the per-condition sample size");
  BootstrapEstimate est;
  for (std::size_t it = 0; it < iterations; ++it) {
    Rng rng(derive_seed(seed, it));
    const MatrixXd a = resample(real, n_per_condition, rng);
    const MatrixXd b = resample(synthetic, n_per_condition, rng);
    est.values.push_back(frechet_distance(a, b));
  }
  est.mean = stats::mean(est.values);
  est.sd = stats::stddev(est.values);
  return est;
}

LossGradient logistic_loss(const MatrixXd& x, const VectorXd& y, const VectorXd& w, double b, double l2) {
  const auto n = static_cast<double>(x.rows());
  const VectorXd z = (x * w).array() + b;
  LossGradient out;
  VectorXd residual(z.size());
  double loss = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    // log(1 + e^z) - y z, computed stably
    const double zi = z[i];
    const double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    loss += softplus - y[i] * zi;
    const double p = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
    residual[i] = p - y[i];
  }
  out.loss = loss / n + 0.5 * l2 * w.squaredNorm();
  out.grad_w = x.transpose() * residual / n + l2 * w;
  out.grad_b = residual.sum() / n;
  return out;
}

const LabelProbe* ProbeClassifier::probe(const std::string& label) const {
  for (const auto& p : probes)
    if (p.label == label) return &p;
  return nullptr;
}

MatrixXd ProbeClassifier::standardize(const MatrixXd& rows) const {
  if (rows.cols() != feature_mean.size()) throw Error("probe input dimension mismatch");
  return (rows.rowwise() - feature_mean.transpose()).array().rowwise() / feature_scale.transpose().array();
}

MatrixXd ProbeClassifier::probabilities(const MatrixXd& rows) const {
  const MatrixXd x = standardize(rows);
  MatrixXd out(rows.rows(), static_cast<Index>(probes.size()));
  for (std::size_t j = 0; j < probes.size(); ++j) {
    const VectorXd z = (x * probes[j].weights).array() + probes[j].bias;
    out.col(static_cast<Index>(j)) = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  }
  return out;
}

ProbeClassifier train_probe(const MatrixXd& features, const std::vector<std::set<std::string>>& labels,
                            const std::vector<std::string>& label_names, const ProbeOptions& options,
                            std::uint64_t seed) {
  if (features.rows() != static_cast<Index>(labels.size())) throw Error("probe features and labels differ in length");
  if (features.rows() < 2) throw Error("probe needs at least two records");
  if (!(options.learning_rate > 0.0) || options.epochs == 0) throw Error("probe options invalid");
  ProbeClassifier pc;
  pc.feature_mean = features.colwise().mean().transpose();
  pc.feature_scale = sample_covariance(features).diagonal().cwiseSqrt();
  for (Index j = 0; j < pc.feature_scale.size(); ++j)
    if (!(pc.feature_scale[j] > 0.0)) pc.feature_scale[j] = 1.0;
  const MatrixXd x = pc.standardize(features);
  Rng rng(seed);
  for (const auto& name : label_names) {
    LabelProbe p;
    p.label = name;
    VectorXd y(x.rows());
    for (Index i = 0; i < x.rows(); ++i) y[i] = labels[static_cast<std::size_t>(i)].contains(name) ? 1.0 : 0.0;
    p.weights = VectorXd::Zero(x.cols());
    for (Index j = 0; j < x.cols(); ++j) p.weights[j] = 0.01 * rng.normal();
    const double positives = y.sum();
    if (positives == 0.0 || positives == static_cast<double>(y.size())) {
      p.skipped = true;
      pc.probes.push_back(std::move(p));
      continue;
    }
    for (std::size_t e = 0; e < options.epochs; ++e) {
      const auto g = logistic_loss(x, y, p.weights, p.bias, options.l2);
      p.loss_trace.push_back(g.loss);
      p.weights -= options.learning_rate * g.grad_w;
      p.bias -= options.learning_rate * g.grad_b;
    }
    p.loss_trace.push_back(logistic_loss(x, y, p.weights, p.bias, options.l2).loss);
    pc.probes.push_back(std::move(p));
  }
  return pc;
}

ProbeClassifier train_probe(const Population& records, const std::vector<std::string>& label_names,
                            const ProbeOptions& options, std::uint64_t seed) {
  std::vector<std::set<std::string>> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.labels);
  return train_probe(feature_matrix(records), labels, label_names, options, seed);
}

std::map<std::string, PrevalenceEntry> probe_prevalence(const ProbeClassifier& probe, const MatrixXd& features,
                                                        double threshold) {
  std::map<std::string, PrevalenceEntry> out;
  if (features.rows() == 0) return out;
  const MatrixXd p = probe.probabilities(features);
  for (std::size_t j = 0; j < probe.probes.size(); ++j) {
    if (probe.probes[j].skipped) continue;
    const auto col = p.col(static_cast<Index>(j));
    PrevalenceEntry e;
    e.mean_probability = col.mean();
    e.positives = static_cast<std::size_t>((col.array() > threshold).count());
    out[probe.probes[j].label] = e;
  }
  return out;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error("AUROC scores and labels differ in length");
  const auto ranks = stats::midranks(scores);
  double rank_sum = 0.0, pos = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error("AUROC labels must be 0 or 1");
    if (labels[i] == 1) {
      rank_sum += ranks[i];
      pos += 1.0;
    }
  }
  const double neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw UndefinedError("AUROC needs both classes");
  const double u = rank_sum - pos * (pos + 1.0) / 2.0;
  return u / (pos * neg);
}

MatrixXd composite_embedding(const MatrixXd& rows) {
  const Index d = rows.cols();
  if (d < 2) throw Error("composite embedding needs at least two feature dimensions");
  MatrixXd out(rows.rows(), d + 2);
  out.leftCols(d) = rows;
  for (Index i = 0; i < rows.rows(); ++i) {
    const auto r = rows.row(i);
    const double mu = r.mean();
    out(i, d) = (r.array() - mu).square().mean();
    out(i, d + 1) = (r.tail(d - 1) - r.head(d - 1)).cwiseAbs().mean();
  }
  return out;
}

MahalanobisReference::MahalanobisReference(const MatrixXd& reference) {
  if (reference.rows() < reference.cols() + 1) throw Error("Mahalanobis reference needs more records than dimensions");
  mean_ = reference.colwise().mean().transpose();
  MatrixXd cov = sample_covariance(reference);
  cov.diagonal().array() += kCovarianceFloor;
  llt_.compute(cov);
  if (llt_.info() != Eigen::Success) throw Error("Mahalanobis reference covariance is singular");
}

VectorXd MahalanobisReference::distances(const MatrixXd& candidates) const {
  if (candidates.cols() != mean_.size()) throw Error("Mahalanobis candidate dimension mismatch");
  const MatrixXd centered = (candidates.rowwise() - mean_.transpose()).transpose();
  const MatrixXd z = llt_.matrixL().solve(centered);
  return z.colwise().norm().transpose();
}

VectorXd mahalanobis_scores(const MatrixXd& candidates, const MatrixXd& reference) {
  return MahalanobisReference(reference).distances(candidates);
}

double DemographicSummary::male_fraction() const {
  const auto known = male + female;
  return known ? static_cast<double>(male) / static_cast<double>(known) : 0.0;
}

DemographicSummary demographic_summary(const Population& records) {
  DemographicSummary s;
  for (const auto& r : records) {
    if (r.demographics.sex == Sex::Male)
      ++s.male;
    else
      ++s.female;
    s.ages.push_back(static_cast<double>(r.demographics.age));
  }
  return s;
}

DemographicDrift demographic_drift(const DemographicSummary& baseline, const DemographicSummary& current) {
  if (baseline.ages.empty() || current.ages.empty()) throw Error("demographic drift needs non-empty cohorts");
  DemographicDrift d;
  d.age_wasserstein = stats::wasserstein1(baseline.ages, current.ages);
  d.male_fraction = current.male_fraction();
  const double p = baseline.male_fraction();
  if (p <= 0.0 || p >= 1.0) throw Error("baseline cohort has a single sex; chi-square undefined");
  const std::vector<double> observed = {static_cast<double>(current.male), static_cast<double>(current.female)};
  const std::vector<double> props = {p, 1.0 - p};
  const auto chi = stats::chi_square_gof(observed, props);
  d.gender_chi_square = chi.statistic;
  d.gender_p_value = chi.p_value;
  return d;
}

}  // namespace collapselab
