#include "collapselab/population.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "collapselab/error.hpp"
#include "collapselab/rng.hpp"
#include "collapselab/text.hpp"

namespace collapselab {

Eigen::MatrixXd feature_matrix(const Population& records) {
  if (records.empty()) return {};
  const auto d = records.front().vector.size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(records.size()), d);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].vector.size() != d) throw Error("feature records have mixed dimensions");
    m.row(static_cast<Eigen::Index>(i)) = records[i].vector.transpose();
  }
  return m;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(text::trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(text::trim(cur));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Provenance parse_record_provenance(const std::string& s) {
  if (s == "real") return Provenance::real();
  if (s.rfind("synthetic:", 0) == 0) return Provenance::synthetic_from(std::stoi(s.substr(10)));
  throw Error("bad provenance cell '" + s + "'");
}

}  // namespace

Population parse_population(std::string_view content) {
  std::istringstream in{std::string(content)};
  std::string line;
  if (!std::getline(in, line)) throw Error("empty population file");
  const auto header = split_csv(line);
  std::size_t d = 0;
  while (d < header.size() && header[d] == "x" + std::to_string(d)) ++d;
  if (d == 0) throw Error("population header has no feature columns");
  std::vector<std::string> labels;
  std::size_t col = d;
  while (col < header.size() && header[col].rfind("label:", 0) == 0) labels.push_back(header[col++].substr(6));
  if (header.size() != col + 3 || header[col] != "sex" || header[col + 1] != "age" || header[col + 2] != "provenance")
    throw Error("population header must end with sex,age,provenance");
  Population out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    ++row;
    try {
      const auto cells = split_csv(line);
      if (cells.size() != header.size()) throw Error("wrong column count");
      FeatureRecord r;
      r.vector.resize(static_cast<Eigen::Index>(d));
      for (std::size_t j = 0; j < d; ++j) {
        std::size_t used = 0;
        r.vector[static_cast<Eigen::Index>(j)] = std::stod(cells[j], &used);
        if (used != cells[j].size()) throw Error("bad number '" + cells[j] + "'");
        if (!std::isfinite(r.vector[static_cast<Eigen::Index>(j)])) throw Error("non-finite feature value");
      }
      for (std::size_t l = 0; l < labels.size(); ++l)
        if (cells[d + l] == "1") r.labels.insert(labels[l]);
      r.demographics = {parse_sex(cells[col]), std::stoi(cells[col + 1])};
      if (r.demographics.age < kMinAge || r.demographics.age > kMaxAge) throw Error("age outside [18, 100]");
      r.provenance = parse_record_provenance(cells[col + 2]);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw Error("population row " + std::to_string(row) + ": " + e.what());
    }
  }
  if (out.empty()) throw Error("population file has no records");
  return out;
}

Population load_population(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_population(ss.str());
}

std::string format_population(const Population& records, const std::vector<std::string>& label_names) {
  std::ostringstream out;
  const auto d = records.empty() ? 0 : records.front().vector.size();
  for (Eigen::Index j = 0; j < d; ++j) out << (j ? "," : "") << 'x' << j;
  for (const auto& l : label_names) out << ",label:" << l;
  out << ",sex,age,provenance\n";
  for (const auto& r : records) {
    for (Eigen::Index j = 0; j < d; ++j) out << (j ? "," : "") << fmt(r.vector[j]);
    for (const auto& l : label_names) out << ',' << (r.labels.contains(l) ? 1 : 0);
    out << ',' << to_string(r.demographics.sex) << ',' << r.demographics.age << ','
        << (r.provenance.is_real() ? std::string("real") : "synthetic:" + std::to_string(r.provenance.generation))
        << '\n';
  }
  return out.str();
}

void save_population(const std::filesystem::path& path, const Population& records,
                     const std::vector<std::string>& label_names) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << format_population(records, label_names);
}

std::size_t age_bin(int age) {
  if (age < kMinAge || age > kMaxAge) throw Error("age outside [18, 100]");
  return std::min(kAgeBins - 1, static_cast<std::size_t>((age - kMinAge) / kAgeBinWidth));
}

void DemographicDistribution::validate() const {
  if (!(male_probability >= 0.0 && male_probability <= 1.0)) throw Error("male probability outside [0,1]");
  double s = 0.0;
  for (double p : age_histogram) {
    if (p < 0.0) throw Error("negative age-bin probability");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error("age histogram is not normalized");
}

void AttributeModel::validate(std::size_t expected_components) const {
  if (components.size() != expected_components) throw Error("attribute model does not match the mixture size");
  for (const auto& c : components) c.validate();
}

DemographicDistribution AttributeModel::marginal(const std::vector<double>& weights) const {
  if (weights.size() != components.size()) throw Error("attribute model does not match the mixture size");
  DemographicDistribution out;
  out.male_probability = 0.0;
  out.age_histogram.fill(0.0);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    out.male_probability += weights[k] * components[k].male_probability;
    for (std::size_t b = 0; b < kAgeBins; ++b) out.age_histogram[b] += weights[k] * components[k].age_histogram[b];
  }
  return out;
}

void GaussianMixtureModel::validate() const {
  if (weights.empty() || means.size() != weights.size() || covariances.size() != weights.size())
    throw Error("mixture parameter lists disagree in length");
  double s = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw Error("negative mixture weight");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error("mixture weights do not sum to 1");
  const auto d = means.front().size();
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (means[k].size() != d || covariances[k].rows() != d || covariances[k].cols() != d)
      throw Error("mixture component has wrong dimension");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariances[k], Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0) throw Error("mixture covariance is not positive definite");
  }
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Row-wise log N(x | mean, cov).
Eigen::VectorXd log_density(const Eigen::MatrixXd& rows, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw Error("covariance lost positive definiteness");
  const Eigen::MatrixXd centered = (rows.rowwise() - mean.transpose()).transpose();
  const Eigen::MatrixXd z = llt.matrixL().solve(centered);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double d = static_cast<double>(mean.size());
  return (-0.5 * (z.colwise().squaredNorm().array() + d * kLog2Pi + log_det)).transpose();
}

Eigen::MatrixXd component_log_joint(const GaussianMixtureModel& gmm, const Eigen::MatrixXd& rows) {
  Eigen::MatrixXd lj(rows.rows(), static_cast<Eigen::Index>(gmm.components()));
  for (std::size_t k = 0; k < gmm.components(); ++k)
    lj.col(static_cast<Eigen::Index>(k)) =
        log_density(rows, gmm.means[k], gmm.covariances[k]).array() + std::log(gmm.weights[k]);
  return lj;
}

Eigen::VectorXd log_sum_exp_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    out[i] = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

Eigen::MatrixXd floored(Eigen::MatrixXd cov) {
  cov = 0.5 * (cov + cov.transpose());
  cov.diagonal().array() += kCovarianceFloor;
  return cov;
}

void m_step(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& resp, GaussianMixtureModel& gmm) {
  const auto n = static_cast<double>(rows.rows());
  const auto m = static_cast<std::size_t>(resp.cols());
  gmm.weights.assign(m, 0.0);
  gmm.means.assign(m, Eigen::VectorXd::Zero(rows.cols()));
  gmm.covariances.assign(m, Eigen::MatrixXd::Zero(rows.cols(), rows.cols()));
  for (std::size_t k = 0; k < m; ++k) {
    const auto col = resp.col(static_cast<Eigen::Index>(k));
    const double nk = col.sum();
    if (nk <= 0.0) throw Error("mixture component lost all responsibility");
    gmm.weights[k] = nk / n;
    gmm.means[k] = (rows.transpose() * col) / nk;
    const Eigen::MatrixXd centered = rows.rowwise() - gmm.means[k].transpose();
    gmm.covariances[k] = floored((centered.array().colwise() * col.array()).matrix().transpose() * centered / nk);
  }
  // Keep the simplex exact despite rounding.
  const double s = std::accumulate(gmm.weights.begin(), gmm.weights.end(), 0.0);
  for (double& w : gmm.weights) w /= s;
}

// k-means++ seeding followed by a few Lloyd iterations; returns hard
// responsibilities.
Eigen::MatrixXd kmeans_init(const Eigen::MatrixXd& rows, std::size_t m, Rng& rng) {
  const auto n = static_cast<std::size_t>(rows.rows());
  std::vector<Eigen::VectorXd> centres;
  centres.push_back(rows.row(static_cast<Eigen::Index>(rng.index(n))).transpose());
  std::vector<double> d2(n);
  while (centres.size() < m) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centres) best = std::min(best, (rows.row(static_cast<Eigen::Index>(i)).transpose() - c).squaredNorm());
      d2[i] = best;
    }
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    const std::size_t pick = total > 0.0 ? rng.categorical(d2) : rng.index(n);
    centres.push_back(rows.row(static_cast<Eigen::Index>(pick)).transpose());
  }
  std::vector<std::size_t> assign(n, 0);
  for (int iter = 0; iter < 10; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < m; ++k) {
        const double dist = (rows.row(static_cast<Eigen::Index>(i)).transpose() - centres[k]).squaredNorm();
        if (dist < best) {
          best = dist;
          assign[i] = k;
        }
      }
    }
    std::vector<Eigen::VectorXd> sums(m, Eigen::VectorXd::Zero(rows.cols()));
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums[assign[i]] += rows.row(static_cast<Eigen::Index>(i)).transpose();
      ++counts[assign[i]];
    }
    for (std::size_t k = 0; k < m; ++k) {
      if (counts[k] == 0) {
        // Re-seed an empty cluster at a random record.
        const auto i = rng.index(n);
        centres[k] = rows.row(static_cast<Eigen::Index>(i)).transpose();
        assign[i] = k;
      } else {
        centres[k] = sums[k] / static_cast<double>(counts[k]);
      }
    }
  }
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < n; ++i) resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(assign[i])) = 1.0;
  // Every component keeps a sliver of every record so no column is empty.
  resp.array() = resp.array() * (1.0 - 1e-6) + 1e-6 / static_cast<double>(m);
  return resp;
}

}  // namespace

double GaussianMixtureModel::mean_log_likelihood(const Eigen::MatrixXd& rows) const {
  return log_sum_exp_rows(component_log_joint(*this, rows)).mean();
}

EmFit fit_population_model(const Population& records, const EmOptions& options) {
  if (options.components == 0) throw Error("mixture needs at least one component");
  const Eigen::MatrixXd rows = feature_matrix(records);
  const auto n = static_cast<std::size_t>(rows.rows());
  const auto d = static_cast<std::size_t>(rows.cols());
  if (d == 0) throw Error("feature dimension must be at least 1");
  if (n < options.components * (d + 1))
    throw Error("need at least m*(d+1) = " + std::to_string(options.components * (d + 1)) + " records, got " +
                std::to_string(n));
  if (!rows.allFinite()) throw Error("non-finite feature value");

  EmFit fit;
  Rng rng(derive_seed(options.seed, 0xE3));
  Eigen::MatrixXd resp = options.components == 1 ? Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), 1)
                                                 : kmeans_init(rows, options.components, rng);
  m_step(rows, resp, fit.gmm);
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    const Eigen::MatrixXd lj = component_log_joint(fit.gmm, rows);
    const Eigen::VectorXd lse = log_sum_exp_rows(lj);
    const double ll = lse.mean();
    fit.log_likelihood_trace.push_back(ll);
    if (fit.log_likelihood_trace.size() >= 2) {
      const double prev = fit.log_likelihood_trace[fit.log_likelihood_trace.size() - 2];
      if (ll - prev < options.tolerance) {
        fit.converged = true;
        break;
      }
    }
    if (options.components == 1) {
      fit.converged = true;
      break;
    }
    resp = (lj.colwise() - lse).array().exp();
    m_step(rows, resp, fit.gmm);
  }

  // Demographics per component from the final soft assignments.
  {
    const Eigen::MatrixXd lj = component_log_joint(fit.gmm, rows);
    resp = (lj.colwise() - log_sum_exp_rows(lj)).array().exp();
  }
  const std::size_t m = options.components;
  fit.attributes.components.assign(m, DemographicDistribution{0.0, {}});
  std::vector<double> mass(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& demo = records[i].demographics;
    const std::size_t bin = age_bin(demo.age);
    for (std::size_t k = 0; k < m; ++k) {
      const double w = resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      mass[k] += w;
      if (demo.sex == Sex::Male) fit.attributes.components[k].male_probability += w;
      fit.attributes.components[k].age_histogram[bin] += w;
    }
  }
  for (std::size_t k = 0; k < m; ++k) {
    auto& c = fit.attributes.components[k];
    c.male_probability = std::clamp(c.male_probability / mass[k], 0.0, 1.0);
    double total = 0.0;
    for (double v : c.age_histogram) total += v;
    for (double& v : c.age_histogram) v /= total;
  }
  return fit;
}

namespace {

std::vector<double> sharpen(std::span<const double> p, double temperature) {
  std::vector<double> out(p.begin(), p.end());
  if (temperature == 1.0) return out;
  double s = 0.0;
  for (double& v : out) {
    v = v > 0.0 ? std::pow(v, 1.0 / temperature) : 0.0;
    s += v;
  }
  for (double& v : out) v /= s;
  return out;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace

Population sample_population(const GaussianMixtureModel& gmm, const AttributeModel& attributes, std::size_t n,
                             std::uint64_t seed, int generation, const PopulationSamplerConfig& config) {
  if (!(config.temperature > 0.0 && config.temperature <= 1.0))
    throw Error("population sampling temperature must lie in (0, 1]");
  gmm.validate();
  attributes.validate(gmm.components());
  const auto prov = Provenance::synthetic_from(generation);
  const auto weights = sharpen(gmm.weights, config.temperature);
  std::vector<double> male;
  std::vector<std::vector<double>> ages;
  for (const auto& c : attributes.components) {
    const std::array<double, 2> sex_raw = {c.male_probability, 1.0 - c.male_probability};
    male.push_back(sharpen(sex_raw, config.temperature)[0]);
    ages.push_back(sharpen(c.age_histogram, config.temperature));
  }
  std::vector<Eigen::MatrixXd> roots;
  for (const auto& c : gmm.covariances) roots.push_back(psd_sqrt(c * config.temperature));

  const auto d = static_cast<Eigen::Index>(gmm.dimension());
  Population out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    const std::size_t k = rng.categorical(weights);
    Eigen::VectorXd z(d);
    for (Eigen::Index j = 0; j < d; ++j) z[j] = rng.normal();
    FeatureRecord r;
    r.vector = gmm.means[k] + roots[k] * z;
    r.demographics.sex = rng.uniform() < male[k] ? Sex::Male : Sex::Female;
    const std::size_t bin = rng.categorical(ages[k]);
    const int lo = kMinAge + static_cast<int>(bin) * kAgeBinWidth;
    const int hi = bin + 1 == kAgeBins ? kMaxAge : lo + kAgeBinWidth - 1;
    r.demographics.age = lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1)));
    r.provenance = prov;
    out.push_back(std::move(r));
  }
  return out;
}

std::string serialize_population_model(const GaussianMixtureModel& gmm, const AttributeModel& attributes) {
  std::ostringstream out;
  out << "collapselab-population 1\ncomponents " << gmm.components() << "\ndimension " << gmm.dimension() << '\n';
  for (std::size_t k = 0; k < gmm.components(); ++k) {
    out << "weight " << fmt(gmm.weights[k]) << "\nmean";
    for (Eigen::Index j = 0; j < gmm.means[k].size(); ++j) out << ' ' << fmt(gmm.means[k][j]);
    out << "\ncovariance";
    for (Eigen::Index r = 0; r < gmm.covariances[k].rows(); ++r)
      for (Eigen::Index c = 0; c < gmm.covariances[k].cols(); ++c) out << ' ' << fmt(gmm.covariances[k](r, c));
    out << "\nmale " << fmt(attributes.components.at(k).male_probability) << "\nages";
    for (double p : attributes.components[k].age_histogram) out << ' ' << fmt(p);
    out << '\n';
  }
  return out.str();
}

std::pair<GaussianMixtureModel, AttributeModel> deserialize_population_model(std::string_view data) {
  std::istringstream in{std::string(data)};
  std::string word;
  int version = 0;
  in >> word >> version;
  if (word != "collapselab-population" || version != 1) throw Error("not a collapselab population snapshot (v1)");
  std::size_t m = 0, d = 0;
  auto expect = [&](const char* key) {
    if (!(in >> word) || word != key) throw Error(std::string("population snapshot: expected '") + key + "'");
  };
  expect("components");
  in >> m;
  expect("dimension");
  in >> d;
  GaussianMixtureModel gmm;
  AttributeModel attrs;
  const auto di = static_cast<Eigen::Index>(d);
  for (std::size_t k = 0; k < m; ++k) {
    double w = 0.0;
    expect("weight");
    in >> w;
    gmm.weights.push_back(w);
    expect("mean");
    Eigen::VectorXd mu(di);
    for (Eigen::Index j = 0; j < di; ++j) in >> mu[j];
    gmm.means.push_back(mu);
    expect("covariance");
    Eigen::MatrixXd cov(di, di);
    for (Eigen::Index r = 0; r < di; ++r)
      for (Eigen::Index c = 0; c < di; ++c) in >> cov(r, c);
    gmm.covariances.push_back(cov);
    DemographicDistribution demo;
    expect("male");
    in >> demo.male_probability;
    expect("ages");
    for (double& p : demo.age_histogram) in >> p;
    attrs.components.push_back(demo);
  }
  if (!in) throw Error("population snapshot truncated");
  return {gmm, attrs};
}

Population synthesize_toy_population(const ToyFeatureSpec& spec) {
  if (spec.dimension == 0 || spec.clusters == 0) throw Error("toy population needs d >= 1 and clusters >= 1");
  if (spec.cluster_weights.size() != spec.clusters) throw Error("cluster weight count != clusters");
  for (const auto& [name, prev] : spec.labels)
    if (prev.size() != spec.clusters) throw Error("label '" + name + "' needs one prevalence per cluster");
  if (spec.cluster_male_fraction.size() != spec.clusters || spec.cluster_age_mean.size() != spec.clusters ||
      spec.cluster_age_sd.size() != spec.clusters)
    throw Error("toy population needs per-cluster demographics for every cluster");
  Rng rng(derive_seed(spec.seed, 0xFEA7));
  const auto d = static_cast<Eigen::Index>(spec.dimension);
  std::vector<Eigen::VectorXd> centres;
  std::vector<double> scales;
  for (std::size_t k = 0; k < spec.clusters; ++k) {
    Eigen::VectorXd c(d);
    for (Eigen::Index j = 0; j < d; ++j) c[j] = rng.normal(0.0, spec.cluster_spread);
    centres.push_back(c);
    scales.push_back(0.6 + 0.8 * rng.uniform());
  }
  Population out;
  out.reserve(spec.records);
  for (std::size_t i = 0; i < spec.records; ++i) {
    const std::size_t k = rng.categorical(spec.cluster_weights);
    FeatureRecord r;
    r.vector.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) r.vector[j] = centres[k][j] + scales[k] * rng.normal();
    for (const auto& [name, prev] : spec.labels)
      if (rng.bernoulli(prev[k])) r.labels.insert(name);
    r.demographics.sex = rng.bernoulli(spec.cluster_male_fraction[k]) ? Sex::Male : Sex::Female;
    r.demographics.age = std::clamp(
        static_cast<int>(std::lround(rng.normal(spec.cluster_age_mean[k], spec.cluster_age_sd[k]))), kMinAge, kMaxAge);
    r.provenance = Provenance::real();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace collapselab
