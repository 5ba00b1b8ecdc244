#include "collapselab/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "collapselab/error.hpp"
#include "collapselab/imagemetrics.hpp"
#include "collapselab/text.hpp"

namespace collapselab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

HashedEmbedder::HashedEmbedder(std::size_t dimension, int max_n)
    : dimension_(dimension), max_n_(max_n), idf_(VectorXd::Ones(static_cast<Index>(dimension))) {
  if (dimension == 0) throw Error("embedding dimension must be positive");
  if (max_n < 1) throw Error("embedding n-gram order must be at least 1");
}

std::size_t HashedEmbedder::bucket(std::string_view gram) const { return fnv1a(gram) % dimension_; }

void HashedEmbedder::add_grams(const std::vector<std::string>& words, VectorXd& out, bool presence) const {
  std::string gram;
  for (int n = 1; n <= max_n_; ++n) {
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + un <= words.size(); ++i) {
      gram.clear();
      for (std::size_t j = 0; j < un; ++j) {
        if (j) gram += ' ';
        gram += words[i + j];
      }
      const auto b = static_cast<Index>(bucket(gram));
      if (presence)
        out[b] = 1.0;
      else
        out[b] += 1.0;
    }
  }
}

void HashedEmbedder::fit_idf(const std::vector<Document>& reference) {
  if (reference.empty()) throw Error("IDF needs a non-empty reference pool");
  VectorXd df = VectorXd::Zero(static_cast<Index>(dimension_));
  VectorXd seen(static_cast<Index>(dimension_));
  for (const auto& d : reference) {
    seen.setZero();
    add_grams(d.words(), seen, true);
    df += seen;
  }
  const auto n = static_cast<double>(reference.size());
  for (Index b = 0; b < df.size(); ++b) idf_[b] = std::log((1.0 + n) / (1.0 + df[b])) + 1.0;
}

VectorXd HashedEmbedder::embed(const std::vector<std::string>& words) const {
  VectorXd v = VectorXd::Zero(static_cast<Index>(dimension_));
  add_grams(words, v, false);
  v = v.cwiseProduct(idf_);
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

MatrixXd HashedEmbedder::embed(const std::vector<Document>& documents, std::vector<bool>* empty_flags) const {
  MatrixXd out(static_cast<Index>(documents.size()), static_cast<Index>(dimension_));
  if (empty_flags) empty_flags->assign(documents.size(), false);
  for (std::size_t i = 0; i < documents.size(); ++i) {
    out.row(static_cast<Index>(i)) = embed(documents[i].words()).transpose();
    if (empty_flags && documents[i].words().empty()) (*empty_flags)[i] = true;
  }
  return out;
}

MatrixXd load_external_vectors(const std::filesystem::path& path, const std::vector<Document>& documents) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vector file " + path.string());
  std::unordered_map<std::string, VectorXd> rows;
  std::string line;
  Index dim = -1;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string id, cell;
    std::getline(ss, id, ',');
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
    if (dim < 0) dim = static_cast<Index>(values.size());
    if (static_cast<Index>(values.size()) != dim || dim == 0) throw Error("vector file rows differ in width");
    VectorXd v = Eigen::Map<VectorXd>(values.data(), dim);
    const double norm = v.norm();
    if (norm > 0.0) v /= norm;
    rows[id] = v;
  }
  MatrixXd out(static_cast<Index>(documents.size()), std::max<Index>(dim, 0));
  for (std::size_t i = 0; i < documents.size(); ++i) {
    auto it = rows.find(documents[i].id());
    if (it == rows.end()) throw Error("vector file has no row for document " + documents[i].id());
    out.row(static_cast<Index>(i)) = it->second.transpose();
  }
  return out;
}

VectorXd knn_distance(const MatrixXd& queries, const MatrixXd& references, std::size_t k, DistanceMetric metric) {
  if (k == 0) throw Error("k must be at least 1");
  if (k > static_cast<std::size_t>(references.rows())) throw Error("k exceeds the reference pool size");
  if (queries.cols() != references.cols()) throw Error("kNN inputs differ in dimension");
  const Index nq = queries.rows();
  const Index nr = references.rows();
  VectorXd out(nq);
  VectorXd q_norm = queries.rowwise().norm();
  VectorXd r_norm = references.rowwise().norm();
  constexpr Index kBlock = 512;
  std::vector<std::pair<double, Index>> row(static_cast<std::size_t>(nr));
  for (Index start = 0; start < nq; start += kBlock) {
    const Index len = std::min(kBlock, nq - start);
    const MatrixXd dots = queries.middleRows(start, len) * references.transpose();
    for (Index i = 0; i < len; ++i) {
      const double qn = q_norm[start + i];
      for (Index j = 0; j < nr; ++j) {
        double dist;
        if (metric == DistanceMetric::Cosine) {
          const double denom = qn * r_norm[j];
          dist = denom > 0.0 ? 1.0 - dots(i, j) / denom : 1.0;
        } else {
          dist = std::sqrt(std::max(0.0, qn * qn + r_norm[j] * r_norm[j] - 2.0 * dots(i, j)));
        }
        row[static_cast<std::size_t>(j)] = {dist, j};
      }
      const auto kth = row.begin() + static_cast<std::ptrdiff_t>(k);
      std::nth_element(row.begin(), kth - 1, row.end());
      std::sort(row.begin(), kth);
      double sum = 0.0;
      for (auto it = row.begin(); it != kth; ++it) sum += it->first;
      out[start + i] = sum / static_cast<double>(k);
    }
  }
  return out;
}

std::size_t keep_count(std::size_t n, double q) {
  if (!(q > 0.0 && q <= 1.0)) throw Error("keep fraction must lie in (0, 1]");
  // Guard against 0.75 * 4 landing a hair above 3.
  const double raw = q * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::ceil(raw - 1e-9)));
}

void TextFilterConfig::validate() const {
  if (k == 0) throw Error("filter k must be at least 1");
  for (double q : {synthetic_keep, real_keep})
    if (!(q > 0.0 && q <= 1.0)) throw Error("filter quantiles must lie in (0, 1]");
  if (dimension == 0 || max_n < 1) throw Error("filter embedder settings invalid");
}

namespace {

// Stable ordering of indices by score; `descending` ranks large scores first.
std::vector<std::size_t> rank(const VectorXd& scores, bool descending) {
  std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = scores[static_cast<Index>(a)], sb = scores[static_cast<Index>(b)];
    return descending ? sa > sb : sa < sb;
  });
  return order;
}

}  // namespace

TextFilterResult filter_text_pools(const std::vector<Document>& synthetic, const std::vector<Document>& real,
                                   const TextFilterConfig& config) {
  config.validate();
  if (real.size() < config.k) throw Error("real pool is smaller than k");
  if (synthetic.empty()) throw Error("synthetic pool is empty");
  MatrixXd syn_vec, real_vec;
  if (config.external_vectors.empty()) {
    HashedEmbedder embedder(config.dimension, config.max_n);
    embedder.fit_idf(real);
    syn_vec = embedder.embed(synthetic);
    real_vec = embedder.embed(real);
  } else {
    syn_vec = load_external_vectors(config.external_vectors, synthetic);
    real_vec = load_external_vectors(config.external_vectors, real);
  }
  TextFilterResult r;
  const VectorXd syn_score = knn_distance(syn_vec, real_vec, config.k, DistanceMetric::Cosine);
  const MatrixXd centroid = real_vec.colwise().mean();
  const VectorXd real_score = knn_distance(real_vec, centroid, 1, DistanceMetric::Cosine);

  const auto syn_order = rank(syn_score, false);
  const std::size_t syn_n = keep_count(synthetic.size(), config.synthetic_keep);
  r.synthetic.assign(syn_order.begin(), syn_order.begin() + static_cast<std::ptrdiff_t>(syn_n));
  r.synthetic_threshold = syn_score[static_cast<Index>(syn_order[syn_n - 1])];

  const auto real_order = rank(real_score, true);
  const std::size_t real_n = keep_count(real.size(), config.real_keep);
  r.real.assign(real_order.begin(), real_order.begin() + static_cast<std::ptrdiff_t>(real_n));
  r.real_threshold = real_score[static_cast<Index>(real_order[real_n - 1])];

  std::vector<bool> syn_kept(synthetic.size(), false), real_kept(real.size(), false);
  for (auto i : r.synthetic) syn_kept[i] = true;
  for (auto i : r.real) real_kept[i] = true;
  for (std::size_t i = 0; i < synthetic.size(); ++i)
    r.decisions.push_back(
        {synthetic[i].id(), "synthetic", syn_score[static_cast<Index>(i)], syn_kept[i], r.synthetic_threshold});
  for (std::size_t i = 0; i < real.size(); ++i)
    r.decisions.push_back({real[i].id(), "real", real_score[static_cast<Index>(i)], real_kept[i], r.real_threshold});
  std::sort(r.synthetic.begin(), r.synthetic.end());
  std::sort(r.real.begin(), r.real.end());
  return r;
}

void ImageFilterConfig::validate() const {
  if (!(exclude > 0.0 && exclude < 1.0)) throw Error("image exclusion quantile must lie in (0, 1)");
}

ImageFilterResult filter_by_distance(const VectorXd& distances, const std::vector<std::string>& ids, double exclude) {
  if (static_cast<std::size_t>(distances.size()) != ids.size()) throw Error("image filter ids and scores differ");
  if (ids.empty()) throw Error("image filter pool is empty");
  const std::size_t n = ids.size();
  const auto drop = static_cast<std::size_t>(std::floor(exclude * static_cast<double>(n) + 1e-9));
  const auto order = rank(distances, false);
  ImageFilterResult r;
  r.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n - drop));
  r.threshold = r.kept.empty() ? 0.0 : distances[static_cast<Index>(r.kept.back())];
  std::vector<bool> kept(n, false);
  for (auto i : r.kept) kept[i] = true;
  for (std::size_t i = 0; i < n; ++i)
    r.decisions.push_back({ids[i], "image", distances[static_cast<Index>(i)], kept[i], r.threshold});
  std::sort(r.kept.begin(), r.kept.end());
  return r;
}

ImageFilterResult filter_image_pool(const Population& synthetic, const Population& reference,
                                    const ImageFilterConfig& config) {
  config.validate();
  const MahalanobisReference ref(composite_embedding(feature_matrix(reference)));
  const VectorXd dist = ref.distances(composite_embedding(feature_matrix(synthetic)));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < synthetic.size(); ++i) ids.push_back("r" + std::to_string(i));
  return filter_by_distance(dist, ids, config.exclude);
}

void VolumeSchedule::validate() const {
  if (base == 0) throw Error("volume base must be positive");
  if (multipliers.empty()) throw Error("volume schedule needs multipliers");
  for (double m : multipliers)
    if (!(m >= 1.0)) throw Error("volume multipliers must be at least 1");
}

std::size_t volume_for_generation(const VolumeSchedule& schedule, int t) {
  schedule.validate();
  if (t < 1) throw Error("volume schedule starts at generation 1; generation 0 is fitted on real data");
  const std::size_t i = std::min(static_cast<std::size_t>(t - 1), schedule.multipliers.size() - 1);
  return static_cast<std::size_t>(std::llround(static_cast<double>(schedule.base) * schedule.multipliers[i]));
}

std::string format_decision_log(const std::vector<FilterDecision>& decisions, const std::string& config_hash) {
  std::ostringstream out;
  out.precision(17);
  out << "id,pool,score,kept,threshold,config_hash\n";
  for (const auto& d : decisions)
    out << d.id << ',' << d.pool << ',' << d.score << ',' << (d.kept ? 1 : 0) << ',' << d.threshold << ','
        << config_hash << '\n';
  return out.str();
}

}  // namespace collapselab
