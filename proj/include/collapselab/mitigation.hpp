#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "collapselab/corpus.hpp"
#include "collapselab/population.hpp"

namespace collapselab {

// Bag of hashed word n-grams (1..max_n), weighted by inverse document
// frequency, unit-normalised. The IDF table is fitted on a reference pool
// that no model in the chain produced.
class HashedEmbedder {
 public:
  explicit HashedEmbedder(std::size_t dimension = 256, int max_n = 2);

  void fit_idf(const std::vector<Document>& reference);
  std::size_t dimension() const { return dimension_; }
  int max_n() const { return max_n_; }

  std::size_t bucket(std::string_view gram) const;
  // Rows = documents. Empty documents give zero rows.
  Eigen::MatrixXd embed(const std::vector<Document>& documents, std::vector<bool>* empty_flags = nullptr) const;
  Eigen::VectorXd embed(const std::vector<std::string>& words) const;

 private:
  void add_grams(const std::vector<std::string>& words, Eigen::VectorXd& out, bool presence) const;

  std::size_t dimension_;
  int max_n_;
  Eigen::VectorXd idf_;
};

// Rows of an externally supplied vector file: one row per document, comma
// separated, first column the document id.
Eigen::MatrixXd load_external_vectors(const std::filesystem::path& path, const std::vector<Document>& documents);

enum class DistanceMetric { Cosine, Euclidean };

// Mean distance from each query row to its k nearest reference rows (exact
// search; ties broken by reference index). Zero vectors are at cosine
// distance 1 from everything.
Eigen::VectorXd knn_distance(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& references, std::size_t k,
                             DistanceMetric metric = DistanceMetric::Cosine);

struct FilterDecision {
  std::string id;
  std::string pool;  // "synthetic", "real" or "image"
  double score = 0.0;
  bool kept = false;
  double threshold = 0.0;
};

struct TextFilterConfig {
  std::size_t k = 10;
  double synthetic_keep = 0.75;  // lowest distances kept
  double real_keep = 0.5;        // most distant from the centroid kept
  std::size_t dimension = 256;
  int max_n = 2;
  std::filesystem::path external_vectors;  // empty = hashed embedder

  void validate() const;
};

struct TextFilterResult {
  std::vector<std::size_t> synthetic;  // indices into the synthetic pool, ascending
  std::vector<std::size_t> real;       // indices into the real pool, ascending
  std::vector<FilterDecision> decisions;
  double synthetic_threshold = 0.0;
  double real_threshold = 0.0;
};

TextFilterResult filter_text_pools(const std::vector<Document>& synthetic, const std::vector<Document>& real,
                                   const TextFilterConfig& config);

struct ImageFilterConfig {
  double exclude = 0.25;  // lowest-quality share removed
  void validate() const;
};

struct ImageFilterResult {
  std::vector<std::size_t> kept;  // ascending
  std::vector<FilterDecision> decisions;
  double threshold = 0.0;  // largest Mahalanobis distance kept
};

// Quality = negative Mahalanobis distance in the composite embedding of the
// reference population.
ImageFilterResult filter_image_pool(const Population& synthetic, const Population& reference,
                                    const ImageFilterConfig& config);
ImageFilterResult filter_by_distance(const Eigen::VectorXd& distances, const std::vector<std::string>& ids,
                                     double exclude);

// Number kept when a fraction q of n survives, inclusive on the keep side.
std::size_t keep_count(std::size_t n, double q);

struct VolumeSchedule {
  std::size_t base = 5000;
  std::vector<double> multipliers = {2.0, 3.0, 4.0, 5.0};  // generations 1..; the last repeats

  static VolumeSchedule text_expanding() { return {5000, {2.0, 3.0, 4.0, 5.0}}; }
  static VolumeSchedule image_expanding() { return {500, {2.0, 3.0, 4.0, 5.0}}; }
  static VolumeSchedule constant(std::size_t base) { return {base, {1.0}}; }
  void validate() const;
};

std::size_t volume_for_generation(const VolumeSchedule& schedule, int t);

std::string format_decision_log(const std::vector<FilterDecision>& decisions, const std::string& config_hash);

}  // namespace collapselab
