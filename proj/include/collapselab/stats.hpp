#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace collapselab::stats {

double mean(std::span<const double> x);
// Sample standard deviation (n - 1 denominator); 0 for a single value.
double stddev(std::span<const double> x);

// 1-D earth mover's distance between empirical distributions:
// integral of |F_A(x) - F_B(x)| over x.
double wasserstein1(std::span<const double> a, std::span<const double> b);

// Regularized upper incomplete gamma Q(a, x), series for x < a + 1 and a
// Lentz continued fraction otherwise; relative accuracy ~1e-12.
double gamma_q(double a, double x);
double chi_square_survival(double statistic, double dof);

struct ChiSquareResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t dof = 0;
};

ChiSquareResult chi_square_gof(std::span<const double> observed, std::span<const double> baseline_proportions);

// n subjects x k raters, row major.
struct RatingsMatrix {
  std::size_t subjects = 0;
  std::size_t raters = 0;
  std::vector<double> values;

  RatingsMatrix(std::size_t n, std::size_t k, std::vector<double> v);
  double operator()(std::size_t i, std::size_t j) const { return values[i * raters + j]; }
};

struct IccResult {
  double icc = 0.0;
  double ms_rows = 0.0;
  double ms_cols = 0.0;
  double ms_error = 0.0;
};

// Two-way random effects, absolute agreement, single rater.
IccResult icc_2_1(const RatingsMatrix& ratings);
std::string icc_interpretation(double icc);  // poor / fair / good / excellent
std::string kappa_interpretation(double kappa);

enum class CorrelationKind { Pearson, Spearman };
double correlation(std::span<const double> x, std::span<const double> y, CorrelationKind kind);
// Ranks 1..n with ties sharing their mean rank.
std::vector<double> midranks(std::span<const double> x);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

using Statistic = std::function<double(std::span<const double>)>;
// Percentile bootstrap interval.
Interval bootstrap_ci(std::span<const double> samples, const Statistic& statistic, std::size_t iterations,
                      double confidence, std::uint64_t seed);

// Linear-interpolated quantile of sorted data (type 7).
double quantile_sorted(std::span<const double> sorted, double q);

// Cohen's kappa for two raters over the same items with categorical codes.
double cohen_kappa(std::span<const int> a, std::span<const int> b);
// 2x2 table: a = both positive, b = A positive only, c = B positive only, d = both negative.
double cohen_kappa_2x2(double a, double b, double c, double d);

std::size_t levenshtein(std::string_view a, std::string_view b);
std::size_t levenshtein(std::span<const std::string> a, std::span<const std::string> b);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct EditMetrics {
  double edit_distance_percent = 0.0;  // may exceed 100
  double word_error_rate = 0.0;
  double retention_percent = 0.0;
  double editing_seconds = 0.0;
};

EditMetrics edit_metrics(std::string_view original, std::string_view edited, double editing_seconds = 0.0);

}  // namespace collapselab::stats
