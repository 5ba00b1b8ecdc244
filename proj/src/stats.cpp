#include "collapselab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "collapselab/error.hpp"
#include "collapselab/rng.hpp"
#include "collapselab/text.hpp"

namespace collapselab::stats {

double mean(std::span<const double> x) {
  if (x.empty()) throw Error("mean of empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error("wasserstein1 needs non-empty samples");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  // Sweep the merged support accumulating |F_A - F_B| * gap.
  std::size_t i = 0, j = 0;
  double total = 0.0;
  double prev = std::min(sa.front(), sb.front());
  while (i < sa.size() || j < sb.size()) {
    double x;
    if (j == sb.size() || (i < sa.size() && sa[i] <= sb[j])) x = sa[i];
    else x = sb[j];
    total += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (x - prev);
    while (i < sa.size() && sa[i] == x) ++i;
    while (j < sb.size() && sb[j] == x) ++j;
    prev = x;
  }
  return total;
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw Error("gamma_q needs a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    double sum = 1.0 / a, term = sum, ap = a;
    for (int n = 0; n < 10000; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return std::max(0.0, 1.0 - sum * std::exp(log_prefix));
  }
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return std::exp(log_prefix) * h;
}

double chi_square_survival(double statistic, double dof) {
  if (!(dof > 0.0)) throw Error("chi-square needs positive degrees of freedom");
  if (statistic <= 0.0) return 1.0;
  return gamma_q(0.5 * dof, 0.5 * statistic);
}

ChiSquareResult chi_square_gof(std::span<const double> observed, std::span<const double> baseline) {
  if (observed.size() != baseline.size() || observed.size() < 2)
    throw Error("chi-square needs matching observed/baseline vectors with >= 2 cells");
  const double n = std::accumulate(observed.begin(), observed.end(), 0.0);
  const double psum = std::accumulate(baseline.begin(), baseline.end(), 0.0);
  ChiSquareResult r;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double expected = n * baseline[i] / psum;
    if (!(expected > 0.0)) throw Error("chi-square expected count is zero in cell " + std::to_string(i));
    r.statistic += (observed[i] - expected) * (observed[i] - expected) / expected;
  }
  r.dof = observed.size() - 1;
  r.p_value = chi_square_survival(r.statistic, static_cast<double>(r.dof));
  return r;
}

RatingsMatrix::RatingsMatrix(std::size_t n, std::size_t k, std::vector<double> v)
    : subjects(n), raters(k), values(std::move(v)) {
  if (n < 2 || k < 2) throw Error("ratings matrix needs at least 2 subjects and 2 raters");
  if (values.size() != n * k) throw Error("ratings matrix has missing cells");
  for (double x : values)
    if (!std::isfinite(x)) throw Error("ratings matrix has a non-finite cell");
}

IccResult icc_2_1(const RatingsMatrix& r) {
  const auto n = static_cast<double>(r.subjects);
  const auto k = static_cast<double>(r.raters);
  const double grand = mean(r.values);
  std::vector<double> row_mean(r.subjects, 0.0), col_mean(r.raters, 0.0);
  for (std::size_t i = 0; i < r.subjects; ++i)
    for (std::size_t j = 0; j < r.raters; ++j) {
      row_mean[i] += r(i, j) / k;
      col_mean[j] += r(i, j) / n;
    }
  double ss_rows = 0.0, ss_cols = 0.0, ss_total = 0.0;
  for (double m : row_mean) ss_rows += k * (m - grand) * (m - grand);
  for (double m : col_mean) ss_cols += n * (m - grand) * (m - grand);
  for (double v : r.values) ss_total += (v - grand) * (v - grand);
  if (ss_total <= 0.0) throw UndefinedError("ICC undefined: ratings have zero variance");
  const double ss_error = std::max(0.0, ss_total - ss_rows - ss_cols);
  IccResult out;
  out.ms_rows = ss_rows / (n - 1.0);
  out.ms_cols = ss_cols / (k - 1.0);
  out.ms_error = ss_error / ((n - 1.0) * (k - 1.0));
  const double denom = out.ms_rows + (k - 1.0) * out.ms_error + (k / n) * (out.ms_cols - out.ms_error);
  if (denom == 0.0) throw UndefinedError("ICC undefined: zero denominator");
  out.icc = (out.ms_rows - out.ms_error) / denom;
  return out;
}

std::string icc_interpretation(double icc) {
  if (icc >= 0.75) return "excellent";
  if (icc >= 0.60) return "good";
  if (icc >= 0.40) return "fair";
  return "poor";
}

std::string kappa_interpretation(double kappa) {
  if (kappa > 0.80) return "almost perfect";
  if (kappa > 0.60) return "substantial";
  if (kappa > 0.40) return "moderate";
  if (kappa > 0.20) return "fair";
  return "slight";
}

std::vector<double> midranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && x[idx[j]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) ranks[idx[t]] = r;
    i = j;
  }
  return ranks;
}

namespace {

double pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedError("correlation undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double correlation(std::span<const double> x, std::span<const double> y, CorrelationKind kind) {
  if (x.size() != y.size()) throw Error("correlation inputs differ in length");
  if (x.size() < 3) throw Error("correlation needs at least 3 points");
  if (kind == CorrelationKind::Pearson) return pearson(x, y);
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  return pearson(rx, ry);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(std::span<const double> samples, const Statistic& statistic, std::size_t iterations,
                      double confidence, std::uint64_t seed) {
  if (samples.size() < 2) throw Error("bootstrap needs at least 2 samples");
  if (iterations < 100) throw Error("bootstrap needs at least 100 iterations");
  if (!(confidence > 0.0 && confidence < 1.0)) throw Error("confidence must lie in (0, 1)");
  Rng rng(derive_seed(seed, 0xB007));
  std::vector<double> resample(samples.size());
  std::vector<double> stats;
  stats.reserve(iterations);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (auto& v : resample) v = samples[rng.index(samples.size())];
    stats.push_back(statistic(resample));
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - confidence;
  return {quantile_sorted(stats, alpha / 2.0), quantile_sorted(stats, 1.0 - alpha / 2.0)};
}

double cohen_kappa(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.empty()) throw Error("kappa needs two equal-length non-empty ratings");
  std::map<int, double> pa, pb;
  double agree = 0.0;
  const auto n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
    if (a[i] == b[i]) agree += 1.0;
  }
  const double po = agree / n;
  double pe = 0.0;
  for (const auto& [cat, p] : pa)
    if (auto it = pb.find(cat); it != pb.end()) pe += p * it->second;
  if (pe >= 1.0) throw UndefinedError("kappa undefined: both raters use a single identical category");
  return (po - pe) / (1.0 - pe);
}

double cohen_kappa_2x2(double a, double b, double c, double d) {
  const double n = a + b + c + d;
  if (!(n > 0.0)) throw Error("kappa table is empty");
  const double po = (a + d) / n;
  const double pe = ((a + b) / n) * ((a + c) / n) + ((c + d) / n) * ((b + d) / n);
  if (pe >= 1.0) throw UndefinedError("kappa undefined: constant marginals");
  return (po - pe) / (1.0 - pe);
}

namespace {

template <typename Seq>
std::size_t levenshtein_impl(const Seq& a, const Seq& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::size_t levenshtein(std::string_view a, std::string_view b) { return levenshtein_impl(a, b); }

std::size_t levenshtein(std::span<const std::string> a, std::span<const std::string> b) {
  return levenshtein_impl(a, b);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

EditMetrics edit_metrics(std::string_view original, std::string_view edited, double editing_seconds) {
  if (original.empty()) throw Error("edit metrics need a non-empty original text");
  const auto ow = text::words(original);
  const auto ew = text::words(edited);
  EditMetrics m;
  m.edit_distance_percent = 100.0 * static_cast<double>(levenshtein(original, edited)) / static_cast<double>(original.size());
  m.word_error_rate = ow.empty() ? 0.0 : static_cast<double>(levenshtein(ow, ew)) / static_cast<double>(ow.size());
  m.retention_percent = ow.empty() ? 0.0 : 100.0 * static_cast<double>(lcs_length(ow, ew)) / static_cast<double>(ow.size());
  m.editing_seconds = editing_seconds;
  return m;
}

}  // namespace collapselab::stats
