#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include "collapselab/error.hpp"
#include "collapselab/rng.hpp"
#include "collapselab/stats.hpp"

using namespace collapselab;
using namespace collapselab::stats;

namespace {

// Plain recursive definition, memoised on (i, j).
std::size_t levenshtein_oracle(const std::string& a, const std::string& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t r = std::min({go(i - 1, j) + 1, go(i, j - 1) + 1, go(i - 1, j - 1) + (a[i - 1] != b[j - 1])});
    memo[key] = r;
    return r;
  };
  return go(a.size(), b.size());
}

std::vector<std::string> all_strings(std::size_t max_len, const std::string& alphabet) {
  std::vector<std::string> out{""};
  std::vector<std::string> frontier{""};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::string> next;
    for (const auto& s : frontier)
      for (char c : alphabet) next.push_back(s + c);
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

double brute_midrank(const std::vector<double>& x, std::size_t i) {
  double less = 0, equal = 0;
  for (double v : x) {
    less += v < x[i];
    equal += v == x[i];
  }
  return less + (equal + 1.0) / 2.0;
}

double pearson_plain(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_SUITE("stats") {

TEST_CASE("wasserstein-1 examples") {
  const std::vector<double> a = {1, 2, 3};
  CHECK(wasserstein1(a, a) == 0.0);
  CHECK(wasserstein1(std::vector<double>{0}, std::vector<double>{3}) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(wasserstein1(std::vector<double>{0, 1}, std::vector<double>{1, 2}) == doctest::Approx(1.0).epsilon(1e-12));
  // Unequal sizes: F_A - F_B integrated by hand.
  CHECK(wasserstein1(std::vector<double>{0, 2}, std::vector<double>{1}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(wasserstein1(std::vector<double>{}, a), Error);
}

TEST_CASE("wasserstein-1 is a metric on random samples") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto draw = [&] {
      std::vector<double> v(1 + rng.index(12));
      for (double& x : v) x = rng.normal(rng.normal(), 1.0 + rng.uniform());
      return v;
    };
    const auto x = draw(), y = draw(), z = draw();
    CHECK(wasserstein1(x, y) == doctest::Approx(wasserstein1(y, x)).epsilon(1e-12));
    CHECK(wasserstein1(x, z) <= wasserstein1(x, y) + wasserstein1(y, z) + 1e-12);
    CHECK(wasserstein1(x, y) >= 0.0);
  }
}

TEST_CASE("chi-square goodness of fit") {
  const std::vector<double> half = {0.5, 0.5};
  const auto exact = chi_square_gof(std::vector<double>{50, 50}, half);
  CHECK(exact.statistic == 0.0);
  CHECK(exact.p_value == doctest::Approx(1.0).epsilon(1e-12));
  const auto r = chi_square_gof(std::vector<double>{70, 30}, half);
  CHECK(r.statistic == doctest::Approx(16.0).epsilon(1e-12));
  CHECK(r.dof == 1);
  CHECK(r.p_value == doctest::Approx(6.334248366623996e-05).epsilon(1e-4));
  CHECK_THROWS_AS(chi_square_gof(std::vector<double>{1, 2}, std::vector<double>{1.0, 0.0}), Error);
}

TEST_CASE("gender drift from 53.2% to 69.5% male is significant") {
  const auto r = chi_square_gof(std::vector<double>{695, 305}, std::vector<double>{0.532, 0.468});
  CHECK(r.p_value < 0.05);
}

TEST_CASE("chi-square survival matches table quantiles") {
  struct Row {
    double x, dof, p;
  };
  for (const auto& row : {Row{3.841458820694124, 1, 0.05}, Row{6.634896601021214, 1, 0.01},
                          Row{5.991464547107979, 2, 0.05}, Row{9.487729036781154, 4, 0.05},
                          Row{11.070497693516351, 5, 0.05}, Row{18.307038053275146, 10, 0.05},
                          Row{2.705543454095404, 1, 0.10}, Row{31.410432844230918, 20, 0.05}})
    CHECK(chi_square_survival(row.x, row.dof) == doctest::Approx(row.p).epsilon(1e-4));
  CHECK(gamma_q(1.0, 2.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("ICC(2,1) from a hand ANOVA table") {
  // Row means 8.5, 5.5, 8, 6; column means 7.25, 6.75; grand mean 7.
  // SSR = 13 (df 3), SSC = 0.5 (df 1), SST = 14, SSE = 0.5 (df 3).
  // ICC = (13/3 - 1/6) / (13/3 + 1/6 + (2/4)(1/2 - 1/6)) = 25/28.
  const RatingsMatrix m(4, 2, {9, 8, 6, 5, 8, 8, 6, 6});
  const auto r = icc_2_1(m);
  CHECK(r.ms_rows == doctest::Approx(13.0 / 3.0).epsilon(1e-12));
  CHECK(r.ms_cols == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.ms_error == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(r.icc == doctest::Approx(25.0 / 28.0).epsilon(1e-12));
}

TEST_CASE("ICC perfect agreement and absolute-agreement property") {
  CHECK(icc_2_1(RatingsMatrix(3, 2, {1, 1, 4, 4, 9, 9})).icc == doctest::Approx(1.0).epsilon(1e-12));
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(10 * 3);
    for (std::size_t i = 0; i < 10; ++i) {
      const double s = rng.normal(0, 3);
      for (std::size_t j = 0; j < 3; ++j) v[i * 3 + j] = s + rng.normal();
    }
    const double base = icc_2_1(RatingsMatrix(10, 3, v)).icc;
    auto all = v;
    for (double& x : all) x += 7.5;
    CHECK(icc_2_1(RatingsMatrix(10, 3, all)).icc == doctest::Approx(base).epsilon(1e-9));
    auto one = v;
    for (std::size_t i = 0; i < 10; ++i) one[i * 3 + 1] += 2.0;
    CHECK(icc_2_1(RatingsMatrix(10, 3, one)).icc < base);
  }
  CHECK_THROWS_AS(icc_2_1(RatingsMatrix(2, 2, {3, 3, 3, 3})), UndefinedError);
  CHECK_THROWS_AS(RatingsMatrix(2, 2, {1, 2, 3}), Error);
  CHECK_THROWS_AS(RatingsMatrix(1, 2, {1, 2}), Error);
}

TEST_CASE("ICC and kappa interpretation tiers") {
  CHECK(icc_interpretation(0.705) == "good");
  CHECK(icc_interpretation(0.747) == "good");
  CHECK(icc_interpretation(0.75) == "excellent");
  CHECK(icc_interpretation(0.3) == "poor");
  CHECK(kappa_interpretation(0.85) == "almost perfect");
  CHECK(kappa_interpretation(0.6) == "moderate");
}

TEST_CASE("Cohen's kappa") {
  CHECK(cohen_kappa_2x2(40, 10, 10, 40) == doctest::Approx(0.6).epsilon(1e-12));
  const std::vector<int> a = {1, 1, 0, 0, 1, 0}, b = {1, 0, 0, 0, 1, 1};
  // p_o = 4/6, p_e = 0.5, kappa = 1/3.
  CHECK(cohen_kappa(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(cohen_kappa(a, a) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cohen_kappa(std::vector<int>{1, 1}, std::vector<int>{1, 1}), UndefinedError);
  CHECK_THROWS_AS(cohen_kappa_2x2(5, 0, 0, 0), UndefinedError);
}

TEST_CASE("correlation examples") {
  const std::vector<double> x = {-2, -1, 0, 1, 2};
  std::vector<double> lin, cube;
  for (double v : x) {
    lin.push_back(2 * v + 1);
    cube.push_back(v * v * v);
  }
  CHECK(correlation(x, lin, CorrelationKind::Pearson) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(correlation(x, lin, CorrelationKind::Spearman) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(correlation(x, cube, CorrelationKind::Spearman) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(correlation(x, cube, CorrelationKind::Pearson) < 1.0 - 1e-6);
  CHECK_THROWS_AS(correlation(x, std::vector<double>{1, 1, 1, 1, 1}, CorrelationKind::Pearson), UndefinedError);
  CHECK_THROWS_AS(correlation(std::vector<double>{1, 2}, std::vector<double>{1, 2}, CorrelationKind::Pearson), Error);
}

TEST_CASE("spearman with ties equals the brute-force midrank computation") {
  const std::vector<double> x = {1, 2, 2, 3, 5}, y = {2, 1, 4, 4, 6};
  std::vector<double> rx, ry;
  for (std::size_t i = 0; i < x.size(); ++i) {
    rx.push_back(brute_midrank(x, i));
    ry.push_back(brute_midrank(y, i));
  }
  CHECK(midranks(x) == rx);
  CHECK(correlation(x, y, CorrelationKind::Spearman) == doctest::Approx(pearson_plain(rx, ry)).epsilon(1e-12));
}

TEST_CASE("bootstrap intervals") {
  const Statistic avg = [](std::span<const double> s) { return mean(s); };
  const std::vector<double> constant(20, 4.0);
  const auto c = bootstrap_ci(constant, avg, 500, 0.95, 1);
  CHECK(c.low == 4.0);
  CHECK(c.high == 4.0);
  Rng rng(21);
  std::vector<double> normal(100);
  for (double& v : normal) v = rng.normal();
  const auto a = bootstrap_ci(normal, avg, 10000, 0.95, 5);
  const auto b = bootstrap_ci(normal, avg, 10000, 0.95, 5);
  CHECK(a.low == b.low);
  CHECK(a.high == b.high);
  const double expected_width = 2 * 1.96 * stddev(normal) / 10.0;
  CHECK((a.high - a.low) == doctest::Approx(expected_width).epsilon(0.2));
  CHECK_THROWS_AS(bootstrap_ci(std::vector<double>{1.0}, avg, 500, 0.95, 1), Error);
  CHECK_THROWS_AS(bootstrap_ci(normal, avg, 50, 0.95, 1), Error);
}

TEST_CASE("levenshtein matches the recursive oracle") {
  CHECK(levenshtein("kitten", "sitting") == 3);
  const auto strings = all_strings(4, "abcd");
  for (std::size_t i = 0; i < strings.size(); i += 3)
    for (std::size_t j = 0; j < strings.size(); j += 5)
      REQUIRE(levenshtein(strings[i], strings[j]) == levenshtein_oracle(strings[i], strings[j]));
  Rng rng(8);
  for (int trial = 0; trial < 3000; ++trial) {
    std::string a(rng.index(9), 'a'), b(rng.index(9), 'a');
    for (char& ch : a) ch = static_cast<char>('a' + rng.index(4));
    for (char& ch : b) ch = static_cast<char>('a' + rng.index(4));
    REQUIRE(levenshtein(a, b) == levenshtein_oracle(a, b));
  }
}

TEST_CASE("edit metrics") {
  const auto same = edit_metrics("no acute findings", "no acute findings", 12.5);
  CHECK(same.edit_distance_percent == 0.0);
  CHECK(same.word_error_rate == 0.0);
  CHECK(same.retention_percent == doctest::Approx(100.0));
  CHECK(same.editing_seconds == 12.5);
  CHECK(edit_metrics("kitten", "sitting").edit_distance_percent == doctest::Approx(50.0).epsilon(1e-12));
  // Word level: one substitution and one deletion over four original words.
  const auto w = edit_metrics("small left pleural effusion", "large pleural effusion");
  CHECK(w.word_error_rate == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w.retention_percent == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(edit_metrics("ab", "completely rewritten").edit_distance_percent > 100.0);
  CHECK_THROWS_AS(edit_metrics("", "x"), Error);
}

TEST_CASE("heavily rewritten reports keep little content") {
  const std::string original = "heart size is normal. no focal consolidation. no pleural effusion or pneumothorax.";
  const std::string edited =
      "interval development of a moderate right pleural effusion with adjacent atelectasis. recommend follow up.";
  const auto m = edit_metrics(original, edited);
  CHECK(m.edit_distance_percent > 60.0);
  CHECK(m.retention_percent < 22.0);
}

}
