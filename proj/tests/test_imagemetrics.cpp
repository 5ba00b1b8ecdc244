#include <doctest.h>

#include <cmath>

#include "collapselab/error.hpp"
#include "collapselab/imagemetrics.hpp"
#include "collapselab/rng.hpp"
#include "collapselab/stats.hpp"

using namespace collapselab;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_spd(Rng& rng, int d) {
  MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + 0.5 * MatrixXd::Identity(d, d);
}

// Denman-Beavers iteration for sqrt(AB); its eigenvalues are real and
// positive for SPD A, B, so the iteration converges.
MatrixXd sqrt_denman_beavers(const MatrixXd& m) {
  MatrixXd y = m, z = MatrixXd::Identity(m.rows(), m.cols());
  for (int i = 0; i < 60; ++i) {
    const MatrixXd yn = 0.5 * (y + z.inverse());
    const MatrixXd zn = 0.5 * (z + y.inverse());
    y = yn;
    z = zn;
  }
  return y;
}

double frechet_oracle(const VectorXd& ma, const MatrixXd& a, const VectorXd& mb, const MatrixXd& b) {
  return (ma - mb).squaredNorm() + (a + b - 2.0 * sqrt_denman_beavers(a * b)).trace();
}

double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

MatrixXd gaussian_rows(Rng& rng, int n, int d, double shift = 0.0) {
  MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal() + shift;
  return m;
}

}  // namespace

TEST_SUITE("imagemetrics") {

TEST_CASE("Frechet closed forms") {
  const VectorXd m0 = VectorXd::Zero(1), m1 = VectorXd::Ones(1);
  const MatrixXd one = MatrixXd::Identity(1, 1);
  CHECK(frechet_distance(m0, one, m0, one) == doctest::Approx(0.0));
  CHECK(frechet_distance(m0, one, m1, one) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(frechet_distance(m0, one, m0, 4.0 * one) == doctest::Approx(1.0).epsilon(1e-12));

  // Diagonal 2-D: |dm|^2 + sum (sqrt(a_i) - sqrt(b_i))^2 = 1 + 4 + 1 + 1.
  VectorXd ma(2), mb(2);
  ma << 0, 0;
  mb << 1, 2;
  MatrixXd a = MatrixXd::Zero(2, 2), b = MatrixXd::Zero(2, 2);
  a.diagonal() << 1, 4;
  b.diagonal() << 4, 9;
  CHECK(frechet_distance(ma, a, mb, b) == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(frechet_oracle(ma, a, mb, b) == doctest::Approx(7.0).epsilon(1e-9));
  CHECK_THROWS_AS(frechet_distance(ma, a, m0, one), Error);
}

TEST_CASE("Frechet matches the Denman-Beavers oracle on random Gaussians") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + static_cast<int>(rng.index(5));
    const MatrixXd a = random_spd(rng, d), b = random_spd(rng, d);
    VectorXd ma(d), mb(d);
    for (int i = 0; i < d; ++i) {
      ma[i] = rng.normal();
      mb[i] = rng.normal();
    }
    CHECK(frechet_distance(ma, a, mb, b) == doctest::Approx(frechet_oracle(ma, a, mb, b)).epsilon(1e-7));
    CHECK(frechet_distance(ma, a, ma, a) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  }
}

TEST_CASE("Frechet grows quadratically with a mean shift") {
  Rng rng(2);
  const MatrixXd c = random_spd(rng, 3);
  const VectorXd m = VectorXd::Zero(3);
  VectorXd dir(3);
  dir << 1, -2, 0.5;
  for (double t : {0.5, 1.0, 2.0, 4.0})
    CHECK(frechet_distance(m, c, m + t * dir, c) == doctest::Approx(t * t * dir.squaredNorm()).epsilon(1e-9));
}

TEST_CASE("sample Frechet and bootstrap") {
  Rng rng(7);
  const MatrixXd real = gaussian_rows(rng, 600, 4);
  const MatrixXd moved = gaussian_rows(rng, 600, 4, 1.0);
  CHECK(frechet_distance(real, real) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  CHECK(sample_covariance(real).rows() == 4);

  const auto self = bootstrap_frechet(real, real, 300, 10, 3);
  CHECK(self.values.size() == 10);
  CHECK(self.mean > 0.0);
  CHECK(self.mean < 0.3);
  const auto far = bootstrap_frechet(real, moved, 300, 10, 3);
  CHECK(far.mean == doctest::Approx(4.0).epsilon(0.15));
  const auto again = bootstrap_frechet(real, moved, 300, 10, 3);
  CHECK(again.mean == far.mean);
  CHECK(again.sd == far.sd);
  CHECK_THROWS_AS(bootstrap_frechet(real, moved, 1000, 10, 3), Error);
  CHECK_THROWS_AS(bootstrap_frechet(real, moved, 300, 1, 3), Error);
}

TEST_CASE("logistic gradient matches finite differences") {
  Rng rng(31);
  const MatrixXd x = gaussian_rows(rng, 40, 3);
  VectorXd y(40);
  for (int i = 0; i < 40; ++i) y[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd w(3);
    for (int j = 0; j < 3; ++j) w[j] = rng.normal();
    const double b = rng.normal();
    const double l2 = trial % 2 ? 0.1 : 0.0;
    const auto g = logistic_loss(x, y, w, b, l2);
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      VectorXd wp = w, wm = w;
      wp[j] += h;
      wm[j] -= h;
      const double fd = (logistic_loss(x, y, wp, b, l2).loss - logistic_loss(x, y, wm, b, l2).loss) / (2 * h);
      CHECK(std::abs(fd - g.grad_w[j]) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
    const double fdb = (logistic_loss(x, y, w, b + h, l2).loss - logistic_loss(x, y, w, b - h, l2).loss) / (2 * h);
    CHECK(std::abs(fdb - g.grad_b) <= 1e-4 * std::max(1.0, std::abs(fdb)));
  }
}

TEST_CASE("probe separates a separable fixture and ignores record order") {
  Rng rng(5);
  MatrixXd x(60, 2);
  std::vector<std::set<std::string>> labels(60);
  for (int i = 0; i < 60; ++i) {
    const bool pos = i % 2 == 0;
    x(i, 0) = (pos ? 2.0 : -2.0) + 0.5 * rng.normal();
    x(i, 1) = rng.normal();
    if (pos) labels[static_cast<std::size_t>(i)] = {"mass"};
  }
  const auto probe = train_probe(x, labels, {"mass", "never"}, {}, 9);
  CHECK(probe.probe("never")->skipped);
  const MatrixXd p = probe.probabilities(x);
  for (int i = 0; i < 60; ++i) CHECK((p(i, 0) > 0.5) == (i % 2 == 0));
  const auto& trace = probe.probe("mass")->loss_trace;
  CHECK(trace.back() < trace.front());

  MatrixXd xr = x.colwise().reverse();
  std::vector<std::set<std::string>> lr(labels.rbegin(), labels.rend());
  const auto reversed = train_probe(xr, lr, {"mass", "never"}, {}, 9);
  for (int j = 0; j < 2; ++j)
    CHECK(reversed.probe("mass")->weights[j] == doctest::Approx(probe.probe("mass")->weights[j]).epsilon(1e-10));
  const auto prev = probe_prevalence(probe, x);
  CHECK(prev.size() == 1);
  CHECK(prev.at("mass").positives == 30);
}

TEST_CASE("probe prevalence with hand-set probes") {
  ProbeClassifier zero;
  zero.feature_mean = VectorXd::Zero(2);
  zero.feature_scale = VectorXd::Ones(2);
  zero.probes.push_back({"edema", VectorXd::Zero(2), 0.0, {}, false});
  MatrixXd x(5, 2);
  x << -2, 0, -1, 0, 0, 3, 1, -1, 2, 5;
  auto r = probe_prevalence(zero, x);
  CHECK(r.at("edema").mean_probability == doctest::Approx(0.5));
  CHECK(r.at("edema").positives == 0);

  // w = (1, 0), b = -0.5: z = x0 - 0.5, positive for x0 in {1, 2}.
  ProbeClassifier hand = zero;
  hand.probes[0].weights << 1, 0;
  hand.probes[0].bias = -0.5;
  r = probe_prevalence(hand, x);
  CHECK(r.at("edema").positives == 2);
  CHECK(probe_prevalence(hand, x, 0.8).at("edema").positives == 1);  // sigmoid(1.5) = 0.818
}

TEST_CASE("AUROC by pair counting") {
  CHECK(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auroc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{0, 1, 1}) == 0.5);
  const std::vector<double> s = {0.3, 0.7, 0.7, 0.1, 0.9, 0.4};
  const std::vector<int> y = {1, 0, 1, 0, 1, 0};
  CHECK(auroc(s, y) == doctest::Approx(auroc_pairs(s, y)).epsilon(1e-12));
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> sc(20), tr;
    std::vector<int> lab(20);
    for (int i = 0; i < 20; ++i) {
      sc[i] = std::round(rng.normal() * 4) / 4;  // ties on purpose
      lab[i] = i < 7 ? 1 : 0;
    }
    for (double v : sc) tr.push_back(std::exp(3 * v) - 2);
    CHECK(auroc(sc, lab) == doctest::Approx(auroc_pairs(sc, lab)).epsilon(1e-12));
    CHECK(auroc(tr, lab) == doctest::Approx(auroc(sc, lab)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), Error);
}

TEST_CASE("Mahalanobis distances") {
  MatrixXd ref1(2, 1);
  ref1 << -std::sqrt(0.5), std::sqrt(0.5);  // mean 0, sample variance 1
  MatrixXd cand1(2, 1);
  cand1 << 0, 2;
  const VectorXd d1 = mahalanobis_scores(cand1, ref1);
  CHECK(d1[0] == doctest::Approx(0.0));
  CHECK(d1[1] == doctest::Approx(2.0).epsilon(1e-5));

  // Reference (0,0), (2,0), (0,2): mean (2/3, 2/3), covariance
  // [[4/3, -2/3], [-2/3, 4/3]], inverse [[1, 1/2], [1/2, 1]].
  MatrixXd ref(3, 2);
  ref << 0, 0, 2, 0, 0, 2;
  MatrixXd cand(3, 2);
  cand << 2.0 / 3, 2.0 / 3, 5.0 / 3, 2.0 / 3, 5.0 / 3, 5.0 / 3;
  const VectorXd d = mahalanobis_scores(cand, ref);
  CHECK(d[0] == doctest::Approx(0.0));
  CHECK(d[1] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(d[2] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-5));
  CHECK_THROWS_AS(mahalanobis_scores(cand, ref.topRows(2)), Error);
}

TEST_CASE("composite embedding appends variance and first-difference channels") {
  MatrixXd rows(1, 3);
  rows << 1, 3, 2;
  const MatrixXd e = composite_embedding(rows);
  REQUIRE(e.cols() == 5);
  CHECK(e(0, 3) == doctest::Approx(2.0 / 3.0));
  CHECK(e(0, 4) == doctest::Approx(1.5));
}

TEST_CASE("demographic drift") {
  DemographicSummary base, cur;
  base.male = 532;
  base.female = 468;
  cur.male = 695;
  cur.female = 305;
  for (int i = 0; i < 100; ++i) {
    base.ages.push_back(40 + i % 40);
    cur.ages.push_back(45 + i % 40);
  }
  const auto drift = demographic_drift(base, cur);
  CHECK(drift.male_fraction == doctest::Approx(0.695));
  CHECK(drift.gender_p_value < 0.05);
  CHECK(drift.age_wasserstein == doctest::Approx(5.0));
  const auto same = demographic_drift(base, base);
  CHECK(same.age_wasserstein == 0.0);
  CHECK(same.gender_p_value == doctest::Approx(1.0));
}

}
