#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "collapselab/corpus.hpp"
#include "collapselab/error.hpp"
#include "collapselab/imagemetrics.hpp"
#include "collapselab/mitigation.hpp"
#include "collapselab/rng.hpp"
#include "support.hpp"

using namespace collapselab;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double cosine_distance(const VectorXd& a, const VectorXd& b) {
  if (a.norm() == 0.0 || b.norm() == 0.0) return 1.0;
  return 1.0 - a.dot(b) / (a.norm() * b.norm());
}

// Sorts every pairwise distance and averages the k smallest.
VectorXd knn_oracle(const MatrixXd& q, const MatrixXd& r, std::size_t k, DistanceMetric metric) {
  VectorXd out(q.rows());
  for (int i = 0; i < q.rows(); ++i) {
    std::vector<double> d;
    for (int j = 0; j < r.rows(); ++j)
      d.push_back(metric == DistanceMetric::Cosine ? cosine_distance(q.row(i), r.row(j)) : (q.row(i) - r.row(j)).norm());
    std::sort(d.begin(), d.end());
    double s = 0;
    for (std::size_t t = 0; t < k; ++t) s += d[t];
    out[i] = s / static_cast<double>(k);
  }
  return out;
}

std::vector<Document> id_docs(const std::string& prefix, std::size_t n) {
  std::vector<Document> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testing::doc(prefix + std::to_string(i), "text " + std::to_string(i)));
  return out;
}

Population points(const MatrixXd& rows) {
  Population p;
  for (int i = 0; i < rows.rows(); ++i) p.push_back({rows.row(i).transpose(), {}, {}, Provenance::real()});
  return p;
}

}  // namespace

TEST_SUITE("mitigation") {

TEST_CASE("hashed embedder basics") {
  HashedEmbedder e(512, 1);
  const auto docs = testing::docs({"Small pleural effusion. Heart normal.", "Heart normal. Small pleural effusion.",
                                   "alpha beta gamma", "delta epsilon zeta"});
  e.fit_idf(docs);
  const MatrixXd v = e.embed(docs);
  CHECK(cosine_distance(v.row(0), v.row(1)) == doctest::Approx(0.0).scale(1.0));
  std::set<std::size_t> a, b;
  for (const auto& w : docs[2].words()) a.insert(e.bucket(w));
  for (const auto& w : docs[3].words()) b.insert(e.bucket(w));
  bool collide = false;
  for (auto x : a) collide |= b.contains(x);
  REQUIRE_FALSE(collide);
  CHECK(cosine_distance(v.row(2), v.row(3)) == doctest::Approx(1.0));
  CHECK(v.row(0).norm() == doctest::Approx(1.0));
  std::vector<bool> empty;
  const MatrixXd ve = e.embed({testing::doc("e", "-- ; --")}, &empty);
  CHECK(empty[0]);
  CHECK(ve.row(0).norm() == 0.0);
  CHECK(e.bucket("pleural") == HashedEmbedder(512, 1).bucket("pleural"));
}

TEST_CASE("k-NN distance against the exhaustive sort") {
  MatrixXd ref(5, 2);
  ref << 1, 0, 0, 1, 1, 1, -1, 0.5, 2, -1;
  MatrixXd q(3, 2);
  q << 1, 0.2, -1, -1, 0.3, 0.3;
  for (auto metric : {DistanceMetric::Cosine, DistanceMetric::Euclidean}) {
    const VectorXd got = knn_distance(q, ref, 2, metric);
    const VectorXd want = knn_oracle(q, ref, 2, metric);
    for (int i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    const VectorXd all = knn_distance(q, ref, 5, metric);
    for (int i = 0; i < 3; ++i) {
      double mean = 0;
      for (int j = 0; j < 5; ++j)
        mean += metric == DistanceMetric::Cosine ? cosine_distance(q.row(i), ref.row(j)) : (q.row(i) - ref.row(j)).norm();
      CHECK(all[i] == doctest::Approx(mean / 5).epsilon(1e-12));
    }
  }
  MatrixXd same(3, 2);
  same << 1, 1, 1, 1, 1, 1;
  CHECK(knn_distance(same.topRows(1), same, 3)[0] == doctest::Approx(0.0).scale(1.0));
  CHECK_THROWS_AS(knn_distance(q, ref, 6), Error);
}

TEST_CASE("keep counts") {
  CHECK(keep_count(4, 0.75) == 3);
  CHECK(keep_count(5, 0.5) == 3);
  CHECK(keep_count(10, 1.0) == 10);
  CHECK_THROWS_AS(keep_count(4, 0.0), Error);
}

TEST_CASE("text filter keeps the closest synthetic documents") {
  // One real document at (1, 0); synthetic documents at cosine distance
  // 0.1, 0.9, 0.2, 0.3 from it.
  const auto path = testing::temp_path("vectors.csv");
  {
    std::ofstream f(path);
    f.precision(17);
    f << "r0,1,0\n";
    const double d[] = {0.1, 0.9, 0.2, 0.3};
    for (int i = 0; i < 4; ++i) f << "s" << i << "," << 1 - d[i] << "," << std::sqrt(1 - (1 - d[i]) * (1 - d[i])) << "\n";
  }
  TextFilterConfig cfg;
  cfg.k = 1;
  cfg.external_vectors = path;
  const auto r = filter_text_pools(id_docs("s", 4), id_docs("r", 1), cfg);
  CHECK(r.synthetic == std::vector<std::size_t>{0, 2, 3});
  CHECK(r.synthetic_threshold == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(r.real == std::vector<std::size_t>{0});
  CHECK(r.decisions.size() == 5);
  CHECK_FALSE(r.decisions[1].kept);
  CHECK(r.decisions[1].score == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("identical real pool keeps half by index") {
  std::vector<Document> real;
  for (int i = 0; i < 5; ++i) real.push_back(testing::doc("r" + std::to_string(i), "no acute findings"));
  TextFilterConfig cfg;
  cfg.k = 2;
  const auto r = filter_text_pools(testing::docs({"no acute findings", "heart normal"}), real, cfg);
  CHECK(r.real == std::vector<std::size_t>{0, 1, 2});
  for (const auto& d : r.decisions)
    if (d.pool == "real") CHECK(d.score == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("text filter properties on a toy corpus") {
  ToyPopulationSpec spec;
  spec.document_count = 300;
  spec.vocabulary_size = 600;
  spec.seed = 3;
  const auto corpus = synthesize_toy_corpus(spec);
  const std::vector<Document> real(corpus.documents.begin(), corpus.documents.begin() + 100);
  const std::vector<Document> syn(corpus.documents.begin() + 100, corpus.documents.end());
  const TextFilterConfig cfg;
  const auto r = filter_text_pools(syn, real, cfg);
  CHECK(r.synthetic.size() == 150);
  CHECK(r.real.size() == 50);
  double pool = 0, kept = 0;
  for (const auto& d : r.decisions)
    if (d.pool == "synthetic") {
      pool += d.score;
      if (d.kept) kept += d.score;
      // Reapplying the logged threshold removes no survivor.
      if (d.kept) CHECK(d.score <= d.threshold);
      else CHECK(d.score >= d.threshold);
    }
  CHECK(kept / 150 < pool / 200);
  const auto again = filter_text_pools(syn, real, cfg);
  CHECK(again.synthetic == r.synthetic);
  const auto log = format_decision_log(r.decisions, "abc123");
  CHECK(log.rfind("id,pool,score,kept,threshold,config_hash\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 301);
}

TEST_CASE("image filter") {
  Rng rng(4);
  MatrixXd ref(200, 2);
  for (int i = 0; i < 200; ++i) ref.row(i) << rng.normal(), rng.normal();
  MatrixXd cand(8, 2);
  cand << 0.1, 0, -0.2, 0.1, 0, 0.3, 0.2, -0.1, 6, 6, -0.1, -0.2, 0.3, 0.1, -5, 7;
  const VectorXd d = mahalanobis_scores(cand, ref);
  std::vector<std::string> ids;
  for (int i = 0; i < 8; ++i) ids.push_back("c" + std::to_string(i));
  const auto r = filter_by_distance(d, ids, 0.25);
  CHECK(r.kept == std::vector<std::size_t>{0, 1, 2, 3, 5, 6});
  CHECK(r.decisions.size() == 8);

  const auto same = filter_by_distance(VectorXd::Zero(8), ids, 0.25);
  CHECK(same.kept == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});

  // Whole-pool entry point scores in the composite embedding.
  MatrixXd base(300, 4);
  for (int i = 0; i < 300; ++i)
    for (int j = 0; j < 4; ++j) base(i, j) = rng.normal();
  MatrixXd syn = base.topRows(8);
  syn.row(3).setConstant(9.0);
  const auto pr = filter_image_pool(points(syn), points(base), {0.25});
  CHECK(pr.kept.size() == 6);
  CHECK(std::find(pr.kept.begin(), pr.kept.end(), 3) == pr.kept.end());
  CHECK_THROWS_AS(ImageFilterConfig{1.0}.validate(), Error);
}

TEST_CASE("volume schedules") {
  CHECK(volume_for_generation(VolumeSchedule::text_expanding(), 1) == 10000);
  CHECK(volume_for_generation(VolumeSchedule::text_expanding(), 4) == 25000);
  CHECK(volume_for_generation(VolumeSchedule::text_expanding(), 6) == 25000);
  CHECK(volume_for_generation(VolumeSchedule::image_expanding(), 2) == 1500);
  for (int t = 1; t <= 4; ++t) CHECK(volume_for_generation(VolumeSchedule::constant(700), t) == 700);
  CHECK_THROWS_AS(volume_for_generation(VolumeSchedule::constant(700), 0), Error);
  CHECK_THROWS_AS(volume_for_generation({100, {0.5}}, 1), Error);
}

}
