#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "collapselab/corpus.hpp"
#include "collapselab/error.hpp"
#include "collapselab/ngram.hpp"
#include "collapselab/population.hpp"
#include "collapselab/rng.hpp"
#include "collapselab/text.hpp"
#include "support.hpp"

using namespace collapselab;

namespace {

using Seqs = std::vector<std::vector<std::string>>;

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double distribution_sum(const std::vector<std::pair<std::int32_t, double>>& d) {
  double s = 0.0;
  for (const auto& [id, p] : d) s += p;
  return s;
}

FeatureRecord record(Eigen::VectorXd v, Sex sex = Sex::Female, int age = 50) {
  return {std::move(v), {}, {sex, age}, Provenance::real()};
}

Population gaussian_cloud(std::size_t n, const Eigen::VectorXd& mean, double sd, Rng& rng) {
  Population out;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd v(mean.size());
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = mean[j] + sd * rng.normal();
    out.push_back(record(v, rng.bernoulli(0.5) ? Sex::Male : Sex::Female, 18 + static_cast<int>(rng.index(80))));
  }
  return out;
}

}  // namespace

TEST_SUITE("genkernel") {

TEST_CASE("add-k bigram probability matches the hand tally") {
  const double k = 0.01;
  const auto m = NGramModel::fit({split_words("a b . a b .")}, 2, k);
  const double v = static_cast<double>(m.outcome_count());
  CHECK(v == 5);  // a, b, ".", end, unknown
  const std::vector<std::int32_t> ctx = {m.id("a")};
  CHECK(m.probability(ctx, m.id("b")) == doctest::Approx((2 + k) / (2 + k * v)).epsilon(1e-12));
  CHECK(m.ngram_count(ctx, m.id("b")) == 2);
}

TEST_CASE("single-token corpus gives a smoothed point mass") {
  const double k = 0.01;
  const auto m = NGramModel::fit({{"x"}}, 2, k);
  const auto view = m.lookup(std::span<const std::int32_t>{});
  CHECK(view.total == 2);  // x and the end sentinel
  CHECK(m.probability(view, m.id("x")) == doctest::Approx((1 + k) / (2 + k * m.outcome_count())));
  CHECK(m.probability(view, NGramModel::kUnknown) == doctest::Approx(k / (2 + k * m.outcome_count())));
  // After the begin context the model is a point mass on x, up to smoothing.
  const auto start = m.start_history();
  CHECK(m.probability(start, m.id("x")) > 0.97);
}

TEST_CASE("conditional distributions sum to one") {
  ToyPopulationSpec spec;
  spec.document_count = 200;
  spec.vocabulary_size = 100;
  const auto corpus = synthesize_toy_corpus(spec);
  const auto m = fit_ngram(corpus, 3, 0.01);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto& d = corpus.documents[rng.index(corpus.size())];
    auto hist = m.start_history();
    const auto ids = m.encode(d.tokens());
    hist.insert(hist.end(), ids.begin(), ids.begin() + static_cast<long>(rng.index(ids.size())));
    const auto view = m.lookup(hist);
    double total = 0.0;
    for (std::size_t id = 0; id < m.outcome_count(); ++id) total += m.probability(view, static_cast<std::int32_t>(id));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    for (const auto& cfg : {SamplerConfig::unconditional(), SamplerConfig::conditional(), SamplerConfig{1.3, 0, 1.0, 64, 1.0}}) {
      std::vector<std::int32_t> emitted(ids.begin(), ids.begin() + std::min<long>(5, static_cast<long>(ids.size())));
      CHECK(distribution_sum(decoding_distribution(m, hist, emitted, cfg)) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("fit is independent of document order") {
  ToyPopulationSpec spec;
  spec.document_count = 100;
  auto docs = synthesize_toy_corpus(spec).documents;
  const auto a = fit_ngram(docs, 3, 0.01);
  std::reverse(docs.begin(), docs.end());
  Rng rng(5);
  rng.shuffle(docs);
  const auto b = fit_ngram(docs, 3, 0.01);
  CHECK(a == b);
  CHECK(a.serialize() == b.serialize());
}

TEST_CASE("fit preconditions") {
  CHECK_THROWS_AS(NGramModel::fit({}, 3, 0.01), Error);
  CHECK_THROWS_AS(NGramModel::fit({{"a"}}, 1, 0.01), Error);
  CHECK_THROWS_AS(NGramModel::fit({{"a"}}, 6, 0.01), Error);
  CHECK_THROWS_AS(NGramModel::fit({{"a"}}, 3, 0.0), Error);
  CHECK_THROWS_AS(fit_ngram(std::vector<Document>{}, 3, 0.01), Error);
}

TEST_CASE("n-gram model serialization round trip") {
  ToyPopulationSpec spec;
  spec.document_count = 60;
  const auto m = fit_ngram(synthesize_toy_corpus(spec), 3, 0.01);
  const auto back = NGramModel::deserialize(m.serialize());
  CHECK(back == m);
  CHECK_THROWS_AS(NGramModel::deserialize("not a model"), Error);
}

TEST_CASE("near-zero temperature decodes greedily and matches top-k 1") {
  ToyPopulationSpec spec;
  spec.document_count = 200;
  const auto m = fit_ngram(synthesize_toy_corpus(spec), 3, 0.01);
  SamplerConfig greedy{1e-7, 50, 0.95, 80, 1.0};
  SamplerConfig top1{0.9, 1, 0.3, 80, 1.0};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = decode_sequence(m, {}, greedy, seed);
    CHECK(a == decode_sequence(m, {}, greedy, seed + 100));
    CHECK(a == decode_sequence(m, {}, top1, seed));
  }
}

TEST_CASE("memorized single sequence is reproduced under any config") {
  const auto m = NGramModel::fit({{"a", "b", "c"}}, 3, 0.01);
  for (const auto& cfg : {SamplerConfig::unconditional(), SamplerConfig::conditional(), SamplerConfig{1e-7, 0, 1.0, 20, 1.0}})
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      CHECK(decode_sequence(m, {}, cfg, seed) == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("sampling is seeded, tagged and bounded") {
  ToyPopulationSpec spec;
  spec.document_count = 100;
  const auto m = fit_ngram(synthesize_toy_corpus(spec), 3, 0.01);
  SamplerConfig cfg = SamplerConfig::unconditional();
  cfg.max_length = 12;
  const auto a = sample_text(m, cfg, 30, 77, 3);
  const auto b = sample_text(m, cfg, 30, 77, 3);
  REQUIRE(a.documents.size() == 30);
  CHECK(format_line_records(a.documents) == format_line_records(b.documents));
  CHECK(format_line_records(a.documents) != format_line_records(sample_text(m, cfg, 30, 78, 3).documents));
  for (const auto& d : a.documents) {
    CHECK(d.provenance() == Provenance::synthetic_from(3));
    CHECK(d.tokens().size() <= 12);
  }
  CHECK_THROWS_AS((SamplerConfig{0.0, 50, 0.9, 10, 1.0}).validate(), Error);
  CHECK_THROWS_AS((SamplerConfig{0.7, 50, 1.5, 10, 1.0}).validate(), Error);
  CHECK_THROWS_AS((SamplerConfig{0.7, 50, 0.9, 10, 0.9}).validate(), Error);
}

TEST_CASE("top-k and top-p truncate the candidate set") {
  ToyPopulationSpec spec;
  spec.document_count = 300;
  const auto m = fit_ngram(synthesize_toy_corpus(spec), 2, 0.01);
  const auto hist = m.start_history();
  const auto k3 = decoding_distribution(m, hist, {}, SamplerConfig{1.0, 3, 1.0, 10, 1.0});
  CHECK(k3.size() == 3);
  const auto p = decoding_distribution(m, hist, {}, SamplerConfig{1.0, 0, 0.5, 10, 1.0});
  const auto full = decoding_distribution(m, hist, {}, SamplerConfig{1.0, 0, 1.0, 10, 1.0});
  CHECK(p.size() < full.size());
  // Everything except the unknown token is a candidate.
  CHECK(full.size() == m.outcome_count() - 1);
  CHECK(std::none_of(full.begin(), full.end(), [](const auto& e) { return e.first == NGramModel::kUnknown; }));
}

TEST_CASE("repetition penalty lowers already emitted tokens") {
  const auto m = NGramModel::fit({split_words("a b a c a b a d")}, 2, 0.01);
  const std::vector<std::int32_t> hist = {m.id("a")};
  auto prob = [&](double penalty, std::vector<std::int32_t> emitted) {
    for (const auto& [id, p] : decoding_distribution(m, hist, emitted, SamplerConfig{1.0, 0, 1.0, 10, penalty}))
      if (id == m.id("b")) return p;
    return 0.0;
  };
  CHECK(prob(1.5, {m.id("b")}) < prob(1.0, {m.id("b")}));
  CHECK(prob(1.5, {}) == doctest::Approx(prob(1.0, {})));
}

TEST_CASE("perplexity of a uniform model equals the outcome count") {
  const auto m = NGramModel::fit({{"a", "b", "c", "d"}}, 2, 1e12);
  CHECK(model_perplexity(m, Seqs{{"a", "c"}, {"d"}}) == doctest::Approx(double(m.outcome_count())).epsilon(1e-6));
}

TEST_CASE("perplexity approaches one on a memorized sequence") {
  const auto m = NGramModel::fit({{"a", "b", "c"}}, 3, 1e-9);
  CHECK(model_perplexity(m, Seqs{{"a", "b", "c"}}) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("order-2 perplexity matches the hand chain rule") {
  const double k = 0.01;
  const auto m = NGramModel::fit({{"a", "b", "a", "b"}}, 2, k);
  const double v = 4;  // a, b, end, unknown
  const double pa = (1 + k) / (1 + v * k);
  const double pb = (2 + k) / (2 + v * k);
  const double pend = (1 + k) / (2 + v * k);
  const double expected = std::exp(-(std::log(pa) + std::log(pb) + std::log(pend)) / 3.0);
  CHECK(model_perplexity(m, Seqs{{"a", "b"}}) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("conditional generation follows a point-mass context") {
  std::vector<Document> docs;
  for (const std::string x : {"alpha", "beta", "gamma", "delta"})
    for (int r = 0; r < 5; ++r)
      docs.emplace_back(x + std::to_string(r), std::vector<Section>{{"CONTEXT", "dx: " + x}, {"TARGET", "take " + x}});
  const auto m = fit_ngram(docs, 4, 0.01);
  for (const std::string x : {"alpha", "beta", "gamma", "delta"}) {
    const auto out = conditional_generate(m, "dx: " + x, SamplerConfig::conditional(), 11);
    CHECK(text::words(out) == std::vector<std::string>{"take", x});
    CHECK(out == conditional_generate(m, "dx: " + x, SamplerConfig::conditional(), 11));
  }
  CHECK_THROWS_AS(conditional_generate(m, "", SamplerConfig::conditional(), 1), Error);
  CHECK_THROWS_AS(conditional_generate(m, " . ", SamplerConfig::conditional(), 1), Error);
}

TEST_CASE("refit on a large sample reproduces the unigram distribution") {
  ToyPopulationSpec spec;
  spec.vocabulary_size = 60;
  spec.document_count = 400;
  const auto source = fit_ngram(synthesize_toy_corpus(spec), 2, 0.01);
  const SamplerConfig pure{1.0, 0, 1.0, 400, 1.0};
  std::vector<Document> sample;
  std::size_t tokens = 0;
  for (std::uint64_t batch = 0; tokens < 60000; ++batch) {
    auto s = sample_text(source, pure, 200, derive_seed(9, batch), 1).documents;
    for (auto& d : s) {
      tokens += d.tokens().size();
      sample.push_back(std::move(d));
    }
  }
  const auto refit = fit_ngram(sample, 2, 0.01);
  const auto sv = source.lookup(std::span<const std::int32_t>{});
  const auto rv = refit.lookup(std::span<const std::int32_t>{});
  double tv = 0.0;
  for (const auto& tok : source.vocabulary())
    tv += std::abs(source.probability(sv, source.id(tok)) - refit.probability(rv, refit.id(tok)));
  CHECK(tv / 2.0 < 0.05);
}

TEST_CASE("single-component EM is the closed form") {
  Rng rng(1);
  Eigen::VectorXd mean(3);
  mean << 1.0, -2.0, 0.5;
  const auto pop = gaussian_cloud(400, mean, 1.5, rng);
  const auto fit = fit_population_model(pop, {1, 1e-8, 50, 7});
  const Eigen::MatrixXd rows = feature_matrix(pop);
  const Eigen::VectorXd mu = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - mu.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / double(rows.rows());
  cov.diagonal().array() += kCovarianceFloor;
  CHECK((fit.gmm.means[0] - mu).norm() < 1e-10);
  CHECK((fit.gmm.covariances[0] - cov).norm() < 1e-10);
  CHECK(fit.gmm.weights[0] == doctest::Approx(1.0));
}

TEST_CASE("EM recovers two separated clusters with a monotone likelihood") {
  Rng rng(2);
  Eigen::VectorXd a = Eigen::VectorXd::Constant(2, -5.0), b = Eigen::VectorXd::Constant(2, 5.0);
  auto pop = gaussian_cloud(1500, a, 1.0, rng);
  const auto more = gaussian_cloud(1500, b, 1.0, rng);
  pop.insert(pop.end(), more.begin(), more.end());
  const auto fit = fit_population_model(pop, {2, 1e-8, 200, 3});
  std::vector<Eigen::VectorXd> means = fit.gmm.means;
  std::sort(means.begin(), means.end(), [](const auto& x, const auto& y) { return x[0] < y[0]; });
  CHECK((means[0] - a).norm() < 0.1);
  CHECK((means[1] - b).norm() < 0.1);
  for (std::size_t i = 1; i < fit.log_likelihood_trace.size(); ++i)
    CHECK(fit.log_likelihood_trace[i] >= fit.log_likelihood_trace[i - 1] - 1e-8);
  fit.gmm.validate();
  fit.attributes.validate(2);
}

TEST_CASE("EM preconditions") {
  Rng rng(4);
  auto pop = gaussian_cloud(5, Eigen::VectorXd::Zero(3), 1.0, rng);
  CHECK_THROWS_AS(fit_population_model(pop, {2, 1e-6, 10, 0}), Error);  // needs 8 records
  pop = gaussian_cloud(50, Eigen::VectorXd::Zero(3), 1.0, rng);
  pop[3].vector[1] = std::nan("");
  CHECK_THROWS_AS(fit_population_model(pop, {2, 1e-6, 10, 0}), Error);
}

TEST_CASE("component demographics follow the records") {
  Rng rng(6);
  auto left = gaussian_cloud(500, Eigen::VectorXd::Constant(2, -6.0), 1.0, rng);
  auto right = gaussian_cloud(500, Eigen::VectorXd::Constant(2, 6.0), 1.0, rng);
  for (auto& r : left) r.demographics = {Sex::Male, 30};
  for (auto& r : right) r.demographics = {Sex::Female, 80};
  left.insert(left.end(), right.begin(), right.end());
  const auto fit = fit_population_model(left, {2, 1e-8, 100, 1});
  for (std::size_t k = 0; k < 2; ++k) {
    const bool is_left = fit.gmm.means[k][0] < 0;
    CHECK(fit.attributes.components[k].male_probability == doctest::Approx(is_left ? 1.0 : 0.0).epsilon(1e-6));
    CHECK(fit.attributes.components[k].age_histogram[age_bin(is_left ? 30 : 80)] == doctest::Approx(1.0).epsilon(1e-6));
  }
  const auto marginal = fit.attributes.marginal(fit.gmm.weights);
  CHECK(marginal.male_probability == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("sampling a point-mass mixture") {
  GaussianMixtureModel gmm{{1.0}, {Eigen::Vector2d(3.0, -1.0)}, {Eigen::Matrix2d::Identity() * kCovarianceFloor}};
  DemographicDistribution d;
  d.male_probability = 1.0;
  d.age_histogram[age_bin(40)] = 1.0;
  const AttributeModel attrs{{d}};
  const auto pop = sample_population(gmm, attrs, 200, 5, 2);
  REQUIRE(pop.size() == 200);
  for (const auto& r : pop) {
    CHECK((r.vector - gmm.means[0]).norm() < 1e-2);
    CHECK(r.demographics.sex == Sex::Male);
    CHECK(age_bin(r.demographics.age) == age_bin(40));
    CHECK(r.labels.empty());
    CHECK(r.provenance == Provenance::synthetic_from(2));
  }
  CHECK(sample_population(gmm, attrs, 0, 5, 2).empty());
}

TEST_CASE("standard normal sample mean") {
  GaussianMixtureModel gmm{{1.0}, {Eigen::VectorXd::Zero(1)}, {Eigen::MatrixXd::Identity(1, 1)}};
  DemographicDistribution d;
  d.age_histogram.fill(1.0 / kAgeBins);
  const auto pop = sample_population(gmm, {{d}}, 10000, 8, 1);
  double s = 0.0;
  for (const auto& r : pop) s += r.vector[0];
  CHECK(std::abs(s / 10000.0) < 0.05);
}

TEST_CASE("population model serialization round trip") {
  ToyFeatureSpec spec;
  spec.records = 600;
  const auto fit = fit_population_model(synthesize_toy_population(spec), {4, 1e-6, 50, 2});
  const auto text = serialize_population_model(fit.gmm, fit.attributes);
  const auto [gmm, attrs] = deserialize_population_model(text);
  CHECK(serialize_population_model(gmm, attrs) == text);
  CHECK(gmm.components() == 4);
}

TEST_CASE("population file round trip") {
  ToyFeatureSpec spec;
  spec.records = 30;
  const auto pop = synthesize_toy_population(spec);
  std::vector<std::string> labels;
  for (const auto& [name, prev] : spec.labels) labels.push_back(name);
  const auto back = parse_population(format_population(pop, labels));
  REQUIRE(back.size() == pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) {
    CHECK((back[i].vector - pop[i].vector).norm() < 1e-12);
    CHECK(back[i].labels == pop[i].labels);
    CHECK(back[i].demographics == pop[i].demographics);
  }
}

}
