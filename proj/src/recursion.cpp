#include "collapselab/recursion.hpp"

#include <algorithm>
#include <cmath>

#include "collapselab/error.hpp"
#include "collapselab/rng.hpp"

namespace collapselab {

std::string to_string(KernelKind k) { return k == KernelKind::Text ? "text" : "population"; }

KernelKind parse_kernel_kind(std::string_view s) {
  if (s == "text") return KernelKind::Text;
  if (s == "population") return KernelKind::Population;
  throw Error("unknown kernel kind '" + std::string(s) + "'");
}

void ChainConfig::validate() const {
  if (generations < 1) throw Error("chain needs at least one generation after the real fit");
  const auto g1 = static_cast<std::size_t>(generations) + 1;
  if (sizes.size() != 1 && sizes.size() != g1) throw Error("size schedule must have 1 or G+1 entries");
  for (auto s : sizes)
    if (s == 0) throw Error("size schedule entries must be positive");
  if (real_fraction.size() != 1 && real_fraction.size() != g1)
    throw Error("real-fraction schedule must have 1 or G+1 entries");
  for (double r : real_fraction)
    if (!(r >= 0.0 && r <= 1.0)) throw Error("real fraction must lie in [0, 1]");
  if (text_filter) text_filter->validate();
  if (image_filter) image_filter->validate();
  if (kernel == KernelKind::Text) {
    if (text.order < 2 || text.order > NGramModel::kMaxOrder) throw Error("n-gram order must lie in [2, 5]");
    if (!(text.add_k > 0.0)) throw Error("add-k must be positive");
    text.sampler.validate();
  } else {
    if (population.em.components == 0) throw Error("mixture needs at least one component");
    if (!(population.sampler.temperature > 0.0 && population.sampler.temperature <= 1.0))
      throw Error("population sampler temperature must lie in (0, 1]");
  }
}

std::size_t ChainConfig::size_at(int t) const {
  return sizes.size() == 1 ? sizes.front() : sizes.at(static_cast<std::size_t>(t));
}

double ChainConfig::real_fraction_at(int t) const {
  if (t == 0) return 1.0;
  return real_fraction.size() == 1 ? real_fraction.front() : real_fraction.at(static_cast<std::size_t>(t));
}

std::size_t ChainConfig::output_size_at(int t) const { return size_at(std::min(t + 1, generations)); }

std::uint64_t generation_seed(std::uint64_t master, int t) {
  return derive_seed(master, 0x9e00 + static_cast<std::uint64_t>(t));
}

namespace {

enum Stream : std::uint64_t { kFit = 1, kSample = 2, kCompose = 3 };

// Seeded choice of k members out of the index list, returned in list order.
std::vector<std::size_t> choose(const std::vector<std::size_t>& candidates, std::size_t k, Rng& rng) {
  if (k >= candidates.size()) return candidates;
  auto picks = rng.sample_without_replacement(candidates.size(), k);
  std::sort(picks.begin(), picks.end());
  std::vector<std::size_t> out;
  out.reserve(k);
  for (auto p : picks) out.push_back(candidates[p]);
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

struct Plan {
  std::size_t real;
  std::size_t synthetic;
};

Plan plan(double real_fraction, std::size_t total) {
  // Rounding guard so 0.29 * 100 stays 29.
  const auto real = static_cast<std::size_t>(std::floor(real_fraction * static_cast<double>(total) + 1e-9));
  return {real, total - real};
}

template <class Record>
void require(std::size_t have, std::size_t need, const char* what) {
  if (have < need)
    throw Error(std::string("insufficient ") + what + " pool: need " + std::to_string(need) + ", have " +
                std::to_string(have) + " (deficit " + std::to_string(need - have) + ")");
}

template <class Record>
Composed<Record> assemble(const std::vector<Record>& real_pool, const std::vector<std::size_t>& real_candidates,
                          const std::vector<Record>& synthetic_pool,
                          const std::vector<std::size_t>& synthetic_candidates, const Plan& p, Composition comp,
                          std::uint64_t seed) {
  require<Record>(real_candidates.size(), p.real, "real");
  require<Record>(synthetic_candidates.size(), p.synthetic, "synthetic");
  Rng real_rng(derive_seed(seed, 1));
  Rng syn_rng(derive_seed(seed, 2));
  Composed<Record> out;
  out.records.reserve(p.real + p.synthetic);
  for (auto i : choose(real_candidates, p.real, real_rng)) out.records.push_back(real_pool[i]);
  for (auto i : choose(synthetic_candidates, p.synthetic, syn_rng)) out.records.push_back(synthetic_pool[i]);
  comp.real = p.real;
  comp.synthetic = p.synthetic;
  out.composition = std::move(comp);
  return out;
}

}  // namespace

Composed<Document> compose_training_set(int t, const std::vector<Document>& real_pool,
                                        const std::vector<Document>& synthetic_pool, double real_fraction,
                                        std::size_t total, const std::optional<TextFilterConfig>& filter,
                                        std::uint64_t seed) {
  if (!(real_fraction >= 0.0 && real_fraction <= 1.0)) throw Error("real fraction must lie in [0, 1]");
  if (total == 0) throw Error("training set size must be positive");
  const Plan p = plan(t == 0 ? 1.0 : real_fraction, total);
  Composition comp;
  comp.real_pool = real_pool.size();
  comp.synthetic_pool = synthetic_pool.size();
  std::vector<std::size_t> real_idx = all_indices(real_pool.size());
  std::vector<std::size_t> syn_idx = all_indices(synthetic_pool.size());
  if (filter && p.synthetic > 0 && !synthetic_pool.empty()) {
    auto r = filter_text_pools(synthetic_pool, real_pool, *filter);
    syn_idx = std::move(r.synthetic);
    if (p.real > 0) real_idx = std::move(r.real);
    comp.decisions = std::move(r.decisions);
  }
  comp.real_survivors = real_idx.size();
  comp.synthetic_survivors = syn_idx.size();
  return assemble(real_pool, real_idx, synthetic_pool, syn_idx, p, std::move(comp), seed);
}

Composed<FeatureRecord> compose_training_set(int t, const Population& real_pool, const Population& synthetic_pool,
                                             double real_fraction, std::size_t total,
                                             const std::optional<ImageFilterConfig>& filter, std::uint64_t seed) {
  if (!(real_fraction >= 0.0 && real_fraction <= 1.0)) throw Error("real fraction must lie in [0, 1]");
  if (total == 0) throw Error("training set size must be positive");
  const Plan p = plan(t == 0 ? 1.0 : real_fraction, total);
  Composition comp;
  comp.real_pool = real_pool.size();
  comp.synthetic_pool = synthetic_pool.size();
  std::vector<std::size_t> real_idx = all_indices(real_pool.size());
  std::vector<std::size_t> syn_idx = all_indices(synthetic_pool.size());
  if (filter && p.synthetic > 0 && !synthetic_pool.empty()) {
    auto r = filter_image_pool(synthetic_pool, real_pool, *filter);
    syn_idx = std::move(r.kept);
    comp.decisions = std::move(r.decisions);
  }
  comp.real_survivors = real_idx.size();
  comp.synthetic_survivors = syn_idx.size();
  return assemble(real_pool, real_idx, synthetic_pool, syn_idx, p, std::move(comp), seed);
}

ChainResult<TextSnapshot> run_chain(const std::vector<Document>& real_pool, const ChainConfig& config,
                                    const TextSnapshotHook& hook) {
  config.validate();
  if (config.kernel != KernelKind::Text) throw Error("text chain called with a population kernel config");
  if (real_pool.size() < config.size_at(0)) throw Error("real pool is smaller than the generation-0 training size");
  ChainResult<TextSnapshot> result;
  std::vector<Document> previous_output;
  for (int t = 0; t <= config.generations; ++t) {
    try {
      const auto seed = generation_seed(config.seed, t);
      auto composed = compose_training_set(t, real_pool, previous_output, config.real_fraction_at(t),
                                           config.size_at(t), config.text_filter, derive_seed(seed, kCompose));
      TextSnapshot snap;
      snap.generation = t;
      snap.model = std::make_shared<const NGramModel>(
          fit_ngram(composed.records, config.text.order, config.text.add_k));
      auto sampled = sample_text(*snap.model, config.text.sampler, config.output_size_at(t),
                                 derive_seed(seed, kSample), t);
      snap.training = std::move(composed.records);
      snap.composition = std::move(composed.composition);
      snap.synthetic = std::move(sampled.documents);
      snap.sampling = sampled.log;
      previous_output = snap.synthetic;
      if (hook) hook(snap);
      result.snapshots.push_back(std::move(snap));
    } catch (const std::exception& e) {
      result.error = "generation " + std::to_string(t) + ": " + e.what();
      break;
    }
  }
  return result;
}

ChainResult<PopulationSnapshot> run_chain(const Population& real_pool, const ChainConfig& config) {
  config.validate();
  if (config.kernel != KernelKind::Population) throw Error("population chain called with a text kernel config");
  if (real_pool.size() < config.size_at(0)) throw Error("real pool is smaller than the generation-0 training size");
  ChainResult<PopulationSnapshot> result;
  Population previous_output;
  for (int t = 0; t <= config.generations; ++t) {
    try {
      const auto seed = generation_seed(config.seed, t);
      auto composed = compose_training_set(t, real_pool, previous_output, config.real_fraction_at(t),
                                           config.size_at(t), config.image_filter, derive_seed(seed, kCompose));
      EmOptions em = config.population.em;
      em.seed = derive_seed(seed, kFit);
      auto fit = fit_population_model(composed.records, em);
      PopulationSnapshot snap;
      snap.generation = t;
      snap.attributes = fit.attributes;
      snap.converged = fit.converged;
      snap.em_iterations = fit.log_likelihood_trace.size();
      snap.model = std::make_shared<const GaussianMixtureModel>(std::move(fit.gmm));
      snap.synthetic = sample_population(*snap.model, snap.attributes, config.output_size_at(t),
                                         derive_seed(seed, kSample), t, config.population.sampler);
      snap.training = std::move(composed.records);
      snap.composition = std::move(composed.composition);
      previous_output = snap.synthetic;
      result.snapshots.push_back(std::move(snap));
    } catch (const std::exception& e) {
      result.error = "generation " + std::to_string(t) + ": " + e.what();
      break;
    }
  }
  return result;
}

}  // namespace collapselab
