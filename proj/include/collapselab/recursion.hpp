#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "collapselab/corpus.hpp"
#include "collapselab/mitigation.hpp"
#include "collapselab/ngram.hpp"
#include "collapselab/population.hpp"

namespace collapselab {

enum class KernelKind { Text, Population };
std::string to_string(KernelKind k);
KernelKind parse_kernel_kind(std::string_view s);

struct TextKernelConfig {
  int order = 3;
  double add_k = 0.01;
  SamplerConfig sampler = SamplerConfig::unconditional();
};

struct PopulationKernelConfig {
  EmOptions em;
  PopulationSamplerConfig sampler;
};

struct ChainConfig {
  int generations = 4;
  // Training-set size per generation 0..G; a single entry applies to all.
  std::vector<std::size_t> sizes = {5000};
  // Real share of the training set per generation 0..G; a single entry
  // applies to generations >= 1. Generation 0 always fits on real data.
  std::vector<double> real_fraction = {0.0};
  std::optional<TextFilterConfig> text_filter;
  std::optional<ImageFilterConfig> image_filter;
  KernelKind kernel = KernelKind::Text;
  TextKernelConfig text;
  PopulationKernelConfig population;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t size_at(int t) const;
  double real_fraction_at(int t) const;
  // Synthetic records generation t emits: enough to feed generation t+1.
  std::size_t output_size_at(int t) const;
};

struct Composition {
  std::size_t real = 0;
  std::size_t synthetic = 0;
  std::size_t real_pool = 0;
  std::size_t real_survivors = 0;
  std::size_t synthetic_pool = 0;
  std::size_t synthetic_survivors = 0;
  std::vector<FilterDecision> decisions;

  std::size_t total() const { return real + synthetic; }
};

template <class Record>
struct Composed {
  std::vector<Record> records;
  Composition composition;
};

// Floor(rho * total) real records drawn without replacement, the remainder
// from the synthetic pool (seeded subsample when the pool is larger).
// Records keep their pool order: real first, then synthetic.
Composed<Document> compose_training_set(int t, const std::vector<Document>& real_pool,
                                        const std::vector<Document>& synthetic_pool, double real_fraction,
                                        std::size_t total, const std::optional<TextFilterConfig>& filter,
                                        std::uint64_t seed);
Composed<FeatureRecord> compose_training_set(int t, const Population& real_pool, const Population& synthetic_pool,
                                             double real_fraction, std::size_t total,
                                             const std::optional<ImageFilterConfig>& filter, std::uint64_t seed);

struct TextSnapshot {
  int generation = 0;
  std::shared_ptr<const NGramModel> model;
  std::vector<Document> training;
  std::vector<Document> synthetic;
  Composition composition;
  SamplingLog sampling;
};

struct PopulationSnapshot {
  int generation = 0;
  std::shared_ptr<const GaussianMixtureModel> model;
  AttributeModel attributes;
  bool converged = false;
  std::size_t em_iterations = 0;
  Population training;
  Population synthetic;
  Composition composition;
};

template <class Snapshot>
struct ChainResult {
  std::vector<Snapshot> snapshots;
  std::optional<std::string> error;  // set when a generation failed

  bool complete() const { return !error.has_value(); }
};

// Per-generation seeds; generation t only reads streams derived from (seed, t).
std::uint64_t generation_seed(std::uint64_t master, int t);

// Each generation refits a fresh kernel on its composed training set.
// Called once per snapshot as it is produced; may drop bulky members.
using TextSnapshotHook = std::function<void(TextSnapshot&)>;
ChainResult<TextSnapshot> run_chain(const std::vector<Document>& real_pool, const ChainConfig& config,
                                    const TextSnapshotHook& hook = {});
ChainResult<PopulationSnapshot> run_chain(const Population& real_pool, const ChainConfig& config);

}  // namespace collapselab
