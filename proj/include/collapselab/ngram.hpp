#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "collapselab/corpus.hpp"

namespace collapselab {

// Decoding controls. Scores are log-probabilities; the pipeline is
// repetition penalty -> temperature -> top-k -> top-p -> renormalize.
struct SamplerConfig {
  double temperature = 0.7;
  std::size_t top_k = 50;  // 0 means unlimited
  double top_p = 0.95;
  std::size_t max_length = 256;
  double repetition_penalty = 1.0;

  static SamplerConfig unconditional() { return {0.7, 50, 0.95, 256, 1.0}; }
  static SamplerConfig conditional() { return {0.8, 50, 0.9, 512, 1.1}; }

  // Temperatures at or below this decode greedily.
  static constexpr double kGreedyTemperature = 1e-6;

  void validate() const;
  bool operator==(const SamplerConfig&) const = default;
};

// Counters a decoder reports back to the run log.
struct SamplingLog {
  std::size_t tokens = 0;
  std::size_t argmax_fallbacks = 0;
  std::size_t truncated_at_max_length = 0;
  std::size_t empty_retries = 0;
};

// One smoothed next-token distribution, sparse over observed continuations.
struct ContextView {
  std::uint64_t total = 0;
  // Continuations ordered by count desc, then id asc.
  std::span<const std::pair<std::int32_t, std::uint32_t>> ranked;
  // Same entries ordered by id, for lookups.
  std::span<const std::pair<std::int32_t, std::uint32_t>> by_id;
  std::size_t context_length = 0;

  std::uint32_t count(std::int32_t token) const;
};

// Add-k smoothed n-gram model with backoff to the longest observed context.
// Outcome ids: 0 = end sentinel, 1 = unknown, 2.. = corpus tokens ordered by
// frequency desc then spelling. The begin sentinel only appears in contexts.
class NGramModel {
 public:
  static constexpr std::int32_t kEnd = 0;
  static constexpr std::int32_t kUnknown = 1;
  static constexpr int kMaxOrder = 5;

  static NGramModel fit(const std::vector<std::vector<std::string>>& sequences, int order, double add_k);

  int order() const { return order_; }
  double add_k() const { return add_k_; }
  // Size of the outcome space (tokens + end + unknown).
  std::size_t outcome_count() const { return vocab_.size(); }
  std::int32_t begin_id() const { return static_cast<std::int32_t>(vocab_.size()); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  const std::string& token(std::int32_t id) const;
  std::int32_t id(const std::string& token) const;

  // Raw tally of (context..., target); context given oldest first.
  std::uint64_t ngram_count(std::span<const std::int32_t> context, std::int32_t target) const;
  std::uint64_t context_count(std::span<const std::int32_t> context) const;

  // Distribution used after `history` (padded with begin sentinels).
  ContextView lookup(std::span<const std::int32_t> history) const;
  double probability(std::span<const std::int32_t> history, std::int32_t target) const;
  double probability(const ContextView& view, std::int32_t target) const;

  // History prefix of begin sentinels for a fresh sequence.
  std::vector<std::int32_t> start_history() const;
  std::vector<std::int32_t> encode(const std::vector<std::string>& tokens) const;

  std::string serialize() const;
  static NGramModel deserialize(std::string_view data);

  bool operator==(const NGramModel& other) const;

 private:
  struct Key {
    std::array<std::int32_t, kMaxOrder - 1> ids{};
    std::uint8_t length = 0;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  struct Table {
    std::uint64_t total = 0;
    std::vector<std::pair<std::int32_t, std::uint32_t>> ranked;
    std::vector<std::pair<std::int32_t, std::uint32_t>> by_id;
  };

  static Key make_key(std::span<const std::int32_t> context);
  void finalize_tables();
  const Table* find(std::span<const std::int32_t> context) const;

  int order_ = 2;
  double add_k_ = 0.01;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::unordered_map<Key, Table, KeyHash> tables_;
};

NGramModel fit_ngram(const Corpus& corpus, int order, double add_k);
NGramModel fit_ngram(const std::vector<Document>& documents, int order, double add_k);

// Candidate next-token probabilities after the full decoding pipeline;
// exposed for tests. `emitted` lists tokens already produced in this text.
std::vector<std::pair<std::int32_t, double>> decoding_distribution(const NGramModel& model,
                                                                    std::span<const std::int32_t> history,
                                                                    const std::vector<std::int32_t>& emitted,
                                                                    const SamplerConfig& config,
                                                                    SamplingLog* log = nullptr);

// Decodes one token sequence (without sentinels) continuing `prime`.
std::vector<std::string> decode_sequence(const NGramModel& model, const std::vector<std::string>& prime,
                                         const SamplerConfig& config, std::uint64_t seed, SamplingLog* log = nullptr);

struct SampledText {
  std::vector<Document> documents;
  SamplingLog log;
};

// Document i draws from the stream derived from (seed, i).
SampledText sample_text(const NGramModel& model, const SamplerConfig& config, std::size_t n_docs,
                        std::uint64_t seed, int generation);

double model_perplexity(const NGramModel& model, const std::vector<std::vector<std::string>>& sequences);
double model_perplexity(const NGramModel& model, const std::vector<Document>& documents);

// Primes the model with the context sections and a marker for the target
// section, then decodes until the end sentinel. Returns the target text.
std::string conditional_generate(const NGramModel& model, const std::vector<Section>& context,
                                 const std::string& target_section, const SamplerConfig& config, std::uint64_t seed,
                                 SamplingLog* log = nullptr);
std::string conditional_generate(const NGramModel& model, const std::string& context, const SamplerConfig& config,
                                 std::uint64_t seed);

// Rebuilds a document from kernel tokens (section markers split sections).
std::vector<Section> sections_from_tokens(const std::vector<std::string>& tokens);

}  // namespace collapselab
