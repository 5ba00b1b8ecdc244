#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "collapselab/corpus.hpp"
#include "collapselab/lexicon.hpp"

namespace collapselab {
class FindingDetector;
}

namespace collapselab::textmetrics {

// Repetition rate of order n: share of DISTINCT n-grams (within documents)
// that occur more than once.
inline constexpr const char* kRepetitionDefinition = "distinct-ngram denominator";

struct LexicalReport {
  double ttr = 0.0;
  std::size_t total_words = 0;
  std::size_t distinct_words = 0;
  std::size_t vocabulary_size = 0;  // distinct words, stopwords excluded
  std::array<double, 3> repetition_rate{};
  double mean_length = 0.0;
  double sd_length = 0.0;
  double uniqueness = 0.0;
  double top_opening_trigram_share = 0.0;
  std::string top_opening_trigram;
};

LexicalReport lexical_profile(const std::vector<Document>& documents, const std::set<std::string>& stopwords);
double repetition_rate(const std::vector<std::vector<std::string>>& token_lists, std::size_t n);

struct MedicalTermReport {
  double density = 0.0;  // matched tokens / total tokens
  std::size_t total_words = 0;
  std::size_t matched_tokens = 0;
  std::size_t matches = 0;
  std::size_t unique_terms = 0;
  std::map<std::string, double> per_category_per_1000;
  std::map<Tier, std::size_t> per_tier;
};

MedicalTermReport medical_term_metrics(const std::vector<Document>& documents, const Lexicon& lexicon);

struct CoherenceReport {
  double score = 0.0;
  std::size_t documents_scored = 0;
  std::size_t documents_skipped = 0;  // fewer than two sentences
};

// Mean cosine of tf-idf vectors of adjacent sentences; idf is smoothed
// (log((1+N)/(1+df)) + 1) over the sentence population of the input.
CoherenceReport coherence_score(const std::vector<Document>& documents);

struct CooccurrenceMatrix {
  std::array<std::array<double, 10>, 10> conditional{};  // P(j | i)
  std::array<std::size_t, 10> marginal{};
  std::array<std::array<std::size_t, 10>, 10> joint{};
  std::array<bool, 10> row_defined{};
};

CooccurrenceMatrix cooccurrence_matrix(const std::vector<Document>& documents, const FindingDetector& detector);
// Same computation from precomputed presence sets.
CooccurrenceMatrix cooccurrence_from_sets(const std::vector<std::set<std::string>>& present);

struct ContentReport {
  double clinical_per_1000 = 0.0;
  double template_per_1000 = 0.0;
  std::optional<double> ratio;  // empty when template rate is 0 (infinite)
  std::size_t clinical_hits = 0;
  std::size_t template_hits = 0;
  std::size_t total_words = 0;
};

ContentReport content_ratio(const std::vector<Document>& documents, const Lexicon& lexicon);

struct GroundingReport {
  double topic_cosine = 0.0;
  double important_term_jaccard = 0.0;
  double grounding = 0.0;  // share of output medical terms found in context
  bool output_has_terms = false;
};

struct TextPair {
  std::string context;
  std::string output;
};

// Evaluates every pair with idf fitted on all contexts and outputs.
std::vector<GroundingReport> grounding_metrics(const std::vector<TextPair>& pairs, const Lexicon& lexicon);
GroundingReport grounding_metrics(const std::string& context, const std::string& output, const Lexicon& lexicon);

struct Readability {
  double flesch = 0.0;
  std::size_t sentences = 0;
  std::size_t words = 0;
  std::size_t syllables = 0;
};

// Vowel groups (a e i o u y) per word, minus a silent final "e" (not "le")
// when the word has more than one group; at least one per word.
std::size_t count_syllables(std::string_view word);
Readability readability(std::string_view text);

struct OverlapScores {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  bool empty_candidate = false;
};

// Corpus BLEU-1..4 (uniform weights, brevity penalty) and mean ROUGE-L F1.
OverlapScores overlap_scores(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

std::map<std::string, double> section_completeness(const std::vector<Document>& documents,
                                                   const std::vector<std::string>& schema);

// Term-frequency x idf vectors over a shared population, as sparse maps.
class TfIdf {
 public:
  explicit TfIdf(const std::vector<std::vector<std::string>>& population);
  std::map<std::string, double> vector(const std::vector<std::string>& tokens) const;
  double idf(const std::string& term) const;

 private:
  std::map<std::string, std::size_t> df_;
  std::size_t n_ = 0;
};

double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b);

}  // namespace collapselab::textmetrics
