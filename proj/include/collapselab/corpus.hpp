#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace collapselab {

enum class Sex { Male, Female };

std::string to_string(Sex s);
Sex parse_sex(std::string_view s);

inline constexpr int kMinAge = 18;
inline constexpr int kMaxAge = 100;

struct Demographics {
  Sex sex = Sex::Female;
  int age = 50;

  bool operator==(const Demographics&) const = default;
};

// Synthetic records carry the index of the generation whose model emitted
// them; the real-data fit is generation 0.
struct Provenance {
  bool synthetic = false;
  int generation = 0;

  static Provenance real() { return {}; }
  static Provenance synthetic_from(int generation);

  bool is_real() const { return !synthetic; }
  bool operator==(const Provenance&) const = default;
};

std::string to_string(const Provenance& p);

using Section = std::pair<std::string, std::string>;

// Immutable, validated text record. Tokens are derived once at construction
// so the value can be shared across threads.
class Document {
 public:
  Document(std::string id, std::vector<Section> sections, Provenance provenance = Provenance::real(),
           std::set<std::string> labels = {}, std::optional<Demographics> demographics = std::nullopt);

  const std::string& id() const { return id_; }
  const std::vector<Section>& sections() const { return sections_; }
  const Provenance& provenance() const { return provenance_; }
  const std::set<std::string>& labels() const { return labels_; }
  const std::optional<Demographics>& demographics() const { return demographics_; }

  // Text of the named section, or nullptr when absent.
  const std::string* section(std::string_view name) const;

  // Sections joined by blank lines.
  std::string full_text() const;
  // Normalized word tokens across all sections.
  const std::vector<std::string>& words() const { return words_; }
  // Kernel view: section markers, words and sentence terminators.
  const std::vector<std::string>& tokens() const { return tokens_; }

  Document with_provenance(Provenance p) const;
  Document with_id(std::string id) const;

 private:
  std::string id_;
  std::vector<Section> sections_;
  Provenance provenance_;
  std::set<std::string> labels_;
  std::optional<Demographics> demographics_;
  std::vector<std::string> tokens_;
  std::vector<std::string> words_;
};

enum class SplitRole { Train, Val, Test };

struct Corpus {
  std::vector<Document> documents;
  std::optional<SplitRole> split;

  std::size_t size() const { return documents.size(); }
  bool empty() const { return documents.empty(); }
};

enum class CorpusFormat { SectionedText, LineRecord };

CorpusFormat parse_corpus_format(std::string_view s);

Corpus ingest_documents(const std::filesystem::path& path, CorpusFormat format);
Corpus parse_sectioned_text(std::string_view content);
Corpus parse_line_records(std::string_view content);

void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs, CorpusFormat format);
std::string format_sectioned_text(const std::vector<Document>& docs);
std::string format_line_records(const std::vector<Document>& docs);

struct CorpusSplit {
  Corpus train;
  Corpus val;
  Corpus test;
};

// Stratified by label multiset; deterministic under seed.
CorpusSplit split_corpus(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed);

// The fixed condition list tracked by co-occurrence and safety analysis.
inline constexpr std::array<std::string_view, 10> kConditions = {
    "pneumonia", "effusion", "edema", "atelectasis", "pneumothorax",
    "consolidation", "mass", "nodule", "fracture", "cardiomegaly"};

using ConditionMatrix = std::array<std::array<double, 10>, 10>;

struct ToyPopulationSpec {
  std::size_t vocabulary_size = 2000;
  double zipf_exponent = 1.1;
  std::size_t document_count = 1000;
  std::vector<std::string> sections = {"FINDINGS", "IMPRESSION"};
  // Row i: P(condition j | condition i). Unit diagonal.
  ConditionMatrix cooccurrence = default_cooccurrence();
  // Relative frequency with which each condition seeds a document's labels.
  std::array<double, 10> seed_weights = {1.4, 1.6, 1.0, 1.2, 0.5, 0.6, 0.4, 0.5, 0.3, 1.8};
  double finding_probability = 0.6;
  double male_fraction = 0.532;
  double age_mean = 64.6;
  double age_sd = 17.3;
  int min_sentences = 2;
  int max_sentences = 4;
  int min_sentence_words = 4;
  int max_sentence_words = 10;
  std::uint64_t seed = 42;

  static ConditionMatrix default_cooccurrence();
  void validate() const;
};

// Filler word for Zipf rank r (1-based). Disjoint from the lexicon and
// stopword lists shipped with the project.
std::string toy_word(std::size_t rank);

Corpus synthesize_toy_corpus(const ToyPopulationSpec& spec);

}  // namespace collapselab
