#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace collapselab {

enum class Tier { General, Intermediate, Specific };

std::string to_string(Tier t);

// Term inventories used by the text metrics. Terms and phrases are stored in
// normalized token form (tokens joined by a single space).
struct Lexicon {
  std::string version;
  std::map<std::string, std::vector<std::string>> categories;
  std::map<std::string, Tier> tiers;
  std::set<std::string> stopwords;
  std::vector<std::string> clinical_instructions;
  std::vector<std::string> templates;

  const std::vector<std::string>& category(const std::string& name) const;
  // Every term across all categories.
  std::set<std::string> all_terms() const;
  // Category of a term (first in name order), empty if unknown.
  std::string category_of(const std::string& term) const;
};

Lexicon parse_lexicon(std::string_view content);
Lexicon load_lexicon(const std::filesystem::path& path);

// Directory holding the shipped lexicon and pattern lists.
std::filesystem::path data_dir();
Lexicon default_lexicon();

std::string normalize_phrase(std::string_view phrase);

struct PhraseMatch {
  std::size_t begin = 0;   // token offset
  std::size_t length = 0;  // tokens covered
  std::string phrase;
};

// Greedy left-to-right, longest-phrase-first matcher over token sequences.
class PhraseMatcher {
 public:
  explicit PhraseMatcher(const std::vector<std::string>& phrases);
  template <typename Range>
  explicit PhraseMatcher(const Range& phrases) : PhraseMatcher(std::vector<std::string>(phrases.begin(), phrases.end())) {}

  std::vector<PhraseMatch> find(const std::vector<std::string>& tokens) const;
  bool empty() const { return by_first_.empty(); }

 private:
  // First token -> candidate phrases, longest first.
  std::unordered_map<std::string, std::vector<std::vector<std::string>>> by_first_;
};

}  // namespace collapselab
