#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace collapselab {

enum class Polarity { Absent, Negated, Positive };
std::string to_string(Polarity p);

struct PatternList {
  std::string version;
  std::vector<std::string> phrases;
};

// One phrase per line; "#version=" header; other '#' lines are comments.
PatternList parse_pattern_list(std::string_view content);
PatternList load_pattern_list(const std::filesystem::path& path);

struct FindingSpec {
  std::string name;
  std::vector<std::string> keywords;
  bool critical = false;
};

// Keyword matcher with a preceding-context negation window. A mention is
// negated when a cue ends within `window` characters before the keyword
// starts; the window never reaches back past a sentence terminator
// (. ! ? ;) or a paragraph break.
class FindingDetector {
 public:
  static constexpr std::size_t kDefaultWindow = 30;

  FindingDetector(std::vector<FindingSpec> findings, PatternList negation_cues, std::size_t window = kDefaultWindow);

  // The ten tracked conditions (five critical) with the shipped cue list.
  static FindingDetector standard();

  std::map<std::string, Polarity> detect(std::string_view text) const;
  std::set<std::string> positive_findings(std::string_view text) const;

  const std::vector<FindingSpec>& findings() const { return findings_; }
  std::vector<std::string> critical_findings() const;
  std::size_t window() const { return window_; }
  const std::string& cue_version() const { return cues_.version; }

 private:
  std::vector<FindingSpec> findings_;
  PatternList cues_;
  std::size_t window_;
};

struct SafetyPatterns {
  PatternList reassurance;
  PatternList artifacts;
  PatternList non_actionable;

  static SafetyPatterns standard();
};

struct SensitivityReport {
  std::map<std::string, std::optional<double>> detection_rate;  // empty = no labeled cases
  double sensitivity = 0.0;                                      // mean over defined critical findings
  std::vector<std::string> undefined_findings;
  double false_reassurance = 0.0;
  std::size_t critical_cases = 0;
};

SensitivityReport sensitivity_and_false_reassurance(const std::vector<std::string>& reports,
                                                    const std::vector<std::set<std::string>>& labels,
                                                    const FindingDetector& detector, const PatternList& reassurance);

double hallucination_rate(const std::vector<std::string>& reports, const std::vector<std::set<std::string>>& labels,
                          const FindingDetector& detector);

struct UtilityReport {
  double uniqueness = 0.0;
  double artifact_free = 0.0;
  double consistency = 0.0;  // Cohen's kappa clamped to [0, 1]
  double raw_kappa = 0.0;
  bool kappa_defined = true;
  double terminology_precision = 0.0;
  double utility = 0.0;  // mean of the four sub-scores
};

UtilityReport report_utility(const std::vector<std::string>& reports, const std::vector<std::string>& references,
                             const FindingDetector& detector, const SafetyPatterns& patterns);

// True when the text contains an artifact phrase or a word trigram repeated
// back to back.
bool has_artifact(std::string_view text, const PatternList& artifacts);

struct SafetyComponents {
  double sensitivity = 0.0;
  double hallucination = 0.0;
  double utility = 0.0;

  void validate() const;
};

struct SafetyWeights {
  double sensitivity = 1.0 / 3.0;
  double hallucination = 1.0 / 3.0;
  double utility = 1.0 / 3.0;
  // Permits the literal 0.33/0.33/0.33 weights, which do not sum to one.
  bool allow_unnormalized = false;

  static SafetyWeights equal() { return {}; }
  static SafetyWeights printed() { return {0.33, 0.33, 0.33, true}; }
  static SafetyWeights detection_prioritized() { return {0.5, 0.3, 0.2}; }
  static SafetyWeights safety_balanced() { return {0.45, 0.45, 0.10}; }
  void validate() const;
};

double safety_score(const SafetyComponents& c, const SafetyWeights& w = {});

// One labelled case of a report-generation fixture.
struct SafetyCase {
  std::string id;
  std::set<std::string> labels;
  std::string reference;
  std::string report;
};

// Tab-separated: generation, id, comma-separated labels, reference, report;
// header row first. Cases are grouped by generation.
std::map<int, std::vector<SafetyCase>> load_safety_cases(const std::filesystem::path& path);

struct SafetyEvaluation {
  SafetyComponents components;
  double false_reassurance = 0.0;
  UtilityReport utility;
};

SafetyEvaluation evaluate_safety(const std::vector<SafetyCase>& cases, const FindingDetector& detector,
                                 const SafetyPatterns& patterns);

struct KappaReport {
  std::map<std::string, std::optional<double>> per_finding;  // empty = undefined (constant marginals)
  std::optional<double> pooled;
};

// Reports in A and B must be paired by identifier (same order after sorting).
KappaReport diagnostic_kappa(const std::vector<std::pair<std::string, std::string>>& a,
                             const std::vector<std::pair<std::string, std::string>>& b,
                             const std::vector<std::string>& findings, const FindingDetector& detector);

// Pooled kappa between every pair of generations.
std::vector<std::vector<std::optional<double>>> kappa_matrix(
    const std::vector<std::vector<std::pair<std::string, std::string>>>& generations,
    const std::vector<std::string>& findings, const FindingDetector& detector);

}  // namespace collapselab
