#include "collapselab/lexicon.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include "collapselab/error.hpp"
#include "collapselab/text.hpp"

#ifndef COLLAPSELAB_DATA_DIR
#define COLLAPSELAB_DATA_DIR "data"
#endif

namespace collapselab {

std::string to_string(Tier t) {
  switch (t) {
    case Tier::General: return "general";
    case Tier::Intermediate: return "intermediate";
    case Tier::Specific: return "specific";
  }
  return "?";
}

namespace {

Tier parse_tier(const std::string& s) {
  if (s == "general") return Tier::General;
  if (s == "intermediate") return Tier::Intermediate;
  if (s == "specific") return Tier::Specific;
  throw Error("unknown tier '@" + s + "'");
}

}  // namespace

std::string normalize_phrase(std::string_view phrase) {
  std::string out;
  for (const auto& w : text::words(phrase)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

const std::vector<std::string>& Lexicon::category(const std::string& name) const {
  auto it = categories.find(name);
  if (it == categories.end()) throw Error("no lexicon category '" + name + "'");
  return it->second;
}

std::set<std::string> Lexicon::all_terms() const {
  std::set<std::string> out;
  for (const auto& [name, terms] : categories) out.insert(terms.begin(), terms.end());
  return out;
}

std::string Lexicon::category_of(const std::string& term) const {
  for (const auto& [name, terms] : categories)
    if (std::find(terms.begin(), terms.end(), term) != terms.end()) return name;
  return {};
}

Lexicon parse_lexicon(std::string_view content) {
  Lexicon lex;
  std::string block;
  std::istringstream in{std::string(content)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    try {
      if (line[0] == '#') {
        if (line.rfind("#version=", 0) == 0) lex.version = text::trim(line.substr(9));
        continue;
      }
      if (line.front() == '[' && line.back() == ']') {
        block = text::to_lower(text::trim(line.substr(1, line.size() - 2)));
        if (block.empty()) throw Error("empty block name");
        continue;
      }
      if (block.empty()) throw Error("term outside a [block]");
      std::string term_text = line;
      std::optional<Tier> tier;
      if (auto at = line.rfind(" @"); at != std::string::npos) {
        tier = parse_tier(text::to_lower(text::trim(line.substr(at + 2))));
        term_text = line.substr(0, at);
      }
      const auto term = normalize_phrase(term_text);
      if (term.empty()) throw Error("term has no word tokens");
      if (block == "stopwords") lex.stopwords.insert(term);
      else if (block == "clinical-instructions") lex.clinical_instructions.push_back(term);
      else if (block == "templates") lex.templates.push_back(term);
      else {
        auto& terms = lex.categories[block];
        if (std::find(terms.begin(), terms.end(), term) == terms.end()) terms.push_back(term);
        if (tier) {
          if (lex.tiers.contains(term))
            throw Error("term '" + term + "' carries more than one tier annotation");
          lex.tiers[term] = *tier;
        }
      }
    } catch (const std::exception& e) {
      throw Error("lexicon line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (lex.categories.empty()) throw Error("lexicon has no term categories");
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_lexicon(ss.str());
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("COLLAPSELAB_DATA")) return env;
  return COLLAPSELAB_DATA_DIR;
}

Lexicon default_lexicon() { return load_lexicon(data_dir() / "lexicon.txt"); }

PhraseMatcher::PhraseMatcher(const std::vector<std::string>& phrases) {
  for (const auto& p : phrases) {
    auto toks = text::words(p);
    if (toks.empty()) continue;
    auto& bucket = by_first_[toks.front()];
    if (std::find(bucket.begin(), bucket.end(), toks) == bucket.end()) bucket.push_back(std::move(toks));
  }
  for (auto& [first, bucket] : by_first_)
    std::stable_sort(bucket.begin(), bucket.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
}

std::vector<PhraseMatch> PhraseMatcher::find(const std::vector<std::string>& tokens) const {
  std::vector<PhraseMatch> out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    auto it = by_first_.find(tokens[i]);
    bool matched = false;
    if (it != by_first_.end()) {
      for (const auto& phrase : it->second) {
        if (i + phrase.size() > tokens.size()) continue;
        if (!std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) continue;
        std::string joined;
        for (const auto& w : phrase) {
          if (!joined.empty()) joined += ' ';
          joined += w;
        }
        out.push_back({i, phrase.size(), std::move(joined)});
        i += phrase.size();
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

}  // namespace collapselab
