#include "collapselab/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace collapselab::text {
namespace {

constexpr std::array<std::string_view, 14> kAbbreviations = {
    "dr", "mr", "mrs", "ms", "vs", "e.g", "i.e", "etc", "approx", "no", "st", "fig", "pt", "cm"};

bool alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }
bool terminator(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && space(s[b])) ++b;
  while (e > b && space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

bool is_abbreviation(std::string_view lowered_word) {
  // "no" is only an abbreviation when capitalised before a numeral ("No. 5");
  // as a lowercase word it is a negation cue and a normal sentence word.
  if (lowered_word == "no") return false;
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), lowered_word) !=
         kAbbreviations.end();
}

std::vector<std::string> tokenize(std::string_view raw) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    if (alnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      continue;
    }
    if (c == '.' && !cur.empty() && digit(cur.back()) && i + 1 < raw.size() && digit(raw[i + 1])) {
      cur.push_back('.');
      continue;
    }
    if (terminator(c)) {
      const bool abbrev = c == '.' && is_abbreviation(cur);
      flush();
      if (!abbrev && (out.empty() || out.back() != kSentenceEnd)) out.emplace_back(kSentenceEnd);
      continue;
    }
    flush();
  }
  flush();
  return out;
}

bool is_sentence_end(std::string_view token) { return token == kSentenceEnd; }

bool is_section_marker(std::string_view token) {
  return token.size() > kSectionPrefix.size() && token.substr(0, kSectionPrefix.size()) == kSectionPrefix;
}

bool is_word(std::string_view token) {
  return !token.empty() && !is_sentence_end(token) && !is_section_marker(token);
}

std::string section_marker(std::string_view section_name) {
  std::string out(kSectionPrefix);
  for (char c : section_name) {
    if (alnum(c))
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    else
      out.push_back('_');
  }
  return out;
}

std::string section_name_from_marker(std::string_view marker) {
  std::string out(marker.substr(kSectionPrefix.size()));
  for (char& c : out) c = c == '_' ? ' ' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> words(std::string_view raw) {
  auto toks = tokenize(raw);
  std::erase_if(toks, [](const std::string& t) { return !is_word(t); });
  return toks;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  bool sentence_start = true;
  for (const auto& t : tokens) {
    if (is_section_marker(t)) continue;
    if (is_sentence_end(t)) {
      if (!out.empty()) out.push_back('.');
      sentence_start = true;
      continue;
    }
    if (!out.empty()) out.push_back(' ');
    std::string w = t;
    if (sentence_start && !w.empty())
      w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    sentence_start = false;
    out += w;
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view raw) {
  std::vector<std::string> out;
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    auto s = trim(raw.substr(start, end - start));
    if (!s.empty()) out.push_back(std::move(s));
    start = end;
  };
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!terminator(raw[i])) continue;
    std::size_t j = i + 1;
    while (j < raw.size() && terminator(raw[j])) ++j;
    if (raw[i] == '.') {
      std::size_t w = i;
      while (w > 0 && (alnum(raw[w - 1]) || raw[w - 1] == '.')) --w;
      if (is_abbreviation(to_lower(raw.substr(w, i - w)))) continue;
    }
    if (j == raw.size()) {
      emit(j);
      break;
    }
    if (!space(raw[j])) continue;
    std::size_t k = j;
    while (k < raw.size() && space(raw[k])) ++k;
    if (k == raw.size() || upper(raw[k])) emit(j);
    i = j - 1;
  }
  if (start < raw.size()) emit(raw.size());
  return out;
}

}  // namespace collapselab::text
