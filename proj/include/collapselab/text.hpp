#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace collapselab::text {

// Token emitted for a sentence terminator (. ! ?).
inline constexpr std::string_view kSentenceEnd = ".";
// Prefix of section-boundary tokens used by the text kernel.
inline constexpr std::string_view kSectionPrefix = "@@";

// Shared normalizer: lowercase, alphanumeric runs become tokens (numerals
// kept, "3.5" stays one token), sentence terminators become ".", all other
// punctuation separates tokens and is dropped. A period after a known
// abbreviation is not a terminator.
std::vector<std::string> tokenize(std::string_view raw);

bool is_sentence_end(std::string_view token);
bool is_section_marker(std::string_view token);
// A word is any token that is neither a terminator nor a section marker.
bool is_word(std::string_view token);

std::string section_marker(std::string_view section_name);
std::string section_name_from_marker(std::string_view marker);

// Word tokens only.
std::vector<std::string> words(std::string_view raw);

// Joins tokens back into readable text: terminators attach to the preceding
// word and every sentence starts with a capital letter.
std::string detokenize(const std::vector<std::string>& tokens);

// Splits on . ? ! followed by whitespace and a capital letter (or end of
// text), skipping abbreviations. Returned sentences are trimmed.
std::vector<std::string> split_sentences(std::string_view raw);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool is_abbreviation(std::string_view lowered_word);

}  // namespace collapselab::text
