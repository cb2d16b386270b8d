#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cytocap::text {

// Word-level tokens: runs of letters/digits/'_'/'-'/'\'' (plus any non-ASCII
// byte), every other non-space character is a token of its own.
std::vector<std::string> tokenize(std::string_view s);

// Inverse of tokenize up to whitespace: tokens joined by single spaces, with
// no space before closing punctuation or after an opening bracket.
std::string join_tokens(const std::vector<std::string>& tokens);

std::string normalize_whitespace(std::string_view s);
std::string trim(std::string_view s);

// Simple case folding: ASCII plus the Latin-1 supplement uppercase block.
std::string case_fold(std::string_view s);

struct Sentence {
  std::size_t begin = 0;  // byte offsets into the source text
  std::size_t end = 0;
  std::string text;       // trimmed
};

// Sentences end at '.', '!' or '?' followed by whitespace or end of text.
std::vector<Sentence> split_sentences(std::string_view s);
std::string first_sentence(std::string_view s);

// Boundary characters for whole-word matching: anything that is not a letter,
// digit, '_' or non-ASCII byte.
bool is_word_byte(unsigned char c) noexcept;

// Byte offsets of whole-word, case-folded occurrences of `phrase` in `text`.
// Both arguments are case-folded internally; internal whitespace in the
// phrase matches exactly one space in whitespace-normalized text.
struct Match {
  std::size_t begin;
  std::size_t end;
};
std::vector<Match> find_whole_word(std::string_view text, std::string_view phrase);
bool contains_whole_word(std::string_view text, std::string_view phrase);

// True if the sentence contains a number followed by a measurement unit
// ("20 µm", "3.5 mm", "12%", "65 years").
bool has_numeral_with_unit(std::string_view sentence);

bool is_stop_word(std::string_view folded_word);
// Lowercased alphanumeric words minus English function words.
std::vector<std::string> content_words(std::string_view s);

}  // namespace cytocap::text
