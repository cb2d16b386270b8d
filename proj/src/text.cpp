#include "cytocap/text.hpp"

#include <cctype>
#include <regex>
#include <set>

namespace cytocap::text {
namespace {

bool is_token_byte(unsigned char c) noexcept {
  return std::isalnum(c) || c == '_' || c == '-' || c == '\'' || c >= 0x80;
}

bool is_space(unsigned char c) noexcept { return std::isspace(c) != 0; }

bool no_space_before(const std::string& tok) {
  return tok == "." || tok == "," || tok == ";" || tok == ":" || tok == "!" || tok == "?" || tok == ")" ||
         tok == "]" || tok == "}" || tok == "%";
}

bool no_space_after(const std::string& tok) { return tok == "(" || tok == "[" || tok == "{"; }

}  // namespace

bool is_word_byte(unsigned char c) noexcept { return std::isalnum(c) || c == '_' || c >= 0x80; }

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_token_byte(c)) {
      std::size_t j = i;
      while (j < s.size() && is_token_byte(static_cast<unsigned char>(s[j]))) ++j;
      out.emplace_back(s.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, s[i]);
      ++i;
    }
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  bool suppress = true;
  for (const auto& tok : tokens) {
    if (!suppress && !no_space_before(tok)) out += ' ';
    out += tok;
    suppress = no_space_after(tok);
  }
  return out;
}

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (char ch : s) {
    if (is_space(static_cast<unsigned char>(ch))) {
      pending = !out.empty();
    } else {
      if (pending) out += ' ';
      pending = false;
      out += ch;
    }
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string case_fold(std::string_view s) {
  std::string out(s);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto c = static_cast<unsigned char>(out[i]);
    if (c < 0x80) {
      out[i] = static_cast<char>(std::tolower(c));
    } else if (c == 0xC3 && i + 1 < out.size()) {
      const auto n = static_cast<unsigned char>(out[i + 1]);
      if (n >= 0x80 && n <= 0x9E && n != 0x97) out[i + 1] = static_cast<char>(n + 0x20);
      ++i;
    }
  }
  return out;
}

std::vector<Sentence> split_sentences(std::string_view s) {
  std::vector<Sentence> out;
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    std::string t = trim(s.substr(start, end - start));
    if (!t.empty()) {
      std::size_t b = start;
      while (b < end && is_space(static_cast<unsigned char>(s[b]))) ++b;
      out.push_back({b, end, std::move(t)});
    }
    start = end;
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == s.size() || is_space(static_cast<unsigned char>(s[i + 1])))) {
      emit(i + 1);
    }
  }
  if (start < s.size()) emit(s.size());
  return out;
}

std::string first_sentence(std::string_view s) {
  auto sentences = split_sentences(s);
  return sentences.empty() ? std::string() : sentences.front().text;
}

std::vector<Match> find_whole_word(std::string_view text, std::string_view phrase) {
  std::vector<Match> out;
  const std::string p = normalize_whitespace(case_fold(phrase));
  if (p.empty()) return out;
  const std::string t = case_fold(text);
  std::size_t pos = 0;
  while ((pos = t.find(p, pos)) != std::string::npos) {
    const std::size_t end = pos + p.size();
    const bool left_ok = pos == 0 || !is_word_byte(static_cast<unsigned char>(t[pos - 1])) ||
                         !is_word_byte(static_cast<unsigned char>(p.front()));
    const bool right_ok = end == t.size() || !is_word_byte(static_cast<unsigned char>(t[end])) ||
                          !is_word_byte(static_cast<unsigned char>(p.back()));
    if (left_ok && right_ok) {
      out.push_back({pos, end});
      pos = end;
    } else {
      ++pos;
    }
  }
  return out;
}

bool contains_whole_word(std::string_view text, std::string_view phrase) {
  return !find_whole_word(text, phrase).empty();
}

bool has_numeral_with_unit(std::string_view sentence) {
  static const std::regex re(
      R"((^|[^A-Za-z0-9_])[0-9]+([.,][0-9]+)?\s*(%|µm|um|mm|cm|nm|m|mg|ml|kg|g|s|ms|h|min|years?|days?|weeks?|months?|hours?|Hz|kHz|px|pixels?|sections?|subjects?|brains?|patients?|cases?)(2|3|²|³)?($|[^A-Za-z0-9_]))",
      std::regex::ECMAScript | std::regex::icase);
  return std::regex_search(sentence.begin(), sentence.end(), re);
}

bool is_stop_word(std::string_view w) {
  static const std::set<std::string_view> stop = {
      "a",     "about", "above", "after", "again", "all",   "also",  "an",    "and",   "any",   "are",  "as",
      "at",    "be",    "been",  "being", "both",  "but",   "by",    "can",   "could", "did",   "do",   "does",
      "each",  "for",   "from",  "had",   "has",   "have",  "having", "here", "how",   "if",    "in",   "into",
      "is",    "it",    "its",   "may",   "more",  "most",  "no",    "nor",   "not",   "of",    "on",   "only",
      "or",    "other", "our",   "over",  "same",  "should", "so",   "some",  "such",  "than",  "that", "the",
      "their", "them",  "then",  "there", "these", "they",  "this",  "those", "through", "to",  "too",  "under",
      "up",    "very",  "was",   "we",    "were",  "what",  "when",  "where", "which", "while", "who",  "will",
      "with",  "would",
  };
  return stop.contains(w);
}

std::vector<std::string> content_words(std::string_view s) {
  std::vector<std::string> out;
  const std::string folded = case_fold(s);
  std::size_t i = 0;
  while (i < folded.size()) {
    if (is_word_byte(static_cast<unsigned char>(folded[i]))) {
      std::size_t j = i;
      while (j < folded.size() && is_word_byte(static_cast<unsigned char>(folded[j]))) ++j;
      std::string w = folded.substr(i, j - i);
      if (!is_stop_word(w)) out.push_back(std::move(w));
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace cytocap::text
