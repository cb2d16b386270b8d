#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cytocap {

using TokenId = std::int32_t;

// Word-level vocabulary. Specials occupy ids 0..4 in this order.
class Vocab {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kAreaMask = 4;
  static constexpr std::size_t kNumSpecials = 5;

  Vocab() = default;
  // `tokens` must start with the five specials.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;

  std::string to_json() const;
  static Vocab from_json(std::string_view json);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  static const std::vector<std::string>& special_tokens();

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Counts tokens over the corpus; keeps those with count >= min_count, ordered
// by count descending then lexicographically, after the specials.
Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t min_count = 1);

std::vector<TokenId> encode(std::string_view text, const Vocab& vocab);
// Drops BOS/EOS/PAD; renders the area mask as "[AREA]".
std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab);
// What decode(encode(text)) yields for in-vocabulary text.
std::string normalize_text(std::string_view text);

}  // namespace cytocap
