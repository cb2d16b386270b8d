#include "cytocap/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "cytocap/errors.hpp"
#include "cytocap/text.hpp"

namespace cytocap {

const std::vector<std::string>& Vocab::special_tokens() {
  static const std::vector<std::string> s = {"<bos>", "<eos>", "<pad>", "<unk>", "<area>"};
  return s;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& sp = special_tokens();
  if (tokens_.size() < sp.size() || !std::equal(sp.begin(), sp.end(), tokens_.begin())) {
    throw ValidationError("vocabulary must start with the special tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("duplicate vocabulary token: " + tokens_[i]);
    }
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.contains(std::string(token)); }

std::string Vocab::to_json() const { return nlohmann::json{{"tokens", tokens_}}.dump(); }

Vocab Vocab::from_json(std::string_view json) {
  try {
    auto j = nlohmann::json::parse(json);
    return Vocab(j.at("tokens").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed vocabulary JSON: ") + e.what(), 0);
  }
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary: " + path.string());
  out << to_json() << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocabulary: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t min_count) {
  if (corpus.empty()) throw PreconditionError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus)
    for (auto& tok : text::tokenize(line)) ++counts[std::move(tok)];
  const auto& sp = Vocab::special_tokens();
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && std::find(sp.begin(), sp.end(), tok) == sp.end()) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens(sp.begin(), sp.end());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocab(std::move(tokens));
}

std::vector<TokenId> encode(std::string_view s, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& tok : text::tokenize(s)) ids.push_back(vocab.id(tok));
  return ids;
}

std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::vector<std::string> toks;
  for (TokenId id : ids) {
    if (id == Vocab::kBos || id == Vocab::kEos || id == Vocab::kPad) continue;
    toks.push_back(id == Vocab::kAreaMask ? "[AREA]" : vocab.token(id));
  }
  return text::join_tokens(toks);
}

std::string normalize_text(std::string_view s) { return text::join_tokens(text::tokenize(s)); }

}  // namespace cytocap
