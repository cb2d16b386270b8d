#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cytocap/corpus.hpp"
#include "cytocap/lexicon.hpp"
#include "cytocap/llm_client.hpp"

namespace cytocap {

using StatementPool = std::map<AreaId, std::vector<Statement>>;

StatementPool build_pool(const std::vector<Statement>& statements);

// Drops statements that mention any other area's alias or "unknown".
StatementPool filter_foreign_mentions(const StatementPool& pool, const LabelLexicon& lexicon);

// k distinct statements uniformly without replacement (all of them, in
// seeded order, when the pool is smaller). Unknown area -> ValidationError.
std::vector<Statement> sample_statements(const StatementPool& pool, AreaId area, std::size_t k, std::uint64_t seed);

struct Caption {
  std::string text;
  AreaId area = AreaId::None;
  std::vector<std::string> statement_ids;
};

std::string caption_first_sentence(const std::string& area_name);
inline constexpr const char* kUnknownCaption = "This patch shows cytoarchitecture of an unknown area.";
Caption unknown_caption();

class CaptionComposer {
 public:
  virtual ~CaptionComposer() = default;
  virtual std::string compose(const std::string& area_name, const std::vector<Statement>& statements) = 0;
};

// First sentence names the area, followed by the statements verbatim.
class TemplateComposer final : public CaptionComposer {
 public:
  std::string compose(const std::string& area_name, const std::vector<Statement>& statements) override;
};

// Asks a text generator to merge the statements into a description; the
// standardized first sentence is always prepended.
class LlmComposer final : public CaptionComposer {
 public:
  explicit LlmComposer(TextGenerator& client, std::uint64_t seed = 0) : client_(client), seed_(seed) {}
  std::string compose(const std::string& area_name, const std::vector<Statement>& statements) override;

 private:
  TextGenerator& client_;
  std::uint64_t seed_;
};

// Composer failures surface as RetryableError naming the area.
Caption compose_caption(AreaId area, const std::vector<Statement>& statements, const LabelLexicon& lexicon,
                        CaptionComposer& composer);

}  // namespace cytocap
