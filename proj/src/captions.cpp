#include "cytocap/captions.hpp"

#include "cytocap/errors.hpp"
#include "cytocap/random.hpp"
#include "cytocap/text.hpp"

namespace cytocap {

StatementPool build_pool(const std::vector<Statement>& statements) {
  StatementPool pool;
  for (const auto& s : statements) pool[s.area].push_back(s);
  return pool;
}

StatementPool filter_foreign_mentions(const StatementPool& pool, const LabelLexicon& lexicon) {
  StatementPool out;
  for (const auto& [area_id, list] : pool) {
    auto& kept = out[area_id];
    for (const auto& s : list) {
      bool foreign = false;
      for (const auto& [alias, other] : lexicon.all_aliases()) {
        if (other != area_id && text::contains_whole_word(s.text, alias)) {
          foreign = true;
          break;
        }
      }
      if (!foreign) kept.push_back(s);
    }
  }
  return out;
}

std::vector<Statement> sample_statements(const StatementPool& pool, AreaId area, std::size_t k, std::uint64_t seed) {
  auto it = pool.find(area);
  if (it == pool.end()) throw ValidationError("area " + area_code_string(area) + " has no statement pool");
  Rng rng(seed);
  std::vector<Statement> out;
  for (auto i : sample_indices(rng, it->second.size(), k)) out.push_back(it->second[i]);
  return out;
}

std::string caption_first_sentence(const std::string& area_name) {
  return "This patch shows cytoarchitecture of area " + area_name + ".";
}

Caption unknown_caption() { return {kUnknownCaption, AreaId::Unknown, {}}; }

std::string TemplateComposer::compose(const std::string& area_name, const std::vector<Statement>& statements) {
  std::string out = caption_first_sentence(area_name);
  for (const auto& s : statements) out += " " + text::normalize_whitespace(s.text);
  return out;
}

std::string LlmComposer::compose(const std::string& area_name, const std::vector<Statement>& statements) {
  // Placeholder prompt template.
  std::string prompt = "Write a concise caption describing the cytoarchitecture of a microscopy patch from area " +
                       area_name + ", using only these statements:\n";
  for (const auto& s : statements) prompt += "- " + s.text + "\n";
  GenerationRequest req;
  req.system_prompt = "Provide a caption for this microscopy image.";
  req.user_prompt = prompt;
  req.max_tokens = 256;
  req.seed = seed_;
  req.item_id = area_name;
  const auto resp = client_.complete(req);
  const std::string body = text::normalize_whitespace(resp.text);
  if (body.empty()) throw MalformedResponseError("composer returned an empty caption");
  return caption_first_sentence(area_name) + " " + body;
}

Caption compose_caption(AreaId area, const std::vector<Statement>& statements, const LabelLexicon& lexicon,
                        CaptionComposer& composer) {
  if (statements.empty()) throw PreconditionError("compose_caption needs at least one statement");
  if (!is_target(area)) throw PreconditionError("compose_caption needs a target area");
  Caption c;
  c.area = area;
  try {
    c.text = composer.compose(lexicon.name(area), statements);
  } catch (const RetryableError&) {
    throw;
  } catch (const std::exception& e) {
    throw RetryableError(std::string("caption composition failed: ") + e.what(), lexicon.name(area));
  }
  for (const auto& s : statements) c.statement_ids.push_back(s.statement_id);
  return c;
}

}  // namespace cytocap
