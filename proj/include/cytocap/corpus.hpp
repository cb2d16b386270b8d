#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "cytocap/lexicon.hpp"
#include "cytocap/llm_client.hpp"

namespace cytocap {

struct Document {
  std::string doc_id;
  std::string title;
  std::string abstract_text;
  std::string body;
  int year = 0;
  std::string source;
};

struct IngestResult {
  std::vector<Document> documents;  // sorted by doc_id
  std::vector<std::string> warnings;
};

// Every *.txt file needs a sibling *.json sidecar {doc_id?, title, abstract,
// year?, source?}. Files without a usable sidecar are skipped with a warning.
IngestResult ingest(const std::filesystem::path& directory);

class CitationGraph {
 public:
  void add_node(const std::string& id);
  void add_edge(const std::string& citing, const std::string& cited);

  // TSV lines "citing<TAB>cited"; blank lines and '#' comments ignored.
  static CitationGraph load_tsv(const std::filesystem::path& path);
  static CitationGraph parse_tsv(const std::string& text);

  bool contains(const std::string& id) const { return adjacency_.contains(id); }
  // Neighbours over both edge directions, sorted.
  const std::set<std::string>& neighbours(const std::string& id) const;
  std::size_t num_edges() const noexcept { return num_edges_; }
  // Ids referenced by edges that are not in `known`.
  std::vector<std::string> external_ids(const std::set<std::string>& known) const;

 private:
  std::map<std::string, std::set<std::string>> adjacency_;
  std::size_t num_edges_ = 0;
};

// Breadth-first over both edge directions; ordered by level, then id.
std::vector<std::string> expand_citations(const std::vector<std::string>& seeds, const CitationGraph& graph,
                                          std::size_t depth);

using AreaKeywords = std::map<AreaId, std::vector<std::string>>;
AreaKeywords keywords_from_lexicon(const LabelLexicon& lexicon);

// Doc ids (sorted) whose title or abstract contains any keyword phrase of the
// area, whole-word and case-folded.
std::map<AreaId, std::vector<std::string>> keyword_filter(const std::vector<Document>& docs,
                                                          const AreaKeywords& keywords);

struct Chunk {
  std::string doc_id;
  std::size_t index = 0;
  std::size_t begin = 0;  // byte range in the body
  std::size_t end = 0;
  std::string text;

  std::string id() const { return doc_id + "#" + std::to_string(index); }
};

// Windows of at most max_chars; each chunk after the first starts
// overlap_chars before the previous end. Ends snap back to the nearest
// sentence boundary within snap_window characters when one exists.
std::vector<Chunk> chunk(const Document& doc, std::size_t max_chars, std::size_t overlap_chars,
                         std::size_t snap_window = 200);
// Positions just past a sentence terminator and its trailing whitespace.
std::vector<std::size_t> sentence_boundaries(std::string_view body);

struct Statement {
  std::string statement_id;
  AreaId area = AreaId::None;
  std::string text;
  std::string doc_id;
  std::size_t chunk = 0;
};

class StatementExtractor {
 public:
  virtual ~StatementExtractor() = default;
  // Raw candidate statements for the area (before post-processing).
  virtual std::vector<std::string> extract(const Chunk& chunk, const std::string& area_name,
                                           const std::vector<std::string>& keywords) = 0;
};

// Sentences mentioning any area keyword, minus those with numerals + units
// outside the keywords.
class StubExtractor final : public StatementExtractor {
 public:
  std::vector<std::string> extract(const Chunk& chunk, const std::string& area_name,
                                   const std::vector<std::string>& keywords) override;
};

// Prompts a text generator and reads one statement per line.
class LlmExtractor final : public StatementExtractor {
 public:
  explicit LlmExtractor(TextGenerator& client, std::uint64_t seed = 0) : client_(client), seed_(seed) {}
  std::vector<std::string> extract(const Chunk& chunk, const std::string& area_name,
                                   const std::vector<std::string>& keywords) override;
  static std::string prompt(const Chunk& chunk, const std::string& area_name);

 private:
  TextGenerator& client_;
  std::uint64_t seed_;
};

// Strips list markers and markdown emphasis, splits into single sentences,
// and drops case-insensitive duplicates (first occurrence kept).
std::vector<std::string> postprocess_statements(const std::vector<std::string>& raw);

// Extractor failures surface as RetryableError naming the chunk id.
std::vector<Statement> extract_statements(const Chunk& chunk, AreaId area, const LabelLexicon& lexicon,
                                          const std::vector<std::string>& keywords, StatementExtractor& extractor);

// One statement per (area, case-folded whitespace-normalized text), keeping
// the first in (area, doc_id, chunk) order; ids are reassigned "<area>-NNNN".
std::vector<Statement> dedup_statements(std::vector<Statement> statements, const LabelLexicon& lexicon);

std::string statement_to_json(const Statement& s, const LabelLexicon& lexicon);
Statement statement_from_json(const std::string& line, const LabelLexicon& lexicon);

}  // namespace cytocap
