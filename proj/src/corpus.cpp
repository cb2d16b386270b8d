#include "cytocap/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "cytocap/errors.hpp"
#include "cytocap/text.hpp"
#include "json.hpp"

namespace cytocap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error("cannot read '" + p.string() + "'");
  return ss.str();
}

}  // namespace

IngestResult ingest(const fs::path& directory) {
  if (!fs::is_directory(directory)) throw Error("corpus directory '" + directory.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(directory)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  IngestResult out;
  std::set<std::string> seen;
  for (const auto& txt : files) {
    auto sidecar = txt;
    sidecar.replace_extension(".json");
    if (!fs::exists(sidecar)) {
      out.warnings.push_back("skipping " + txt.filename().string() + ": missing sidecar " + sidecar.filename().string());
      continue;
    }
    const std::string body = read_text(txt);
    json meta;
    try {
      meta = json::parse(read_text(sidecar));
      if (!meta.is_object()) throw std::runtime_error("sidecar is not a JSON object");
    } catch (const std::exception& e) {
      out.warnings.push_back("skipping " + txt.filename().string() + ": malformed sidecar (" + e.what() + ")");
      continue;
    }
    Document d;
    try {
      d.doc_id = meta.value("doc_id", txt.stem().string());
      d.title = text::normalize_whitespace(meta.value("title", std::string()));
      d.abstract_text = text::normalize_whitespace(meta.value("abstract", std::string()));
      d.year = meta.value("year", 0);
      d.source = meta.value("source", std::string());
    } catch (const json::exception& e) {
      out.warnings.push_back("skipping " + txt.filename().string() + ": bad sidecar field (" + e.what() + ")");
      continue;
    }
    d.body = text::normalize_whitespace(body);
    if (d.body.empty()) {
      out.warnings.push_back("skipping " + txt.filename().string() + ": empty body");
      continue;
    }
    if (!seen.insert(d.doc_id).second) {
      out.warnings.push_back("skipping " + txt.filename().string() + ": duplicate doc_id " + d.doc_id);
      continue;
    }
    out.documents.push_back(std::move(d));
  }
  std::sort(out.documents.begin(), out.documents.end(),
            [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
  return out;
}

void CitationGraph::add_node(const std::string& id) { adjacency_[id]; }

void CitationGraph::add_edge(const std::string& citing, const std::string& cited) {
  if (citing == cited) throw ValidationError("citation self-loop on '" + citing + "'");
  const bool fresh = adjacency_[citing].insert(cited).second;
  adjacency_[cited].insert(citing);
  num_edges_ += fresh;
}

CitationGraph CitationGraph::parse_tsv(const std::string& text) {
  CitationGraph g;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string trimmed = text::trim(line);
    if (!trimmed.empty() && trimmed[0] != '#') {
      const auto tab = line.find('\t');
      if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
        throw FormatError("citation line must be 'citing<TAB>cited'", pos);
      }
      const std::string a = text::trim(line.substr(0, tab)), b = text::trim(line.substr(tab + 1));
      if (a.empty() || b.empty()) throw FormatError("empty id in citation line", pos);
      if (a == b) throw FormatError("citation self-loop on '" + a + "'", pos);
      g.add_edge(a, b);
    }
    pos = eol + 1;
  }
  return g;
}

CitationGraph CitationGraph::load_tsv(const fs::path& path) { return parse_tsv(read_text(path)); }

const std::set<std::string>& CitationGraph::neighbours(const std::string& id) const {
  static const std::set<std::string> empty;
  auto it = adjacency_.find(id);
  return it == adjacency_.end() ? empty : it->second;
}

std::vector<std::string> CitationGraph::external_ids(const std::set<std::string>& known) const {
  std::vector<std::string> out;
  for (const auto& [id, _] : adjacency_)
    if (!known.contains(id)) out.push_back(id);
  return out;
}

std::vector<std::string> expand_citations(const std::vector<std::string>& seeds, const CitationGraph& graph,
                                          std::size_t depth) {
  std::set<std::string> visited;
  std::vector<std::string> frontier;
  for (const auto& s : seeds) {
    if (!graph.contains(s)) throw ValidationError("unknown seed document '" + s + "'");
    if (visited.insert(s).second) frontier.push_back(s);
  }
  std::sort(frontier.begin(), frontier.end());
  std::vector<std::string> out = frontier;
  for (std::size_t level = 0; level < depth && !frontier.empty(); ++level) {
    std::vector<std::string> next;
    for (const auto& id : frontier)
      for (const auto& n : graph.neighbours(id))
        if (visited.insert(n).second) next.push_back(n);
    std::sort(next.begin(), next.end());
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

AreaKeywords keywords_from_lexicon(const LabelLexicon& lexicon) {
  AreaKeywords out;
  for (const auto& e : lexicon.areas()) out[e.id] = e.aliases;
  return out;
}

std::map<AreaId, std::vector<std::string>> keyword_filter(const std::vector<Document>& docs,
                                                          const AreaKeywords& keywords) {
  std::map<AreaId, std::vector<std::string>> out;
  for (const auto& [area_id, phrases] : keywords) {
    auto& ids = out[area_id];
    for (const auto& d : docs) {
      for (const auto& ph : phrases) {
        if (text::contains_whole_word(d.title, ph) || text::contains_whole_word(d.abstract_text, ph)) {
          ids.push_back(d.doc_id);
          break;
        }
      }
    }
    std::sort(ids.begin(), ids.end());
  }
  return out;
}

std::vector<std::size_t> sentence_boundaries(std::string_view body) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t j = i + 1;
    if (j < body.size() && !std::isspace(static_cast<unsigned char>(body[j]))) continue;
    while (j < body.size() && std::isspace(static_cast<unsigned char>(body[j]))) ++j;
    if (j < body.size()) out.push_back(j);
  }
  return out;
}

std::vector<Chunk> chunk(const Document& doc, std::size_t max_chars, std::size_t overlap_chars,
                         std::size_t snap_window) {
  if (!(max_chars > overlap_chars)) throw PreconditionError("chunk requires max_chars > overlap_chars");
  const std::string& body = doc.body;
  const auto bounds = sentence_boundaries(body);
  std::vector<Chunk> out;
  std::size_t start = 0;
  while (true) {
    std::size_t end = std::min(body.size(), start + max_chars);
    if (end < body.size()) {
      // nearest sentence boundary at or before end, if inside the window and past the overlap
      auto it = std::upper_bound(bounds.begin(), bounds.end(), end);
      if (it != bounds.begin()) {
        const std::size_t b = *std::prev(it);
        if (b + snap_window >= end && b > start + overlap_chars) end = b;
      }
    }
    out.push_back({doc.doc_id, out.size(), start, end, body.substr(start, end - start)});
    if (end >= body.size()) break;
    start = end - overlap_chars;
  }
  return out;
}

std::vector<std::string> StubExtractor::extract(const Chunk& chunk, const std::string&,
                                                const std::vector<std::string>& keywords) {
  std::vector<std::string> out;
  for (const auto& s : text::split_sentences(chunk.text)) {
    // area names such as "5M" must not read as a quantity
    std::string masked = s.text;
    bool mentions = false;
    for (const auto& k : keywords) {
      for (const auto& m : text::find_whole_word(s.text, k)) {
        mentions = true;
        std::fill(masked.begin() + static_cast<std::ptrdiff_t>(m.begin),
                  masked.begin() + static_cast<std::ptrdiff_t>(m.end), 'X');
      }
    }
    if (mentions && !text::has_numeral_with_unit(masked)) out.push_back(s.text);
  }
  return out;
}

std::string LlmExtractor::prompt(const Chunk& chunk, const std::string& area_name) {
  // Placeholder prompt template.
  return "List statements about the cytoarchitecture of area " + area_name +
         " found in the text below. Each statement must be understandable without further context, must "
         "name the area, and must avoid study-specific experimental details. Write one statement per line.\n\n" +
         chunk.text;
}

std::vector<std::string> LlmExtractor::extract(const Chunk& chunk, const std::string& area_name,
                                               const std::vector<std::string>&) {
  GenerationRequest req;
  req.system_prompt = "You extract factual statements from neuroanatomy literature.";
  req.user_prompt = prompt(chunk, area_name);
  req.max_tokens = 512;
  req.seed = seed_;
  req.item_id = chunk.id();
  const auto resp = client_.complete(req);
  std::vector<std::string> lines;
  std::istringstream in(resp.text);
  for (std::string line; std::getline(in, line);) {
    if (!text::trim(line).empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> postprocess_statements(const std::vector<std::string>& raw) {
  static const std::regex list_marker(R"(^\s*(?:[-*+•]|\d+[.)]|\(\d+\))\s+)");
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : raw) {
    std::string s = std::regex_replace(r, list_marker, "");
    s = std::regex_replace(s, std::regex(R"(\*\*|__|`)"), "");
    s = text::normalize_whitespace(s);
    for (const auto& sent : text::split_sentences(s)) {
      if (sent.text.empty()) continue;
      const std::string key = text::case_fold(text::normalize_whitespace(sent.text));
      if (seen.insert(key).second) out.push_back(sent.text);
    }
  }
  return out;
}

std::vector<Statement> extract_statements(const Chunk& chunk, AreaId area, const LabelLexicon& lexicon,
                                          const std::vector<std::string>& keywords, StatementExtractor& extractor) {
  std::vector<std::string> raw;
  try {
    raw = extractor.extract(chunk, lexicon.name(area), keywords);
  } catch (const RetryableError&) {
    throw;
  } catch (const std::exception& e) {
    throw RetryableError(std::string("statement extraction failed: ") + e.what(), chunk.id());
  }
  std::vector<Statement> out;
  for (auto& t : postprocess_statements(raw)) {
    Statement s;
    s.area = area;
    s.text = std::move(t);
    s.doc_id = chunk.doc_id;
    s.chunk = chunk.index;
    s.statement_id = chunk.id() + ":" + std::to_string(out.size());
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Statement> dedup_statements(std::vector<Statement> statements, const LabelLexicon& lexicon) {
  std::stable_sort(statements.begin(), statements.end(), [](const Statement& a, const Statement& b) {
    return std::tie(a.area, a.doc_id, a.chunk) < std::tie(b.area, b.doc_id, b.chunk);
  });
  std::set<std::pair<AreaId, std::string>> seen;
  std::map<AreaId, std::size_t> counters;
  std::vector<Statement> out;
  for (auto& s : statements) {
    if (!seen.emplace(s.area, text::case_fold(text::normalize_whitespace(s.text))).second) continue;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", counters[s.area]++);
    s.statement_id = lexicon.name(s.area) + "-" + buf;
    out.push_back(std::move(s));
  }
  return out;
}

std::string statement_to_json(const Statement& s, const LabelLexicon& lexicon) {
  json j = {{"statement_id", s.statement_id},
            {"area_id", lexicon.name(s.area)},
            {"text", s.text},
            {"doc_id", s.doc_id},
            {"chunk", s.chunk}};
  return j.dump();
}

Statement statement_from_json(const std::string& line, const LabelLexicon& lexicon) {
  try {
    const json j = json::parse(line);
    Statement s;
    s.statement_id = j.at("statement_id");
    const std::string area_name = j.at("area_id");
    auto a = lexicon.find(area_name);
    if (!a) throw ValidationError("statement names unknown area '" + area_name + "'");
    s.area = *a;
    s.text = j.at("text");
    s.doc_id = j.at("doc_id");
    s.chunk = j.at("chunk");
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed statement record: ") + e.what(), 0);
  }
}

}  // namespace cytocap
