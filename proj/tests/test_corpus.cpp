#include <algorithm>
#include <cctype>
#include <deque>
#include <map>
#include <random>
#include <set>

#include "cytocap/corpus.hpp"
#include "cytocap/errors.hpp"
#include "doctest.h"

using namespace cytocap;

namespace {

const std::string kFixtures = CYTOCAP_FIXTURES_DIR;

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::set<std::string> word_set(const std::string& s) {
  std::set<std::string> out;
  std::string cur;
  for (char c : s + " ") {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.insert(cur);
      cur.clear();
    }
  }
  return out;
}

// Reference BFS over an undirected edge list; result grouped by level, each
// level sorted.
std::vector<std::string> bfs_oracle(const std::vector<std::pair<std::string, std::string>>& edges,
                                    const std::vector<std::string>& seeds, std::size_t depth) {
  std::map<std::string, std::set<std::string>> adj;
  for (const auto& [a, b] : edges) {
    adj[a].insert(b);
    adj[b].insert(a);
  }
  std::set<std::string> seen(seeds.begin(), seeds.end());
  std::vector<std::string> level(seen.begin(), seen.end());
  std::vector<std::string> out = level;
  for (std::size_t d = 0; d < depth; ++d) {
    std::set<std::string> next;
    for (const auto& n : level)
      for (const auto& m : adj[n])
        if (!seen.contains(m)) next.insert(m);
    seen.insert(next.begin(), next.end());
    level.assign(next.begin(), next.end());
    out.insert(out.end(), level.begin(), level.end());
  }
  return out;
}

class ThrowingExtractor final : public StatementExtractor {
 public:
  std::vector<std::string> extract(const Chunk&, const std::string&, const std::vector<std::string>&) override {
    throw std::runtime_error("backend down");
  }
};

}  // namespace

TEST_CASE("ingest fixture with one bad sidecar") {
  const auto r = ingest(kFixtures + "/ingest");
  REQUIRE(r.documents.size() == 2);
  CHECK(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("gamma") != std::string::npos);
  CHECK(r.documents[0].doc_id == "beta");
  CHECK(r.documents[1].doc_id == "doc-alpha");
  CHECK(r.documents[1].title == "Area hOc1 revisited");
  CHECK(r.documents[1].abstract_text == "Mapping hOc1.");
  CHECK(r.documents[1].year == 2001);
  CHECK(r.documents[1].body.find("broad layer IV") != std::string::npos);
  CHECK_THROWS_AS(ingest(kFixtures + "/does-not-exist"), Error);
}

TEST_CASE("citation TSV parsing") {
  const auto g = CitationGraph::parse_tsv("# comment\na\tb\n\nb\tc\n");
  CHECK(g.num_edges() == 2);
  CHECK(g.contains("a"));
  CHECK(g.neighbours("b") == std::set<std::string>{"a", "c"});
  try {
    CitationGraph::parse_tsv("a\tb\nbroken line\n");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == 4);
  }
  CHECK_THROWS_AS(CitationGraph::parse_tsv("a\ta\n"), FormatError);
  CitationGraph loop;
  CHECK_THROWS_AS(loop.add_edge("a", "a"), ValidationError);
  CitationGraph known;
  known.add_edge("x", "y");
  CHECK(known.external_ids({"x"}) == std::vector<std::string>{"y"});
}

TEST_CASE("expand_citations matches reference BFS") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 20);
    std::vector<std::pair<std::string, std::string>> edges;
    CitationGraph g;
    for (int i = 0; i < n; ++i) g.add_node("d" + std::to_string(i));
    const int m = static_cast<int>(rng() % (2 * n));
    for (int e = 0; e < m; ++e) {
      const auto a = "d" + std::to_string(rng() % n), b = "d" + std::to_string(rng() % n);
      if (a == b) continue;
      edges.emplace_back(a, b);
      g.add_edge(a, b);
    }
    std::vector<std::string> seeds = {"d" + std::to_string(rng() % n), "d" + std::to_string(rng() % n)};
    const std::size_t depth = rng() % 4;
    CHECK(expand_citations(seeds, g, depth) == bfs_oracle(edges, seeds, depth));
  }
  CitationGraph g;
  g.add_node("a");
  CHECK(expand_citations({"a"}, g, 3) == std::vector<std::string>{"a"});
  CHECK_THROWS_AS(expand_citations({"nope"}, g, 1), ValidationError);
}

TEST_CASE("keyword_filter exhaustive oracle") {
  const std::vector<std::string> words = {"hoc1", "HOC2", "layer", "fg1", "cortex", "map", "fg", "4a", "4p"};
  std::mt19937_64 rng(11);
  std::vector<Document> docs;
  for (int i = 0; i < 200; ++i) {
    Document d;
    d.doc_id = "doc" + std::to_string(i);
    for (int w = 0; w < 4; ++w) {
      d.title += words[rng() % words.size()];
      d.title += (rng() % 3 == 0) ? ", " : " ";
    }
    d.abstract_text = words[rng() % words.size()] + "-" + words[rng() % words.size()] + ".";
    docs.push_back(d);
  }
  AreaKeywords kw = {{area(0), {"hOc1"}}, {area(1), {"hOc2", "fg"}}, {area(2), {"4p"}}};
  const auto got = keyword_filter(docs, kw);
  for (const auto& [a, phrases] : kw) {
    std::vector<std::string> expect;
    for (const auto& d : docs) {
      const auto ws = word_set(d.title + " " + d.abstract_text);
      bool hit = false;
      for (const auto& p : phrases) hit = hit || ws.contains(lower(p));
      if (hit) expect.push_back(d.doc_id);
    }
    std::sort(expect.begin(), expect.end());
    CHECK(got.at(a) == expect);
  }
  Document d{"x", "Area hOc1 mapping", "", "", 0, ""};
  CHECK(keyword_filter({d}, {{area(0), {"area hOc1"}}}).at(area(0)).size() == 1);
  CHECK(keyword_filter({d}, {{area(0), {"area hOc"}}}).at(area(0)).empty());
}

TEST_CASE("sentence_boundaries independent scan") {
  const std::string body = "First one. Second!  Third? no.break here.\nNext line.   End.";
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i + 1 < body.size(); ++i) {
    if (std::string(".!?").find(body[i]) == std::string::npos) continue;
    if (!std::isspace(static_cast<unsigned char>(body[i + 1]))) continue;
    std::size_t j = i + 1;
    while (j < body.size() && std::isspace(static_cast<unsigned char>(body[j]))) ++j;
    if (j < body.size()) expect.push_back(j);
  }
  CHECK(sentence_boundaries(body) == expect);
  CHECK(expect == std::vector<std::size_t>{11, 20, 27, 42, 55});
}

TEST_CASE("chunk windows") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    Document doc;
    doc.doc_id = "d";
    const int n = 5 + static_cast<int>(rng() % 60);
    for (int s = 0; s < n; ++s) {
      doc.body += "Sentence";
      for (int w = 0; w < static_cast<int>(rng() % 25); ++w) doc.body += " word";
      doc.body += ". ";
    }
    const std::size_t max = 200 + rng() % 300, overlap = rng() % 80, window = 120;
    const auto chunks = chunk(doc, max, overlap, window);
    const auto bounds = sentence_boundaries(doc.body);
    const std::set<std::size_t> bset(bounds.begin(), bounds.end());
    REQUIRE_FALSE(chunks.empty());
    CHECK(chunks.front().begin == 0);
    CHECK(chunks.back().end == doc.body.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const auto& c = chunks[i];
      CHECK(c.index == i);
      CHECK(c.text == doc.body.substr(c.begin, c.end - c.begin));
      CHECK(c.end - c.begin <= max);
      if (i > 0) CHECK(c.begin == chunks[i - 1].end - overlap);
      if (i + 1 < chunks.size()) {
        // either a hard cut at max or the last boundary inside the snap window
        const std::size_t hard = c.begin + max;
        std::size_t best = 0;
        for (auto b : bounds)
          if (b <= hard && b + window >= hard && b > c.begin + overlap) best = b;
        CHECK(c.end == (best ? best : hard));
        if (best) CHECK(bset.contains(c.end));
      }
    }
  }
  Document tiny{"t", "", "", "Short.", 0, ""};
  CHECK(chunk(tiny, 100, 10).size() == 1);
  CHECK_THROWS_AS(chunk(tiny, 10, 10), PreconditionError);
}

TEST_CASE("stub extractor and post-processing") {
  Chunk c{"doc", 2, 0, 0,
          "Area hOc1 has a broad layer IV. The method is robust. Area hOc1 covers 1200 mm3. "
          "In V1, layer II is thin."};
  StubExtractor ex;
  const auto raw = ex.extract(c, "hOc1", {"hOc1", "V1"});
  CHECK(raw == std::vector<std::string>{"Area hOc1 has a broad layer IV.", "In V1, layer II is thin."});
  Chunk m{"doc", 0, 0, 0, "Area 5M is granular. Area 5M is 2.4 mm thick."};
  CHECK(ex.extract(m, "5M", {"5M"}) == std::vector<std::string>{"Area 5M is granular."});

  const auto pp = postprocess_statements({"- **Layer IV** of area X is broad.", "2. Layer II is thin. It is `dense`.",
                                          "* layer iv of area x is broad.", "(3) Area X is granular"});
  CHECK(pp == std::vector<std::string>{"Layer IV of area X is broad.", "Layer II is thin.", "It is dense.",
                                       "Area X is granular"});
}

TEST_CASE("extract_statements and dedup") {
  const auto& lex = LabelLexicon::standard();
  Chunk c{"doc", 1, 0, 0, "Area hOc1 has a broad layer IV. Area hOc1 has a broad layer IV. Nothing here."};
  StubExtractor stub;
  const auto s = extract_statements(c, area(0), lex, {"hOc1"}, stub);
  REQUIRE(s.size() == 1);
  CHECK(s[0].doc_id == "doc");
  CHECK(s[0].chunk == 1);
  CHECK(s[0].area == area(0));

  ThrowingExtractor bad;
  try {
    extract_statements(c, area(0), lex, {"hOc1"}, bad);
    FAIL("expected RetryableError");
  } catch (const RetryableError& e) {
    CHECK(e.item_id == "doc#1");
  }

  std::vector<Statement> all = {
      {"x", area(1), "Layer II is thin.", "b", 0},   {"x", area(0), "Layer II is thin.", "b", 0},
      {"x", area(0), "layer  II is THIN.", "a", 3},  {"x", area(0), "Layer IV is broad.", "a", 0},
  };
  const auto d = dedup_statements(all, lex);
  REQUIRE(d.size() == 3);
  CHECK(d[0].doc_id == "a");
  CHECK(d[0].text == "Layer IV is broad.");
  CHECK(d[0].statement_id == "hOc1-0000");
  CHECK(d[1].text == "layer  II is THIN.");
  CHECK(d[1].statement_id == "hOc1-0001");
  CHECK(d[2].statement_id == "hOc2-0000");
  CHECK(statement_from_json(statement_to_json(d[1], lex), lex).text == d[1].text);
  CHECK(statement_from_json(statement_to_json(d[2], lex), lex).area == area(1));
}

TEST_CASE("llm extractor through the stub client") {
  StubClient client([](const GenerationRequest& r, const std::string&) {
    CHECK(r.user_prompt.find("area hOc2") != std::string::npos);
    return "1. **Area hOc2** has a thin layer IV.\n\n- Area hOc2 has a thin layer IV.\n- Layer VI is broad.";
  });
  LlmExtractor ex(client, 1);
  Chunk c{"doc", 0, 0, 0, "irrelevant"};
  const auto s = extract_statements(c, area(1), LabelLexicon::standard(), {}, ex);
  REQUIRE(s.size() == 2);
  CHECK(s[0].text == "Area hOc2 has a thin layer IV.");
  CHECK(s[1].text == "Layer VI is broad.");
}
