#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cytocap/errors.hpp"
#include "cytocap/qa_bench.hpp"
#include "cytocap/random.hpp"
#include "doctest.h"
#include "stats_oracle.hpp"

using namespace cytocap;
using nlohmann::json;

namespace {

const std::string kFixtures = CYTOCAP_FIXTURES_DIR;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<QAItem> synthetic_items(std::size_t n, std::uint64_t seed) {
  std::vector<QAItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    QAItem it;
    it.question_id = "s" + std::to_string(i);
    it.stem = "Question " + std::to_string(i) + "?";
    it.options = {"alpha", "beta", "gamma", "delta"};
    items.push_back(randomize_options(it, derive_seed(seed, i)));
  }
  return items;
}

Chunk fixture_chunk() {
  Chunk c;
  c.doc_id = "qa";
  c.index = 0;
  c.text = slurp(kFixtures + "/qa/corpus.txt");
  return c;
}

}  // namespace

TEST_CASE("artifact filter on the hand-labeled fixture") {
  std::ifstream in(kFixtures + "/qa/filter_items.jsonl");
  std::vector<QAItem> items;
  std::map<std::string, std::string> expect;
  for (std::string line; std::getline(in, line);) {
    items.push_back(qa_item_from_json(line));
    expect[items.back().question_id] = json::parse(line).at("expect");
  }
  REQUIRE(items.size() == 10);
  const auto r = filter_artifacts(items);
  for (const auto& it : r.kept) CHECK_MESSAGE(expect[it.question_id] == "kept", it.question_id);
  for (const auto& [it, reason] : r.dropped) CHECK_MESSAGE(expect[it.question_id] == reason, it.question_id);
  CHECK(r.kept.size() + r.dropped.size() == 10);
  CHECK(r.kept.size() == 3);

  const auto again = filter_artifacts(r.kept);
  CHECK(again.dropped.empty());
  CHECK(again.kept.size() == r.kept.size());

  ArtifactRules off{false, false, false};
  CHECK(filter_artifacts(items, off).kept.size() == 10);
}

TEST_CASE("positional reference patterns") {
  CHECK(has_positional_reference("Is option C right?"));
  CHECK(has_positional_reference("see answer (b)"));
  CHECK(has_positional_reference("None of the above applies"));
  CHECK(has_positional_reference("the last option is"));
  CHECK_FALSE(has_positional_reference("Which option best describes layer IV?"));
  CHECK_FALSE(has_positional_reference("the first layer"));
  CHECK_FALSE(has_positional_reference("option 4a of the atlas"));
}

TEST_CASE("stub generator on the QA fixture corpus") {
  const json expected = json::parse(slurp(kFixtures + "/qa/expected.json"));
  StubQAGenerator gen(LabelLexicon::standard(), 3);
  const auto res = generate_qa({fixture_chunk()}, gen);
  CHECK(res.malformed == 0);
  REQUIRE(res.items.size() == expected["answers"].size());
  for (const auto& it : res.items) {
    CHECK(it.options.size() == 4);
    CHECK(it.options[it.correct_index] == expected["answers"][it.question_id].get<std::string>());
    CHECK(it.stem.find(StubQAGenerator::kBlank) != std::string::npos);
  }
  // distractors never name an area mentioned in the sentence
  for (const auto& it : res.items)
    if (it.question_id == "qa#0:2")
      CHECK(std::find(it.options.begin(), it.options.end(), "FG2") == it.options.end());

  std::vector<QAItem> shuffled;
  for (const auto& it : res.items) shuffled.push_back(randomize_options(it, 99));
  const auto r = filter_artifacts(shuffled);
  std::vector<std::string> kept;
  for (const auto& it : r.kept) kept.push_back(it.question_id);
  CHECK(kept == expected["kept"].get<std::vector<std::string>>());
  std::map<std::string, std::string> dropped;
  for (const auto& [it, reason] : r.dropped) dropped[it.question_id] = reason;
  CHECK(dropped == expected["dropped"].get<std::map<std::string, std::string>>());

  const auto rerun = generate_qa({fixture_chunk()}, gen);
  for (std::size_t i = 0; i < rerun.items.size(); ++i) CHECK(rerun.items[i].options == res.items[i].options);
}

TEST_CASE("llm generator parses lines and counts malformed ones") {
  StubClient client([](const GenerationRequest&, const std::string&) {
    return std::string(
        R"({"question":"Which area is striate?","options":["hOc1","hOc2","FG1","FG2"],"answer":0})"
        "\n\nnot json\n"
        R"({"question":"Dup?","options":["a","A","b","c"],"answer":1})"
        "\n"
        R"({"question":"Too few?","options":["a","b"],"answer":1})"
        "\n"
        R"({"question":"Range?","options":["a","b","c","d"],"answer":7})");
  });
  LlmQAGenerator gen(client, 1);
  const auto r = generate_qa({fixture_chunk()}, gen);
  REQUIRE(r.items.size() == 1);
  CHECK(r.malformed == 4);
  CHECK(r.items[0].question_id == "qa#0:g0");
  CHECK(r.items[0].doc_id == "qa");
}

TEST_CASE("option randomization") {
  QAItem it{"q", "Which?", {"w", "x", "y", "z"}, 2, "d", 0};
  std::vector<double> pos(4, 0.0);
  for (std::uint64_t s = 0; s < 8000; ++s) {
    const auto r = randomize_options(it, s);
    auto a = r.options, b = it.options;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK(r.options[r.correct_index] == "y");
    pos[r.correct_index] += 1;
  }
  for (double p : pos) CHECK(std::abs(p - 2000.0) < 4 * std::sqrt(8000 * 0.25 * 0.75));
  CHECK(option_permutation(6, 5) == option_permutation(6, 5));
}

TEST_CASE("answerers") {
  const auto items = synthetic_items(10000, 8);
  PerfectAnswerer perfect;
  const auto p = score_model(items, perfect);
  CHECK(p.share_correct == 1.0);
  CHECK(p.n_answered == 10000);
  RandomAnswerer random(123);
  const auto r = score_model(items, random);
  CHECK(r.n_answered == 10000);
  CHECK(std::abs(r.share_correct - 0.25) <= 0.015);
  CHECK(score_model(items, random).share_correct == r.share_correct);
  CHECK_THROWS_AS(score_model({}, perfect), PreconditionError);

  StubClient letter([](const GenerationRequest&, const std::string&) { return std::string("The answer is B."); });
  LlmAnswerer llm(letter);
  const auto l = score_model(synthetic_items(40, 8), llm);
  CHECK(l.n_answered == 40);
  StubClient junk([](const GenerationRequest&, const std::string&) { return std::string("unsure"); });
  LlmAnswerer bad(junk);
  const auto f = score_model(synthetic_items(5, 8), bad);
  CHECK(f.n_failed == 5);
  CHECK(f.n_answered == 0);
}

TEST_CASE("item json and validation") {
  QAItem it{"q1", "Stem?", {"a", "b", "c"}, 2, "doc", 4};
  const auto back = qa_item_from_json(qa_item_to_json(it));
  CHECK(back.question_id == "q1");
  CHECK(back.options == it.options);
  CHECK(back.correct_index == 2);
  CHECK(back.chunk == 4);
  CHECK_THROWS_AS(validate_item({"q", " ", {"a", "b"}, 0, "", 0}), ValidationError);
  CHECK_THROWS_AS(validate_item({"q", "s", {"a", "b"}, 2, "", 0}), ValidationError);
  CHECK_THROWS_AS(validate_item({"q", "s", {"a", "a "}, 0, "", 0}), ValidationError);
}

TEST_CASE("scoreboard with the published reference rows") {
  const json pub = load_published_scoreboard(std::string(CYTOCAP_DATA_DIR) + "/reference/qa_published.json");
  CHECK(pub["rows"].size() == 11);
  CHECK(pub["questions"] == 10955);
  const json sb = scoreboard_json({{"answer-key", 10, 0, 1.0}, {"uniform-random", 10, 0, 0.3}}, pub);
  CHECK(sb["live"].size() == 2);
  const auto md = scoreboard_markdown(sb);
  CHECK(md.find("| answer-key | ") != std::string::npos);
  CHECK(md.find("| Model | # Parameters | Medical fine-tuning? | Score |") != std::string::npos);
  CHECK(md.find("100.0%") != std::string::npos);
  CHECK(md.find("34.0%") != std::string::npos);
}

TEST_CASE("answer-position uniformity p-values are calibrated across seeds") {
  // under a uniform shuffle the chi-square p-value is itself uniform
  const std::size_t runs = 200;
  std::size_t below = 0;
  for (std::uint64_t base = 0; base < runs; ++base) {
    std::vector<double> pos(4, 0.0);
    for (std::size_t i = 0; i < 5000; ++i) {
      QAItem q{"q", "s", {"a", "b", "c", "d"}, 0, "", 0};
      pos[randomize_options(q, derive_seed(base, i)).correct_index] += 1;
    }
    below += oracle::uniformity_p(pos) < 0.05;
  }
  // Binomial(200, 0.05): mean 10, sd 3.1
  CHECK(below <= 22);
}
