#include <cmath>
#include <map>
#include <random>
#include <set>

#include "cytocap/errors.hpp"
#include "cytocap/evaluation.hpp"
#include "doctest.h"
#include "stats_oracle.hpp"

using namespace cytocap;
using oracle::chi_square_sf;
using oracle::chi_square_stat;

namespace {

const LabelLexicon& lex() { return LabelLexicon::standard(); }

AreaId id(const char* name) { return *lex().find(name); }

StatementPool full_pool(std::size_t per_area) {
  StatementPool p;
  for (AreaId a : lex().area_ids())
    for (std::size_t i = 0; i < per_area; ++i)
      p[a].push_back({lex().name(a) + "#" + std::to_string(i), a,
                      "Area " + lex().name(a) + " shows trait" + std::to_string(index_of(a)) + "x" + std::to_string(i) + ".",
                      "doc", 0});
  return p;
}

}  // namespace

TEST_CASE("chi-square tail helper") {
  // known quantiles: chi2(0.95; 1) = 3.841459, chi2(0.95; 7) = 14.06714, chi2(0.99; 55) = 82.29212
  CHECK(chi_square_sf(3.841459, 1) == doctest::Approx(0.05).epsilon(1e-4));
  CHECK(chi_square_sf(14.06714, 7) == doctest::Approx(0.05).epsilon(1e-4));
  CHECK(chi_square_sf(82.29212, 55) == doctest::Approx(0.01).epsilon(1e-3));
}

TEST_CASE("extract_label") {
  CHECK(extract_label("This patch shows cytoarchitecture of area hOc1. Layer IV is thick.", lex()) == id("hOc1"));
  CHECK(extract_label("This patch shows cytoarchitecture of area V2.", lex()) == id("hOc2"));
  CHECK(extract_label(kUnknownCaption, lex()) == AreaId::Unknown);
  // only the first sentence counts
  CHECK(extract_label("This patch shows cortex. Area hOc1 is nearby.", lex()) == AreaId::None);
  CHECK(extract_label("Area hOc1 borders area FG1.", lex()) == AreaId::None);
  CHECK(extract_label("Area hOc1 and V1 again.", lex()) == id("hOc1"));
  CHECK(extract_label("Area hOc4la is lateral.", lex()) == id("hOc4la"));
  CHECK(extract_label("Area PFop here.", lex()) == id("PFop"));
  CHECK(extract_label("Area PFopx here.", lex()) == AreaId::None);
  CHECK(extract_label("", lex()) == AreaId::None);
}

TEST_CASE("mask_areas") {
  CHECK(mask_areas("Area hOc1 (V1) borders hOc2 and an unknown area.", lex()) ==
        "Area [AREA] ([AREA]) borders [AREA] and an [AREA] area.");
  CHECK(mask_areas("Area PFopx stays, PF goes.", lex()) == "Area PFopx stays, [AREA] goes.");
  CHECK(mask_areas("no areas", lex()) == "no areas");
}

TEST_CASE("label consistency against an independent confusion matrix") {
  std::mt19937_64 rng(404);
  const std::vector<AreaId> labels{area(0), area(1), area(2), area(3), AreaId::Unknown};
  for (int c = 0; c < 20; ++c) {
    const std::size_t n = 5 + rng() % 60;
    std::vector<LabelResult> rs;
    for (std::size_t i = 0; i < n; ++i) {
      LabelResult r;
      r.reference = labels[rng() % labels.size()];
      const auto roll = rng() % 10;
      r.predicted = roll < 5 ? r.reference : roll < 9 ? labels[rng() % labels.size()] : AreaId::None;
      rs.push_back(r);
    }
    const auto m = label_consistency(rs);

    std::map<std::pair<AreaId, AreaId>, double> cm;
    std::set<AreaId> classes;
    for (const auto& r : rs) {
      cm[{r.reference, r.predicted}] += 1;
      classes.insert(r.reference);
      if (r.predicted != AreaId::None) classes.insert(r.predicted);
    }
    double macro = 0, trace = 0, predicted = 0;
    for (AreaId k : classes) {
      double tp = cm[{k, k}], fp = 0, fn = 0;
      for (const auto& [key, v] : cm) {
        if (key.second == k && key.first != k) fp += v;
        if (key.first == k && key.second != k) fn += v;
      }
      macro += 2 * tp / (2 * tp + fp + fn);
      trace += tp;
    }
    for (const auto& [key, v] : cm)
      if (key.second != AreaId::None) predicted += v;
    macro /= static_cast<double>(classes.size());
    const double p = trace / predicted, rcl = trace / static_cast<double>(n);
    const double micro = p + rcl > 0 ? 2 * p * rcl / (p + rcl) : 0.0;
    double in_n = 0, in_ok = 0, un_n = 0, un_ok = 0;
    for (const auto& r : rs) {
      (r.reference == AreaId::Unknown ? un_n : in_n) += 1;
      if (r.reference == r.predicted) (r.reference == AreaId::Unknown ? un_ok : in_ok) += 1;
    }
    CHECK(std::abs(m.macro_f1 - macro) < 1e-12);
    CHECK(std::abs(m.micro_f1 - micro) < 1e-12);
    CHECK(std::abs(m.in_scope_accuracy - (in_n ? in_ok / in_n : 0.0)) < 1e-12);
    CHECK(std::abs(m.unknown_accuracy - (un_n ? un_ok / un_n : 0.0)) < 1e-12);
    CHECK(m.per_class.size() == classes.size());
  }
  CHECK_THROWS_AS(label_consistency({}), PreconditionError);
  CHECK_THROWS_AS(label_consistency({{area(0), AreaId::None}}), PreconditionError);
}

TEST_CASE("mc items: structure and uniform distractors") {
  const auto pool = full_pool(6);
  const auto areas = lex().area_ids();
  const AreaId target = id("hOc1");
  const std::size_t n_items = 6000;
  std::vector<double> position(8, 0.0);
  std::map<AreaId, double> distractor;
  for (std::size_t i = 0; i < n_items; ++i) {
    const auto item = build_mc_item("it" + std::to_string(i), "caption", target, pool, areas, 1000 + i);
    REQUIRE(item.candidates.size() == 8);
    REQUIRE(item.candidates[item.correct_index] == target);
    CHECK(std::set<AreaId>(item.candidates.begin(), item.candidates.end()).size() == 8);
    position[item.correct_index] += 1;
    for (std::size_t k = 0; k < 8; ++k) {
      CHECK(item.statements[k].size() == 5);
      if (k != item.correct_index) distractor[item.candidates[k]] += 1;
    }
  }
  std::vector<double> dcounts;
  for (AreaId a : areas)
    if (a != target) dcounts.push_back(distractor[a]);
  REQUIRE(dcounts.size() == areas.size() - 1);
  const double p_pos = chi_square_sf(chi_square_stat(position), 7);
  const double p_dis = chi_square_sf(chi_square_stat(dcounts), static_cast<double>(dcounts.size() - 1));
  MESSAGE("position p=" << p_pos << " distractor p=" << p_dis);
  CHECK(p_pos > 0.001);
  CHECK(p_dis > 0.001);

  CHECK_THROWS_AS(build_mc_item("x", "c", AreaId::Unknown, pool, areas, 1), PreconditionError);
  CHECK_THROWS_AS(build_mc_item("x", "c", area(0), pool, {area(0), area(1), area(2)}, 1), PreconditionError);
}

TEST_CASE("random judge converges to chance") {
  const auto pool = full_pool(5);
  const auto areas = lex().area_ids();
  std::vector<MCItem> items;
  for (std::size_t i = 0; i < 10000; ++i)
    items.push_back(build_mc_item("r" + std::to_string(i), "c", areas[i % areas.size()], pool, areas, i, 8, 1));
  RandomJudge judge(77);
  const auto r = discriminability(items, judge);
  CHECK(r.n == 10000);
  CHECK(std::abs(r.accuracy - 0.125) < 4 * std::sqrt(0.125 * 0.875 / 10000.0));
  std::vector<double> choices(8, 0.0);
  for (auto c : r.choices) choices[c] += 1;
  CHECK(chi_square_sf(chi_square_stat(choices), 7) > 0.001);
}

TEST_CASE("oracle judge picks the candidate whose statements share words with the caption") {
  const auto pool = full_pool(5);
  const auto areas = lex().area_ids();
  const AreaId target = id("FG2");
  auto item = build_mc_item("o", "", target, pool, areas, 3);
  item.redacted_caption = "[AREA] shows trait" + std::to_string(index_of(target)) + "x2.";
  OracleJudge judge;
  CHECK(judge.choose(item) == item.correct_index);
}

TEST_CASE("bootstrap confidence interval") {
  std::vector<bool> s(400);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = i % 2 == 0;
  const auto ci = bootstrap_ci(s, 4000, 0.95, 9);
  CHECK(ci.point == 0.5);
  // normal approximation half-width 1.96 * sqrt(0.25 / 400) = 0.049
  CHECK(ci.upper - ci.point == doctest::Approx(0.049).epsilon(0.2));
  CHECK(ci.point - ci.lower == doctest::Approx(0.049).epsilon(0.2));
  const auto again = bootstrap_ci(s, 4000, 0.95, 9);
  CHECK(again.lower == ci.lower);
  CHECK(again.upper == ci.upper);
  const auto all = bootstrap_ci(std::vector<bool>(30, true), 500, 0.95, 1);
  CHECK(all.lower == 1.0);
  CHECK(all.upper == 1.0);
  CHECK_THROWS_AS(bootstrap_ci({}, 10, 0.95, 1), PreconditionError);
  CHECK_THROWS_AS(bootstrap_ci(s, 10, 1.5, 1), PreconditionError);
}

TEST_CASE("llm judge reply parsing") {
  CHECK(LlmJudge::parse_choice("C", 8) == 2);
  CHECK(LlmJudge::parse_choice("The answer is (B).", 8) == 1);
  CHECK(LlmJudge::parse_choice("Option 4", 8) == 3);
  CHECK_THROWS_AS(LlmJudge::parse_choice("I think it is Z", 8), MalformedResponseError);
  CHECK_THROWS_AS(LlmJudge::parse_choice("H", 4), MalformedResponseError);

  const auto pool = full_pool(5);
  const auto item = build_mc_item("j", "[AREA] x", id("hOc1"), pool, lex().area_ids(), 5);
  StubClient answer([&](const GenerationRequest&, const std::string&) {
    return std::string(1, static_cast<char>('A' + item.correct_index));
  });
  LlmJudge judge(answer, lex());
  CHECK(judge.choose(item) == item.correct_index);
  StubClient junk([](const GenerationRequest&, const std::string&) { return std::string("no idea"); });
  LlmJudge bad(junk, lex());
  const auto r = discriminability({item}, bad);
  CHECK(r.failures == 1);
  CHECK(r.n == 0);
}

TEST_CASE("evaluate_captions end to end") {
  const auto pool = full_pool(5);
  std::vector<GeneratedCaption> caps{
      {"p1", id("hOc1"), "This patch shows cytoarchitecture of area hOc1. Area hOc1 shows trait0x1.", {}},
      {"p2", id("hOc2"), "This patch shows cytoarchitecture of area hOc1.", {}},
      {"p3", AreaId::Unknown, kUnknownCaption, {}},
      {"p4", id("FG1"), "Nothing here.", {}},
  };
  EvalConfig cfg;
  cfg.bootstrap_iterations = 200;
  OracleJudge judge;
  const auto r = evaluate_captions(caps, pool, lex(), cfg, judge);
  CHECK(r.consistency.in_scope_correct == 1);
  CHECK(r.consistency.n_in_scope == 3);
  CHECK(r.consistency.unknown_accuracy == 1.0);
  CHECK(r.excluded_unknown == 1);
  CHECK(r.excluded_none == 1);
  REQUIRE(r.items.size() == 2);
  for (const auto& it : r.items) CHECK(it.redacted_caption.find("hOc1") == std::string::npos);
  const auto j = report_to_json(r, lex());
  CHECK(j["discriminability"]["n"] == 2);
  CHECK(!report_to_markdown(j).empty());

  const auto line = mc_item_to_json(r.items[0], lex(), true);
  const auto back = mc_item_from_json(line, lex());
  CHECK(back.candidates == r.items[0].candidates);
  CHECK(back.correct_index == r.items[0].correct_index);
  CHECK(back.statements == r.items[0].statements);
  const auto scored = score_judge_answers(r.items, {{r.items[0].item_id, r.items[0].correct_index}});
  CHECK(scored.n == 1);
  CHECK(scored.failures == 1);
  CHECK(scored.accuracy == 1.0);
}
