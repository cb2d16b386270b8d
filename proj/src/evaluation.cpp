#include "cytocap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "cytocap/errors.hpp"
#include "cytocap/random.hpp"
#include "cytocap/text.hpp"

namespace cytocap {

using nlohmann::json;

namespace {

struct AliasHit {
  std::size_t begin, end;
  AreaId id;
};

// Non-overlapping alias hits, longest alias first at contested positions.
std::vector<AliasHit> alias_hits(std::string_view s, const LabelLexicon& lexicon) {
  std::vector<AliasHit> hits;
  for (const auto& [alias, id] : lexicon.all_aliases()) {
    for (const auto& m : text::find_whole_word(s, alias)) {
      bool overlaps = false;
      for (const auto& h : hits) {
        if (m.begin < h.end && h.begin < m.end) {
          overlaps = true;
          break;
        }
      }
      if (!overlaps) hits.push_back({m.begin, m.end, id});
    }
  }
  std::sort(hits.begin(), hits.end(), [](const AliasHit& a, const AliasHit& b) { return a.begin < b.begin; });
  return hits;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::unordered_map<std::string, double> term_freq(const std::vector<std::string>& words) {
  std::unordered_map<std::string, double> tf;
  for (const auto& w : words) tf[w] += 1.0;
  return tf;
}

double cosine(const std::unordered_map<std::string, double>& a, const std::unordered_map<std::string, double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (const auto& [w, x] : a) {
    na += x * x;
    if (auto it = b.find(w); it != b.end()) dot += x * it->second;
  }
  for (const auto& [w, x] : b) nb += x * x;
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

AreaId extract_label(std::string_view caption, const LabelLexicon& lexicon) {
  const std::string first = text::first_sentence(caption);
  std::set<AreaId> found;
  for (const auto& h : alias_hits(first, lexicon)) found.insert(h.id);
  return found.size() == 1 ? *found.begin() : AreaId::None;
}

std::string mask_areas(std::string_view s, const LabelLexicon& lexicon) {
  std::string out;
  std::size_t pos = 0;
  for (const auto& h : alias_hits(s, lexicon)) {
    out.append(s.substr(pos, h.begin - pos));
    out.append(kAreaPlaceholder);
    pos = h.end;
  }
  out.append(s.substr(pos));
  return out;
}

ConsistencyMetrics label_consistency(const std::vector<LabelResult>& results) {
  if (results.empty()) throw PreconditionError("label_consistency: no results");
  ConsistencyMetrics m;
  std::map<AreaId, ClassF1> classes;
  std::size_t predicted_labels = 0, tp_total = 0;
  for (const auto& r : results) {
    if (r.reference == AreaId::None) throw PreconditionError("label_consistency: reference label missing");
    const bool ok = r.predicted == r.reference;
    if (r.reference == AreaId::Unknown) {
      ++m.n_unknown;
      m.unknown_correct += ok;
      m.unknown_successes.push_back(ok);
    } else {
      ++m.n_in_scope;
      m.in_scope_correct += ok;
      m.in_scope_successes.push_back(ok);
    }
    if (r.predicted == AreaId::None) ++m.n_none_predictions;
    auto& ref = classes.try_emplace(r.reference, ClassF1{r.reference}).first->second;
    if (ok) {
      ++ref.tp;
      ++tp_total;
    } else {
      ++ref.fn;
    }
    if (r.predicted != AreaId::None) {
      ++predicted_labels;
      if (!ok) ++classes.try_emplace(r.predicted, ClassF1{r.predicted}).first->second.fp;
    }
  }
  m.in_scope_accuracy = m.n_in_scope ? static_cast<double>(m.in_scope_correct) / static_cast<double>(m.n_in_scope) : 0.0;
  m.unknown_accuracy = m.n_unknown ? static_cast<double>(m.unknown_correct) / static_cast<double>(m.n_unknown) : 0.0;
  double sum = 0;
  for (auto& [_, c] : classes) {
    const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
    c.f1 = denom > 0 ? 2.0 * static_cast<double>(c.tp) / denom : 0.0;
    sum += c.f1;
    m.per_class.push_back(c);
  }
  m.macro_f1 = classes.empty() ? 0.0 : sum / static_cast<double>(classes.size());
  const double precision = predicted_labels ? static_cast<double>(tp_total) / static_cast<double>(predicted_labels) : 0.0;
  const double recall = static_cast<double>(tp_total) / static_cast<double>(results.size());
  m.micro_f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  return m;
}

MCItem build_mc_item(const std::string& item_id, const std::string& redacted_caption, AreaId predicted_area,
                     const StatementPool& pool, const std::vector<AreaId>& all_areas, std::uint64_t seed,
                     std::size_t num_options, std::size_t statements_per_option) {
  if (!is_target(predicted_area) ||
      std::find(all_areas.begin(), all_areas.end(), predicted_area) == all_areas.end()) {
    throw PreconditionError("build_mc_item: predicted area " + area_code_string(predicted_area) +
                            " is not one of the candidate areas");
  }
  if (num_options < 2) throw PreconditionError("build_mc_item: need at least 2 options");
  std::vector<AreaId> others;
  for (AreaId a : all_areas)
    if (a != predicted_area && is_target(a)) others.push_back(a);
  if (others.size() < num_options - 1) {
    throw PreconditionError("build_mc_item: only " + std::to_string(others.size()) + " distractor areas available");
  }
  Rng rng(seed);
  MCItem item;
  item.item_id = item_id;
  item.redacted_caption = redacted_caption;
  item.seed = seed;
  item.candidates.push_back(predicted_area);
  for (auto i : sample_indices(rng, others.size(), num_options - 1)) item.candidates.push_back(others[i]);
  shuffle_in_place(item.candidates, rng);
  item.correct_index = static_cast<std::size_t>(
      std::find(item.candidates.begin(), item.candidates.end(), predicted_area) - item.candidates.begin());
  for (AreaId a : item.candidates) {
    std::vector<std::string> texts;
    for (const auto& s : sample_statements(pool, a, statements_per_option, derive_seed(seed, index_of(a))))
      texts.push_back(s.text);
    item.statements.push_back(std::move(texts));
  }
  return item;
}

std::size_t OracleJudge::choose(const MCItem& item) {
  const auto caption_tf = term_freq(text::content_words(item.redacted_caption));
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < item.statements.size(); ++i) {
    std::vector<std::string> words;
    for (const auto& s : item.statements[i]) {
      auto w = text::content_words(s);
      words.insert(words.end(), w.begin(), w.end());
    }
    const double score = cosine(caption_tf, term_freq(words));
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

std::size_t RandomJudge::choose(const MCItem& item) {
  Rng rng(derive_seed(seed_, fnv1a(item.item_id)));
  return uniform_index(rng, item.candidates.size());
}

std::string LlmJudge::prompt(const MCItem& item) const {
  // Placeholder prompt template.
  std::ostringstream p;
  p << "The following description of a microscopy patch has had all brain area names replaced by [AREA].\n\n"
    << item.redacted_caption << "\n\nWhich of the following areas does the description refer to?\n";
  for (std::size_t i = 0; i < item.candidates.size(); ++i) {
    p << static_cast<char>('A' + i) << ") " << lexicon_.name(item.candidates[i]) << "\n";
    for (const auto& s : item.statements[i]) p << "   - " << s << "\n";
  }
  p << "\nAnswer with a single letter.";
  return p.str();
}

std::size_t LlmJudge::parse_choice(const std::string& reply, std::size_t num_options) {
  for (std::size_t i = 0; i < reply.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(reply[i]);
    const bool left = i == 0 || !std::isalnum(static_cast<unsigned char>(reply[i - 1]));
    const bool right = i + 1 == reply.size() || !std::isalnum(static_cast<unsigned char>(reply[i + 1]));
    if (!left || !right) continue;
    if (c >= 'A' && c < 'A' + num_options) return c - 'A';
    if (c >= '1' && c < '1' + num_options) return c - '1';
  }
  throw MalformedResponseError("no option label in judge reply");
}

std::size_t LlmJudge::choose(const MCItem& item) {
  GenerationRequest req;
  req.system_prompt = "You are an expert neuroanatomist.";
  req.user_prompt = prompt(item);
  req.max_tokens = 8;
  req.seed = item.seed;
  req.item_id = item.item_id;
  try {
    return parse_choice(client_.complete(req).text, item.candidates.size());
  } catch (const RetryableError&) {
    throw;
  } catch (const std::exception& e) {
    throw RetryableError(std::string("judge failed: ") + e.what(), item.item_id);
  }
}

DiscriminabilityResult discriminability(const std::vector<MCItem>& items, Judge& judge) {
  if (items.empty()) throw PreconditionError("discriminability: no items");
  DiscriminabilityResult r;
  std::size_t correct = 0;
  for (const auto& item : items) {
    std::size_t choice;
    try {
      choice = judge.choose(item);
    } catch (const RetryableError&) {
      ++r.failures;
      continue;
    }
    if (choice >= item.candidates.size()) {
      ++r.failures;
      continue;
    }
    const bool ok = choice == item.correct_index;
    r.successes.push_back(ok);
    r.choices.push_back(choice);
    correct += ok;
  }
  r.n = r.successes.size();
  r.accuracy = r.n ? static_cast<double>(correct) / static_cast<double>(r.n) : 0.0;
  return r;
}

BootstrapCI bootstrap_ci(const std::vector<bool>& successes, std::size_t iterations, double level,
                         std::uint64_t seed) {
  if (successes.empty()) throw PreconditionError("bootstrap_ci: empty sample");
  if (iterations == 0) throw PreconditionError("bootstrap_ci: iterations must be positive");
  if (!(level > 0 && level < 1)) throw PreconditionError("bootstrap_ci: level must be in (0, 1)");
  const std::size_t n = successes.size();
  std::size_t hits = 0;
  for (bool b : successes) hits += b;
  BootstrapCI ci;
  ci.point = static_cast<double>(hits) / static_cast<double>(n);
  ci.level = level;
  ci.iterations = iterations;
  ci.seed = seed;
  std::vector<double> means(iterations);
  for (std::size_t b = 0; b < iterations; ++b) {
    Rng rng(derive_seed(seed, b));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) k += successes[pick(rng)];
    means[b] = static_cast<double>(k) / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(iterations - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, iterations - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  const double alpha = 1.0 - level;
  ci.lower = std::min(quantile(alpha / 2), ci.point);
  ci.upper = std::max(quantile(1 - alpha / 2), ci.point);
  return ci;
}

json to_json(const BootstrapCI& ci) {
  return {{"point", ci.point}, {"lower", ci.lower},           {"upper", ci.upper},
          {"level", ci.level}, {"iterations", ci.iterations}, {"seed", ci.seed}};
}

std::string generate_caption(const Checkpoint& ckpt, const std::vector<float>& embedding, std::size_t max_new_tokens) {
  const Tensor<float> vision = project(embedding, ckpt.adapter);
  std::vector<TokenId> prompt{Vocab::kBos};
  const auto p = prompt_ids(ckpt.vocab);
  prompt.insert(prompt.end(), p.begin(), p.end());
  const std::size_t prompt_len = prompt.size();
  LogitsFn fn = [&](std::span<const TokenId> ids) { return conditioned_forward(ids, vision, ckpt.lm, ckpt.adapter); };
  const auto out = greedy_decode(fn, std::move(prompt), max_new_tokens, ckpt.lm.config.max_seq_len);
  return decode(std::vector<TokenId>(out.begin() + static_cast<std::ptrdiff_t>(prompt_len), out.end()), ckpt.vocab);
}

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<WeakPair>& pairs, const StatementPool& pool,
                    const LabelLexicon& lexicon, const EvalConfig& config, Judge& judge) {
  std::vector<GeneratedCaption> captions;
  for (const auto& p : pairs) {
    GeneratedCaption g;
    g.patch_id = p.patch_id;
    g.reference = p.weak_label;
    g.text = generate_caption(ckpt, p.embedding, config.max_new_tokens);
    captions.push_back(std::move(g));
  }
  return evaluate_captions(std::move(captions), pool, lexicon, config, judge);
}

EvalReport evaluate_captions(std::vector<GeneratedCaption> captions, const StatementPool& pool,
                             const LabelLexicon& lexicon, const EvalConfig& config, Judge& judge) {
  EvalReport r;
  r.judge_name = judge.name();
  std::vector<LabelResult> labels;
  for (auto& c : captions) {
    c.predicted = extract_label(c.text, lexicon);
    labels.push_back({c.predicted, c.reference});
  }
  r.consistency = label_consistency(labels);
  const auto& cm = r.consistency;
  if (!cm.in_scope_successes.empty())
    r.in_scope_ci = bootstrap_ci(cm.in_scope_successes, config.bootstrap_iterations, config.level, derive_seed(config.seed, 1));
  if (!cm.unknown_successes.empty())
    r.unknown_ci = bootstrap_ci(cm.unknown_successes, config.bootstrap_iterations, config.level, derive_seed(config.seed, 2));

  const auto areas = lexicon.area_ids();
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const auto& c = captions[i];
    if (c.predicted == AreaId::Unknown) {
      ++r.excluded_unknown;
      continue;
    }
    if (c.predicted == AreaId::None) {
      ++r.excluded_none;
      continue;
    }
    r.items.push_back(build_mc_item("mc-" + c.patch_id, mask_areas(c.text, lexicon), c.predicted, pool, areas,
                                    derive_seed(config.seed, 1000 + i), config.num_options,
                                    config.statements_per_option));
  }
  if (!r.items.empty()) {
    r.discrim = discriminability(r.items, judge);
    RandomJudge random(derive_seed(config.seed, 3));
    r.random_baseline = discriminability(r.items, random);
    if (!r.discrim.successes.empty())
      r.discrim_ci = bootstrap_ci(r.discrim.successes, config.bootstrap_iterations, config.level, derive_seed(config.seed, 4));
  }
  r.captions = std::move(captions);
  return r;
}

const std::vector<ReferenceValue>& published_reference() {
  static const std::vector<ReferenceValue> values = {
      {"in_scope_accuracy", 0.906, 0.889, 0.912},
      {"unknown_accuracy", 0.9141, 0.881, 0.944},
      {"macro_f1", 0.82, std::nan(""), std::nan("")},
      {"discriminability", 0.686, 0.668, 0.704},
  };
  return values;
}

json report_to_json(const EvalReport& r, const LabelLexicon& lexicon) {
  const auto& cm = r.consistency;
  json per_class = json::array();
  for (const auto& c : cm.per_class) {
    per_class.push_back({{"label", lexicon.name(c.label)}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"f1", c.f1}});
  }
  json reference = json::array();
  for (const auto& v : published_reference()) {
    json e = {{"metric", v.metric}, {"value", v.value}};
    if (!std::isnan(v.lower)) e["ci"] = {v.lower, v.upper};
    reference.push_back(e);
  }
  return {
      {"label_consistency",
       {{"in_scope", {{"accuracy", cm.in_scope_accuracy}, {"n", cm.n_in_scope}, {"ci", to_json(r.in_scope_ci)}}},
        {"unknown", {{"accuracy", cm.unknown_accuracy}, {"n", cm.n_unknown}, {"ci", to_json(r.unknown_ci)}}},
        {"macro_f1", cm.macro_f1},
        {"micro_f1", cm.micro_f1},
        {"none_predictions", cm.n_none_predictions},
        {"per_class", per_class}}},
      {"discriminability",
       {{"judge", r.judge_name},
        {"accuracy", r.discrim.accuracy},
        {"n", r.discrim.n},
        {"judge_failures", r.discrim.failures},
        {"ci", to_json(r.discrim_ci)},
        {"excluded_unknown", r.excluded_unknown},
        {"excluded_none", r.excluded_none},
        {"random_judge_accuracy", r.random_baseline.accuracy},
        {"chance", r.items.empty() ? 0.0 : 1.0 / static_cast<double>(r.items[0].candidates.size())}}},
      {"published_reference", reference},
      {"provenance", r.provenance},
  };
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string report_to_markdown(const json& j) {
  std::ostringstream md;
  const auto& lc = j.at("label_consistency");
  const auto& d = j.at("discriminability");
  auto ci = [](const json& c) { return pct(c.at("lower").get<double>()) + " - " + pct(c.at("upper").get<double>()); };
  md << "## Label consistency\n\n"
     << "| metric | value | 95% CI | n |\n|---|---|---|---|\n"
     << "| in-scope accuracy | " << pct(lc["in_scope"]["accuracy"]) << " | " << ci(lc["in_scope"]["ci"]) << " | "
     << lc["in_scope"]["n"] << " |\n"
     << "| unknown accuracy | " << pct(lc["unknown"]["accuracy"]) << " | " << ci(lc["unknown"]["ci"]) << " | "
     << lc["unknown"]["n"] << " |\n"
     << "| macro-F1 | " << fixed(lc["macro_f1"], 3) << " | | |\n"
     << "| micro-F1 | " << fixed(lc["micro_f1"], 3) << " | | |\n\n"
     << "## Discriminability (label masked, " << d["judge"].get<std::string>() << " judge)\n\n"
     << "| metric | value | 95% CI | n |\n|---|---|---|---|\n"
     << "| accuracy | " << pct(d["accuracy"]) << " | " << ci(d["ci"]) << " | " << d["n"] << " |\n"
     << "| uniform random judge | " << pct(d["random_judge_accuracy"]) << " | | " << d["n"] << " |\n"
     << "| chance | " << pct(d["chance"]) << " | | |\n\n"
     << "Excluded from the multiple-choice test: " << d["excluded_unknown"] << " captions labeled unknown, "
     << d["excluded_none"] << " captions without a single label.\n\n"
     << "## Published reference vs. this run\n\n"
     << "Published values come from full-scale data and models; the toy run is a scaled analog, not a "
        "reproduction.\n\n"
     << "| metric | published | this run |\n|---|---|---|\n";
  const std::map<std::string, double> ours = {
      {"in_scope_accuracy", lc["in_scope"]["accuracy"]},
      {"unknown_accuracy", lc["unknown"]["accuracy"]},
      {"macro_f1", lc["macro_f1"]},
      {"discriminability", d["accuracy"]},
  };
  for (const auto& ref : j.at("published_reference")) {
    const std::string metric = ref["metric"];
    const double v = ref["value"];
    const bool is_f1 = metric == "macro_f1";
    std::string pub = is_f1 ? fixed(v, 2) : pct(v);
    if (ref.contains("ci")) pub += " (" + pct(ref["ci"][0]) + " - " + pct(ref["ci"][1]) + ")";
    md << "| " << metric << " | " << pub << " | " << (is_f1 ? fixed(ours.at(metric), 3) : pct(ours.at(metric)))
       << " |\n";
  }
  return md.str();
}

std::string mc_item_to_json(const MCItem& item, const LabelLexicon& lexicon, bool include_answer) {
  json cands = json::array();
  for (std::size_t i = 0; i < item.candidates.size(); ++i) {
    cands.push_back({{"area", lexicon.name(item.candidates[i])}, {"statements", item.statements[i]}});
  }
  json j = {{"item_id", item.item_id}, {"caption", item.redacted_caption}, {"candidates", cands}, {"seed", item.seed}};
  if (include_answer) j["correct_index"] = item.correct_index;
  return j.dump();
}

MCItem mc_item_from_json(const std::string& line, const LabelLexicon& lexicon) {
  try {
    const json j = json::parse(line);
    MCItem item;
    item.item_id = j.at("item_id");
    item.redacted_caption = j.at("caption");
    item.seed = j.value("seed", std::uint64_t{0});
    for (const auto& c : j.at("candidates")) {
      const std::string name = c.at("area");
      auto a = lexicon.find(name);
      if (!a) throw ValidationError("MC item names unknown area '" + name + "'");
      item.candidates.push_back(*a);
      item.statements.push_back(c.at("statements").get<std::vector<std::string>>());
    }
    item.correct_index = j.value("correct_index", std::size_t{0});
    return item;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed MC item: ") + e.what(), 0);
  }
}

DiscriminabilityResult score_judge_answers(const std::vector<MCItem>& items,
                                           const std::map<std::string, std::size_t>& answers) {
  DiscriminabilityResult r;
  std::size_t correct = 0;
  for (const auto& item : items) {
    auto it = answers.find(item.item_id);
    if (it == answers.end() || it->second >= item.candidates.size()) {
      ++r.failures;
      continue;
    }
    const bool ok = it->second == item.correct_index;
    r.successes.push_back(ok);
    r.choices.push_back(it->second);
    correct += ok;
  }
  r.n = r.successes.size();
  r.accuracy = r.n ? static_cast<double>(correct) / static_cast<double>(r.n) : 0.0;
  return r;
}

}  // namespace cytocap
