#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cytocap/captions.hpp"
#include "cytocap/checkpoint.hpp"
#include "cytocap/dataset.hpp"
#include "cytocap/lexicon.hpp"
#include "cytocap/llm_client.hpp"
#include "json.hpp"

namespace cytocap {

// Label named by the first sentence: the single area (or Unknown) whose
// aliases match whole-word; overlapping matches resolve to the longest alias.
// None when nothing matches or several distinct labels match.
AreaId extract_label(std::string_view caption, const LabelLexicon& lexicon);

inline constexpr const char* kAreaPlaceholder = "[AREA]";
// Replaces every whole-word alias occurrence (areas and "unknown") by [AREA].
std::string mask_areas(std::string_view text, const LabelLexicon& lexicon);

struct LabelResult {
  AreaId predicted = AreaId::None;
  AreaId reference = AreaId::None;
};

struct ClassF1 {
  AreaId label;
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1 = 0.0;
};

struct ConsistencyMetrics {
  std::size_t n_in_scope = 0, in_scope_correct = 0;
  std::size_t n_unknown = 0, unknown_correct = 0;
  std::size_t n_none_predictions = 0;
  double in_scope_accuracy = 0.0;
  double unknown_accuracy = 0.0;
  // Macro average over the target areas plus Unknown that have support or
  // predictions; None predictions count as errors but form no class.
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::vector<ClassF1> per_class;
  std::vector<bool> in_scope_successes, unknown_successes;
};

ConsistencyMetrics label_consistency(const std::vector<LabelResult>& results);

struct MCItem {
  std::string item_id;
  std::string redacted_caption;
  std::vector<AreaId> candidates;
  std::vector<std::vector<std::string>> statements;  // per candidate
  std::size_t correct_index = 0;
  std::uint64_t seed = 0;
};

// Distractors are drawn uniformly without replacement from all_areas minus
// the predicted area; options are shuffled with the item seed.
MCItem build_mc_item(const std::string& item_id, const std::string& redacted_caption, AreaId predicted_area,
                     const StatementPool& pool, const std::vector<AreaId>& all_areas, std::uint64_t seed,
                     std::size_t num_options = 8, std::size_t statements_per_option = 5);

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::size_t choose(const MCItem& item) = 0;
  virtual std::string name() const = 0;
};

// Cosine similarity of term-frequency vectors between the redacted caption and
// each candidate's statements; ties go to the lowest index.
class OracleJudge final : public Judge {
 public:
  std::size_t choose(const MCItem& item) override;
  std::string name() const override { return "oracle-tf-cosine"; }
};

// Uniform choice seeded per item id.
class RandomJudge final : public Judge {
 public:
  explicit RandomJudge(std::uint64_t seed) : seed_(seed) {}
  std::size_t choose(const MCItem& item) override;
  std::string name() const override { return "uniform-random"; }

 private:
  std::uint64_t seed_;
};

class LlmJudge final : public Judge {
 public:
  LlmJudge(TextGenerator& client, const LabelLexicon& lexicon) : client_(client), lexicon_(lexicon) {}
  std::size_t choose(const MCItem& item) override;
  std::string name() const override { return "llm:" + client_.provider(); }
  std::string prompt(const MCItem& item) const;
  // First option letter A-H or 1-based number in the reply.
  static std::size_t parse_choice(const std::string& reply, std::size_t num_options);

 private:
  TextGenerator& client_;
  const LabelLexicon& lexicon_;
};

struct DiscriminabilityResult {
  double accuracy = 0.0;
  std::size_t n = 0;
  std::size_t failures = 0;  // judge errors, excluded from n
  std::vector<bool> successes;
  std::vector<std::size_t> choices;
};

// Judge failures on an item are counted and excluded.
DiscriminabilityResult discriminability(const std::vector<MCItem>& items, Judge& judge);

struct BootstrapCI {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  std::size_t iterations = 10000;
  std::uint64_t seed = 0;
};

// Percentile bootstrap of the success rate; resample b draws from a stream
// seeded with derive_seed(seed, b). Quantiles interpolate linearly between
// order statistics. Bounds are widened to include the point estimate.
BootstrapCI bootstrap_ci(const std::vector<bool>& successes, std::size_t iterations = 10000, double level = 0.95,
                         std::uint64_t seed = 0);

nlohmann::json to_json(const BootstrapCI& ci);

struct EvalConfig {
  std::size_t max_new_tokens = 80;
  std::size_t bootstrap_iterations = 10000;
  double level = 0.95;
  std::uint64_t seed = 11;
  std::size_t num_options = 8;
  std::size_t statements_per_option = 5;
};

struct GeneratedCaption {
  std::string patch_id;
  AreaId reference = AreaId::None;
  std::string text;
  AreaId predicted = AreaId::None;
};

// Greedy caption from the prompt, conditioned on the pair's embedding.
std::string generate_caption(const Checkpoint& ckpt, const std::vector<float>& embedding, std::size_t max_new_tokens);

struct EvalReport {
  ConsistencyMetrics consistency;
  BootstrapCI in_scope_ci, unknown_ci;
  DiscriminabilityResult discrim, random_baseline;
  BootstrapCI discrim_ci;
  std::size_t excluded_unknown = 0, excluded_none = 0;
  std::string judge_name;
  std::vector<GeneratedCaption> captions;
  std::vector<MCItem> items;
  nlohmann::json provenance = nlohmann::json::object();
};

// Generates captions for `pairs`, measures label consistency, builds MC items
// from area-labeled captions and scores them with `judge` and a random judge.
EvalReport evaluate(const Checkpoint& ckpt, const std::vector<WeakPair>& pairs, const StatementPool& pool,
                    const LabelLexicon& lexicon, const EvalConfig& config, Judge& judge);
// Same from already generated captions.
EvalReport evaluate_captions(std::vector<GeneratedCaption> captions, const StatementPool& pool,
                             const LabelLexicon& lexicon, const EvalConfig& config, Judge& judge);

// Published reference values juxtaposed in reports (not reproduction targets).
struct ReferenceValue {
  const char* metric;
  double value;
  double lower;
  double upper;
};
const std::vector<ReferenceValue>& published_reference();

nlohmann::json report_to_json(const EvalReport& report, const LabelLexicon& lexicon);
std::string report_to_markdown(const nlohmann::json& report);

std::string mc_item_to_json(const MCItem& item, const LabelLexicon& lexicon, bool include_answer);
MCItem mc_item_from_json(const std::string& line, const LabelLexicon& lexicon);
// Scores external judge answers ({item_id, choice}) against items by id;
// items without an answer are counted as failures.
DiscriminabilityResult score_judge_answers(const std::vector<MCItem>& items,
                                           const std::map<std::string, std::size_t>& answers);

}  // namespace cytocap
