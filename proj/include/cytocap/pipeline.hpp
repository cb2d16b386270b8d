#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "cytocap/config.hpp"
#include "cytocap/llm_client.hpp"
#include "json.hpp"

namespace cytocap {

// Output file names inside run.out.
namespace files {
inline constexpr const char* kStatements = "statements.jsonl";
inline constexpr const char* kChunks = "chunks.jsonl";
inline constexpr const char* kDistillLog = "distill_log.json";
inline constexpr const char* kEmbeddings = "embeddings.ccem";
inline constexpr const char* kEmbeddingsMeta = "embeddings.ccem.json";
inline constexpr const char* kPairsTrain = "pairs_train.jsonl";
inline constexpr const char* kPairsVal = "pairs_val.jsonl";
inline constexpr const char* kPairsTest = "pairs_test.jsonl";
inline constexpr const char* kSplitManifest = "split_manifest.json";
inline constexpr const char* kCheckpoint = "checkpoint.cclm";
inline constexpr const char* kTrainLog = "train_log.json";
inline constexpr const char* kEvalReport = "eval_report.json";
inline constexpr const char* kEvalMarkdown = "eval_report.md";
inline constexpr const char* kCaptions = "captions.jsonl";
inline constexpr const char* kMcItems = "mc_items.jsonl";
inline constexpr const char* kQaItems = "qa_items.jsonl";
inline constexpr const char* kQaDropped = "qa_dropped.jsonl";
inline constexpr const char* kQaLog = "qa_gen_log.json";
inline constexpr const char* kScoreboard = "scoreboard.json";
inline constexpr const char* kScoreboardMarkdown = "scoreboard.md";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kReportMarkdown = "report.md";
}  // namespace files

// Text generator selected by llm.mode ("stub" or "http").
std::unique_ptr<TextGenerator> make_client(const RunConfig& config);

// Seed of the option shuffle qa-gen applies to one question.
std::uint64_t qa_option_seed(const RunConfig& config, const std::string& question_id);

// Each command validates its inputs (paths, provenance headers) before doing
// any work, writes its outputs to run.out and returns a summary. Validation
// problems throw ValidationError; failures while running throw StageError.
nlohmann::json cmd_distill(const RunConfig& config);
nlohmann::json cmd_synth(const RunConfig& config);
nlohmann::json cmd_pair(const RunConfig& config);
nlohmann::json cmd_train(const RunConfig& config);
nlohmann::json cmd_eval(const RunConfig& config);
nlohmann::json cmd_qa_gen(const RunConfig& config);
nlohmann::json cmd_qa_score(const RunConfig& config);
nlohmann::json cmd_report(const RunConfig& config);

}  // namespace cytocap
