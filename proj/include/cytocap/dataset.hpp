#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cytocap/adapter.hpp"
#include "cytocap/captions.hpp"
#include "cytocap/embeddings.hpp"
#include "cytocap/vocab.hpp"

namespace cytocap {

inline constexpr const char* kCaptionPrompt = "Provide a caption for this microscopy image.";

struct WeakPair {
  std::string patch_id;
  std::vector<float> embedding;
  AreaId weak_label = AreaId::None;
  Caption caption;
  // Token sequence [BOS] prompt caption [EOS], shifted into input/target.
  // loss_mask[t] is set iff target[t] is a caption token or the final EOS.
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;
  std::vector<std::uint8_t> loss_mask;
  std::size_t prompt_len = 0;  // BOS + prompt tokens
};

struct RatioConfig {
  std::size_t known_per_unknown = 10;
};

struct PairStats {
  std::size_t known_in = 0, unknown_in = 0, unset_in = 0;
  std::size_t known_out = 0, unknown_out = 0;
};

// Known-labeled records get a caption for their weak label, Unknown records
// the unknown caption; records with unset labels are ignored. The larger side
// is subsampled (seeded) so that known == ratio * unknown exactly. Output
// keeps the input record order.
std::vector<WeakPair> build_pairs(const std::vector<EmbeddingRecord>& records, const StatementPool& pool,
                                  const LabelLexicon& lexicon, const RatioConfig& ratio, std::size_t statements_k,
                                  std::uint64_t seed, CaptionComposer& composer, PairStats* stats = nullptr);

// Every word that can appear in prompts and captions built from `pool`.
Vocab build_caption_vocab(const StatementPool& pool, const LabelLexicon& lexicon);

std::vector<TokenId> prompt_ids(const Vocab& vocab);
void tokenize_pair(WeakPair& pair, const Vocab& vocab, std::size_t max_seq_len);
void tokenize_pairs(std::vector<WeakPair>& pairs, const Vocab& vocab, std::size_t max_seq_len);
SequenceExample to_example(const WeakPair& pair);

struct SplitSpec {
  std::size_t n_train = 1920, n_val = 96, n_test = 300;
  std::uint64_t seed = 7;
};

struct Splits {
  std::vector<WeakPair> train, val, test;
};

// Stratified by weak label: every split receives each label's proportional
// share of its size to within one item. Throws ValidationError when the pairs
// do not cover the requested sizes.
Splits split(const std::vector<WeakPair>& pairs, const SplitSpec& spec);

std::string pair_to_json(const WeakPair& p, const LabelLexicon& lexicon);
// Embedding and tokens are not stored; callers re-attach and re-tokenize.
WeakPair pair_from_json(const std::string& line, const LabelLexicon& lexicon);

}  // namespace cytocap
