#include "cytocap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "cytocap/errors.hpp"
#include "cytocap/random.hpp"
#include "cytocap/text.hpp"
#include "json.hpp"

namespace cytocap {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::size_t> seeded_subset(std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  auto idx = sample_indices(rng, n, k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<WeakPair> build_pairs(const std::vector<EmbeddingRecord>& records, const StatementPool& pool,
                                  const LabelLexicon& lexicon, const RatioConfig& ratio, std::size_t statements_k,
                                  std::uint64_t seed, CaptionComposer& composer, PairStats* stats) {
  if (ratio.known_per_unknown < 1) throw ValidationError("known_per_unknown must be >= 1");
  for (const auto& e : lexicon.areas()) {
    auto it = pool.find(e.id);
    if (it == pool.end() || it->second.empty()) {
      throw ValidationError("statement pool has no statements for area " + e.canonical);
    }
  }
  std::vector<std::size_t> known, unknown;
  PairStats st;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const AreaId l = records[i].weak_label;
    if (l == AreaId::Unknown) {
      unknown.push_back(i);
    } else if (is_target(l)) {
      if (index_of(l) >= lexicon.size()) throw ValidationError("weak label outside the lexicon");
      known.push_back(i);
    } else {
      ++st.unset_in;
    }
  }
  st.known_in = known.size();
  st.unknown_in = unknown.size();
  const std::size_t r = ratio.known_per_unknown;
  std::size_t n_unknown = std::min(unknown.size(), known.size() / r);
  std::size_t n_known = n_unknown * r;
  std::vector<std::size_t> keep;
  for (auto i : seeded_subset(known.size(), n_known, derive_seed(seed, 1))) keep.push_back(known[i]);
  for (auto i : seeded_subset(unknown.size(), n_unknown, derive_seed(seed, 2))) keep.push_back(unknown[i]);
  std::sort(keep.begin(), keep.end());
  st.known_out = n_known;
  st.unknown_out = n_unknown;
  if (stats) *stats = st;

  std::vector<WeakPair> out;
  out.reserve(keep.size());
  for (auto i : keep) {
    const auto& rec = records[i];
    WeakPair p;
    p.patch_id = rec.patch_id;
    p.embedding = rec.vector;
    p.weak_label = rec.weak_label;
    if (rec.weak_label == AreaId::Unknown) {
      p.caption = unknown_caption();
    } else {
      const auto sample = sample_statements(pool, rec.weak_label, statements_k, derive_seed(seed, fnv1a(rec.patch_id)));
      p.caption = compose_caption(rec.weak_label, sample, lexicon, composer);
    }
    out.push_back(std::move(p));
  }
  return out;
}

Vocab build_caption_vocab(const StatementPool& pool, const LabelLexicon& lexicon) {
  std::vector<std::string> corpus{kCaptionPrompt, kUnknownCaption};
  for (const auto& e : lexicon.areas()) corpus.push_back(caption_first_sentence(e.canonical));
  for (const auto& [_, list] : pool)
    for (const auto& s : list) corpus.push_back(s.text);
  return build_vocab(corpus, 1);
}

std::vector<TokenId> prompt_ids(const Vocab& vocab) { return encode(kCaptionPrompt, vocab); }

void tokenize_pair(WeakPair& pair, const Vocab& vocab, std::size_t max_seq_len) {
  std::vector<TokenId> seq{Vocab::kBos};
  const auto prompt = prompt_ids(vocab);
  seq.insert(seq.end(), prompt.begin(), prompt.end());
  pair.prompt_len = seq.size();
  const auto caption = encode(pair.caption.text, vocab);
  seq.insert(seq.end(), caption.begin(), caption.end());
  seq.push_back(Vocab::kEos);
  if (seq.size() - 1 > max_seq_len) {
    throw ValidationError("pair " + pair.patch_id + " needs " + std::to_string(seq.size() - 1) +
                          " positions, more than max_seq_len " + std::to_string(max_seq_len));
  }
  pair.input_ids.assign(seq.begin(), seq.end() - 1);
  pair.target_ids.assign(seq.begin() + 1, seq.end());
  pair.loss_mask.assign(pair.input_ids.size(), 0);
  for (std::size_t t = pair.prompt_len - 1; t < pair.target_ids.size(); ++t) pair.loss_mask[t] = 1;
}

void tokenize_pairs(std::vector<WeakPair>& pairs, const Vocab& vocab, std::size_t max_seq_len) {
  for (auto& p : pairs) tokenize_pair(p, vocab, max_seq_len);
}

SequenceExample to_example(const WeakPair& pair) {
  if (pair.input_ids.empty()) throw StateError("pair " + pair.patch_id + " has not been tokenized");
  return {pair.patch_id, pair.embedding, pair.input_ids, pair.target_ids, pair.loss_mask};
}

Splits split(const std::vector<WeakPair>& pairs, const SplitSpec& spec) {
  const std::size_t sizes[3] = {spec.n_train, spec.n_val, spec.n_test};
  const std::size_t total = sizes[0] + sizes[1] + sizes[2];
  if (total > pairs.size()) {
    throw ValidationError("split needs " + std::to_string(total) + " pairs (" + std::to_string(spec.n_train) + "/" +
                          std::to_string(spec.n_val) + "/" + std::to_string(spec.n_test) + ") but only " +
                          std::to_string(pairs.size()) + " are available");
  }
  {
    std::set<std::string> ids;
    for (const auto& p : pairs)
      if (!ids.insert(p.patch_id).second) throw ValidationError("duplicate patch id " + p.patch_id);
  }
  std::map<AreaId, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pairs.size(); ++i) groups[pairs[i].weak_label].push_back(i);
  std::vector<AreaId> labels;
  std::vector<std::size_t> counts;
  for (auto& [label, idx] : groups) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(label)));
    shuffle_in_place(idx, rng);
    labels.push_back(label);
    counts.push_back(idx.size());
  }
  const std::size_t L = labels.size();
  const double P = static_cast<double>(pairs.size());

  // Largest-remainder allocation of each split size across labels.
  std::vector<std::vector<std::size_t>> alloc(3, std::vector<std::size_t>(L));
  std::vector<std::vector<double>> target(3, std::vector<double>(L));
  for (int s = 0; s < 3; ++s) {
    std::size_t assigned = 0;
    std::vector<std::pair<double, std::size_t>> rema;
    for (std::size_t l = 0; l < L; ++l) {
      target[s][l] = static_cast<double>(sizes[s]) * static_cast<double>(counts[l]) / P;
      alloc[s][l] = static_cast<std::size_t>(std::floor(target[s][l]));
      assigned += alloc[s][l];
      rema.emplace_back(-(target[s][l] - std::floor(target[s][l])), l);
    }
    std::sort(rema.begin(), rema.end());
    for (std::size_t i = 0; assigned < sizes[s]; ++i, ++assigned) ++alloc[s][rema[i].second];
  }
  // Repair label over-subscription by moving a rounded-up unit to a label
  // that was rounded down within the same split.
  for (std::size_t l = 0; l < L; ++l) {
    auto used = [&](std::size_t lab) { return alloc[0][lab] + alloc[1][lab] + alloc[2][lab]; };
    while (used(l) > counts[l]) {
      bool moved = false;
      for (int s = 0; s < 3 && !moved; ++s) {
        if (static_cast<double>(alloc[s][l]) <= target[s][l]) continue;
        for (std::size_t o = 0; o < L && !moved; ++o) {
          if (o == l || used(o) >= counts[o] || static_cast<double>(alloc[s][o]) >= target[s][o]) continue;
          --alloc[s][l];
          ++alloc[s][o];
          moved = true;
        }
      }
      if (!moved) throw StateError("stratified split could not satisfy label capacities");
    }
  }
  Splits out;
  std::vector<WeakPair>* dest[3] = {&out.train, &out.val, &out.test};
  for (std::size_t l = 0; l < L; ++l) {
    const auto& idx = groups[labels[l]];
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < alloc[s][l]; ++k) dest[s]->push_back(pairs[idx[pos++]]);
  }
  for (int s = 0; s < 3; ++s) {
    Rng rng(derive_seed(spec.seed, 0x5A11 + static_cast<std::uint64_t>(s)));
    shuffle_in_place(*dest[s], rng);
  }
  return out;
}

std::string pair_to_json(const WeakPair& p, const LabelLexicon& lexicon) {
  json j = {{"patch_id", p.patch_id},
            {"area_id", lexicon.name(p.weak_label)},
            {"text", p.caption.text},
            {"statement_ids", p.caption.statement_ids}};
  return j.dump();
}

WeakPair pair_from_json(const std::string& line, const LabelLexicon& lexicon) {
  try {
    const json j = json::parse(line);
    WeakPair p;
    p.patch_id = j.at("patch_id");
    const std::string a = j.at("area_id");
    if (a == LabelLexicon::kUnknownAlias) {
      p.weak_label = AreaId::Unknown;
    } else {
      auto id = lexicon.find(a);
      if (!id) throw ValidationError("pair names unknown area '" + a + "'");
      p.weak_label = *id;
    }
    p.caption.area = p.weak_label;
    p.caption.text = j.at("text");
    p.caption.statement_ids = j.at("statement_ids").get<std::vector<std::string>>();
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed pair record: ") + e.what(), 0);
  }
}

}  // namespace cytocap
