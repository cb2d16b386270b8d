#include "cytocap/lexicon.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "cytocap/errors.hpp"
#include "cytocap/text.hpp"

namespace cytocap {
namespace {

struct Seed {
  const char* canonical;
  std::vector<const char*> extra;
};

// Julich-Brain cytoarchitectonic areas: occipital, fusiform, frontal
// operculum, frontal pole, inferior parietal, intraparietal, parietal
// operculum, insula, superior temporal sulcus, sensorimotor, superior parietal.
const std::vector<Seed>& standard_seeds() {
  static const std::vector<Seed> seeds = {
      {"hOc1", {"V1"}}, {"hOc2", {"V2"}}, {"hOc3d", {}}, {"hOc3v", {}}, {"hOc4d", {}}, {"hOc4v", {}},
      {"hOc4la", {}}, {"hOc4lp", {}}, {"hOc5", {"V5"}}, {"hOc6", {}},
      {"FG1", {}}, {"FG2", {}}, {"FG3", {}}, {"FG4", {}},
      {"Fo1", {}}, {"Fo2", {}}, {"Fo3", {}}, {"Fo4", {}}, {"Fo5", {}}, {"Fo6", {}}, {"Fo7", {}},
      {"Fp1", {}}, {"Fp2", {}},
      {"PFop", {}}, {"PFt", {}}, {"PF", {}}, {"PFm", {}}, {"PFcm", {}}, {"PGa", {}}, {"PGp", {}},
      {"hIP1", {}}, {"hIP2", {}}, {"hIP3", {}}, {"hIP4", {}}, {"hIP5", {}}, {"hIP6", {}}, {"hIP7", {}}, {"hIP8", {}},
      {"OP1", {}}, {"OP2", {}}, {"OP3", {}}, {"OP4", {}},
      {"Id1", {}}, {"Id2", {}}, {"Id3", {}}, {"Ig1", {}}, {"Ig2", {}}, {"Ig3", {}},
      {"STS1", {}}, {"STS2", {}},
      {"4a", {}}, {"4p", {}}, {"3a", {}}, {"3b", {}},
      {"5Ci", {}}, {"5L", {}}, {"5M", {}},
  };
  return seeds;
}

std::vector<AreaEntry> entries_from(std::size_t n) {
  const auto& seeds = standard_seeds();
  std::vector<AreaEntry> out;
  for (std::size_t i = 0; i < std::min(n, seeds.size()); ++i) {
    AreaEntry e{area(i), seeds[i].canonical, {seeds[i].canonical}};
    for (const char* a : seeds[i].extra) e.aliases.emplace_back(a);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

LabelLexicon::LabelLexicon(std::vector<AreaEntry> areas) : areas_(std::move(areas)) {
  if (areas_.empty()) throw ValidationError("label lexicon must contain at least one area");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < areas_.size(); ++i) {
    AreaEntry& e = areas_[i];
    if (e.id != area(i)) throw ValidationError("lexicon entry ids must be consecutive from 0");
    if (std::find(e.aliases.begin(), e.aliases.end(), e.canonical) == e.aliases.end()) {
      e.aliases.insert(e.aliases.begin(), e.canonical);
    }
    for (const auto& a : e.aliases) {
      const std::string folded = text::case_fold(a);
      if (folded == kUnknownAlias) throw ValidationError("alias 'unknown' is reserved");
      if (!seen.insert(folded).second) throw ValidationError("duplicate lexicon alias: " + a);
      aliases_.emplace_back(a, e.id);
    }
  }
  aliases_.emplace_back(std::string(kUnknownAlias), AreaId::Unknown);
  // An alias may not occur whole-word inside another area's alias.
  for (const auto& [a, ida] : aliases_) {
    for (const auto& [b, idb] : aliases_) {
      if (ida != idb && a != b && text::contains_whole_word(b, a)) {
        throw ValidationError("lexicon alias '" + a + "' is ambiguous inside '" + b + "'");
      }
    }
  }
  std::stable_sort(aliases_.begin(), aliases_.end(),
                   [](const auto& x, const auto& y) { return x.first.size() > y.first.size(); });
}

const LabelLexicon& LabelLexicon::standard() {
  static const LabelLexicon lex(entries_from(standard_seeds().size()));
  return lex;
}

LabelLexicon LabelLexicon::first_n(std::size_t n) {
  if (n == 0 || n > standard_seeds().size()) {
    throw ValidationError("first_n: need 1.." + std::to_string(standard_seeds().size()) + " areas");
  }
  return LabelLexicon(entries_from(n));
}

std::vector<AreaId> LabelLexicon::area_ids() const {
  std::vector<AreaId> ids;
  for (const auto& e : areas_) ids.push_back(e.id);
  return ids;
}

const AreaEntry& LabelLexicon::entry(AreaId id) const {
  if (!is_target(id) || index_of(id) >= areas_.size()) {
    throw PreconditionError("area id " + area_code_string(id) + " is not in the lexicon");
  }
  return areas_[index_of(id)];
}

std::string LabelLexicon::name(AreaId id) const {
  if (id == AreaId::Unknown) return std::string(kUnknownAlias);
  if (id == AreaId::None) return "none";
  return entry(id).canonical;
}

std::optional<AreaId> LabelLexicon::find(std::string_view name) const {
  const std::string folded = text::case_fold(name);
  for (const auto& [alias, id] : aliases_) {
    if (text::case_fold(alias) == folded) return id;
  }
  return std::nullopt;
}

std::string area_code_string(AreaId id) {
  if (id == AreaId::Unknown) return "unknown";
  if (id == AreaId::None) return "none";
  return std::to_string(index_of(id));
}

AreaId parse_area_code(std::string_view s) {
  if (s == "unknown") return AreaId::Unknown;
  if (s == "none") return AreaId::None;
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v >= 0xFFFE) {
    throw FormatError("invalid area code '" + std::string(s) + "'", 0);
  }
  return area(v);
}

}  // namespace cytocap
