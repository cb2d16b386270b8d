#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cytocap {

// Target areas are 0..N-1 (index into the lexicon). Unknown marks patches
// outside the target set; None marks "no (or ambiguous) label found".
enum class AreaId : std::uint16_t { Unknown = 0xFFFE, None = 0xFFFF };

constexpr AreaId area(std::size_t index) noexcept { return static_cast<AreaId>(index); }
constexpr std::size_t index_of(AreaId id) noexcept { return static_cast<std::size_t>(id); }
constexpr bool is_target(AreaId id) noexcept { return id != AreaId::Unknown && id != AreaId::None; }

struct AreaEntry {
  AreaId id;
  std::string canonical;
  std::vector<std::string> aliases;  // includes the canonical name
};

// Area-id -> name table used for caption synthesis, label extraction and
// masking. Entries are matched whole-word and case-folded.
class LabelLexicon {
 public:
  explicit LabelLexicon(std::vector<AreaEntry> areas);

  // The 57 cortical target areas shipped with the project.
  static const LabelLexicon& standard();
  // First n areas of the standard lexicon (toy experiments).
  static LabelLexicon first_n(std::size_t n);

  std::size_t size() const noexcept { return areas_.size(); }
  const std::vector<AreaEntry>& areas() const noexcept { return areas_; }
  std::vector<AreaId> area_ids() const;
  const AreaEntry& entry(AreaId id) const;
  // Canonical name; "unknown" for AreaId::Unknown.
  std::string name(AreaId id) const;
  std::optional<AreaId> find(std::string_view name) const;

  // All (alias, id) pairs including ("unknown", Unknown), longest alias first.
  const std::vector<std::pair<std::string, AreaId>>& all_aliases() const noexcept { return aliases_; }

  static constexpr std::string_view kUnknownAlias = "unknown";

 private:
  std::vector<AreaEntry> areas_;
  std::vector<std::pair<std::string, AreaId>> aliases_;
};

std::string area_code_string(AreaId id);  // "3", "unknown", "none"
AreaId parse_area_code(std::string_view s);

}  // namespace cytocap
