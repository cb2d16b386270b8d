#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace cytocap {

// Flat "section.key" -> value store read from a TOML-like file:
//
//   [train]
//   epochs = 6        # comment
//   lr = 1e-3
//   [corpus]
//   dir = "data/corpus"
//
// Every key must be one of the known defaults; values keep their textual form.
class RunConfig {
 public:
  RunConfig();  // defaults

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  // Throws ValidationError for unknown keys or values of the wrong kind.
  void set(const std::string& key, const std::string& value);
  // "section.key=value"
  void set_assignment(const std::string& assignment);

  const std::string& str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  std::string to_text() const;
  nlohmann::json to_json() const;

  // Cumulative hash over the keys a stage reads and the hashes of the stages
  // it consumes.
  std::string stage_hash(const std::string& stage) const;
  static const std::vector<std::string>& stages();
  static const std::vector<std::string>& upstream(const std::string& stage);

 private:
  std::map<std::string, std::string> values_;
};

// {"stage", "config_hash", "config"} block written at the top of outputs.
nlohmann::json output_header(const RunConfig& config, const std::string& stage);
// Throws ValidationError when `header` was not produced by `stage` under the
// current configuration.
void check_header(const nlohmann::json& header, const RunConfig& config, const std::string& stage,
                  const std::filesystem::path& source);

}  // namespace cytocap
