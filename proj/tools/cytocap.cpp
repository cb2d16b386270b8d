#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cytocap/config.hpp"
#include "cytocap/errors.hpp"
#include "cytocap/pipeline.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace cytocap;
  CLI::App app{"Weakly supervised caption pipeline for synthetic cytoarchitecture embeddings"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool stub_llm = false, http_llm = false, print_config = false;
  std::vector<std::string> overrides;

  const std::map<std::string, std::function<nlohmann::json(const RunConfig&)>> commands = {
      {"distill", cmd_distill}, {"synth", cmd_synth},     {"pair", cmd_pair},         {"train", cmd_train},
      {"eval", cmd_eval},       {"qa-gen", cmd_qa_gen},   {"qa-score", cmd_qa_score}, {"report", cmd_report},
  };
  const std::map<std::string, std::string> help = {
      {"distill", "ingest the corpus and extract area statements"},
      {"synth", "generate synthetic embeddings and weak labels"},
      {"pair", "compose captions, build weak pairs and splits"},
      {"train", "train the adapter on the frozen language model"},
      {"eval", "label consistency and discriminability evaluation"},
      {"qa-gen", "generate, randomize and filter QA items"},
      {"qa-score", "score answerers on the QA items"},
      {"report", "collate stage outputs into one report"},
  };
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "TOML-like config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed (overrides run.seed)");
    sub->add_option("--out", out_dir, "output directory (overrides run.out)");
    auto* stub = sub->add_flag("--stub-llm", stub_llm, "use the deterministic stub text generator");
    auto* http = sub->add_flag("--http-llm", http_llm, "use the chat-completions HTTP client");
    stub->excludes(http);
    sub->add_option("--set", overrides, "override a config value, section.key=value");
    sub->add_flag("--print-config", print_config, "print the effective configuration and exit");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
    for (const auto& o : overrides) cfg.set_assignment(o);
    if (seed) cfg.set("run.seed", std::to_string(*seed));
    if (!out_dir.empty()) cfg.set("run.out", out_dir);
    if (stub_llm) cfg.set("llm.mode", "stub");
    if (http_llm) cfg.set("llm.mode", "http");
    if (print_config) {
      std::cout << cfg.to_text();
      return 0;
    }
    const auto summary = commands.at(name)(cfg);
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "cytocap " << name << ": invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "cytocap " << name << ": malformed input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const PreconditionError& e) {
    std::cerr << "cytocap " << name << ": invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "cytocap " << name << ": " << e.what() << "\n";
    return kExitStage;
  }
}
