#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = CYTOCAP_CLI;
const std::string kSource = CYTOCAP_SOURCE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cytocap_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI from the source tree; stdout+stderr go to `log`.
int run(const std::string& args, const fs::path& log = "/dev/null") {
  const std::string cmd = "cd '" + kSource + "' && '" + kCli + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("argument errors exit 2") {
  CHECK(run("--help") == 0);
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("distill --no-such-flag") == 2);
  CHECK(run("distill --stub-llm --http-llm") == 2);
  CHECK(run("distill --config /nonexistent.toml") == 2);
  CHECK(run("distill --set bogus.key=1") == 2);
  CHECK(run("train --set train.epochs=many") == 2);
}

TEST_CASE("print-config emits a loadable config") {
  const auto dir = scratch("print");
  fs::create_directories(dir);
  REQUIRE(run("synth --print-config --seed 9 --set synth.sigma=0.3", dir / "cfg.toml") == 0);
  const auto text = slurp(dir / "cfg.toml");
  CHECK(text.find("seed = 9") != std::string::npos);
  CHECK(text.find("sigma = 0.3") != std::string::npos);
  CHECK(run("synth --print-config --config '" + (dir / "cfg.toml").string() + "'") == 0);
}

TEST_CASE("missing inputs exit 2") {
  const auto out = scratch("missing");
  const auto log = fs::temp_directory_path() / "cytocap_cli_missing.log";
  CHECK(run("distill --out '" + out.string() + "' --set corpus.citations=/nonexistent/citations.tsv", log) == 2);
  CHECK(slurp(log).find("citation") != std::string::npos);
  CHECK(run("eval --out '" + out.string() + "'", log) == 2);
  CHECK(slurp(log).find("cytocap train") != std::string::npos);
  CHECK(run("pair --out '" + out.string() + "'", log) == 2);
  CHECK(slurp(log).find("cytocap distill") != std::string::npos);
}

TEST_CASE("distill, synth and pair on the default configuration") {
  const auto out = scratch("default");
  const std::string o = " --out '" + out.string() + "'";
  REQUIRE(run("distill" + o) == 0);
  const auto statements = slurp(out / "statements.jsonl");
  const auto chunks = slurp(out / "chunks.jsonl");
  const auto log = slurp(out / "distill_log.json");
  REQUIRE(run("distill" + o) == 0);
  CHECK(slurp(out / "statements.jsonl") == statements);
  CHECK(slurp(out / "chunks.jsonl") == chunks);
  CHECK(slurp(out / "distill_log.json") == log);
  CHECK(json::parse(log)["areas_without_statements"].empty());

  REQUIRE(run("synth" + o) == 0);
  REQUIRE(run("pair" + o) == 0);
  const json manifest = json::parse(slurp(out / "split_manifest.json"));
  CHECK(manifest["splits"]["train"]["size"] == 1920);
  CHECK(manifest["splits"]["val"]["size"] == 96);
  CHECK(manifest["splits"]["test"]["size"] == 300);
  std::size_t lines = 0;
  std::ifstream in(out / "pairs_train.jsonl");
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 1921);  // header + pairs

  // downstream stages refuse outputs produced under another configuration
  const auto err = fs::temp_directory_path() / "cytocap_cli_default.log";
  CHECK(run("pair" + o + " --set synth.sigma=0.2", err) == 2);
  CHECK(slurp(err).find("rerun") != std::string::npos);
  CHECK(run("pair" + o + " --seed 5", err) == 2);

  REQUIRE(run("qa-gen" + o) == 0);
  REQUIRE(run("qa-score" + o) == 0);
  const json sb = json::parse(slurp(out / "scoreboard.json"));
  REQUIRE(sb["live"].size() == 2);
  CHECK(sb["live"][0]["score"] == 1.0);
}

TEST_CASE("stage failure exits 3") {
  const auto out = scratch("http");
  CHECK(run("distill --http-llm --out '" + out.string() +
            "' --set llm.endpoint=http://127.0.0.1:9/v1/chat/completions --set llm.max_retries=0 --set llm.timeout_s=1") ==
        3);
}
