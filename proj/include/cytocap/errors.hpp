#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cytocap {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// An operation was invoked in the wrong lifecycle state (e.g. backward before forward).
struct StateError : Error {
  using Error::Error;
};

struct PreconditionError : Error {
  using Error::Error;
};

struct EmptyLossError : Error {
  EmptyLossError() : Error("empty loss: loss mask selects no positions") {}
};

struct FormatError : Error {
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};

// Bad user input or configuration detected before work starts. Maps to CLI exit code 2.
struct ValidationError : Error {
  using Error::Error;
};

// A pluggable client (LLM, extractor, judge) failed on one item; caller may retry.
struct RetryableError : Error {
  RetryableError(const std::string& what, std::string item_id)
      : Error(what + " [item " + item_id + "]"), item_id(std::move(item_id)) {}
  std::string item_id;
};

// A pipeline stage failed on a specific input. Maps to CLI exit code 3.
struct StageError : Error {
  StageError(std::string stage, std::string input_id, const std::string& what)
      : Error("stage '" + stage + "' failed on '" + input_id + "': " + what),
        stage(std::move(stage)),
        input_id(std::move(input_id)) {}
  std::string stage;
  std::string input_id;
};

}  // namespace cytocap
