#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lasttok {

/// Invalid or incomplete configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training stopped on a non-finite loss or a frozen-parameter drift. CLI exit code 3.
class TrainingAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required input artifact (checkpoint, corpus, suite file) is absent. CLI exit code 4.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file. Carries the byte offset where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace lasttok
