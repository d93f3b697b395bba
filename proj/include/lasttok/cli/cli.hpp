#pragma once

// The `lasttok` command line: data generation, training, evaluation, reports
// and sweeps. Kept in a library so tests can drive it in-process.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace lasttok::cli {

/// Written as manifest.json into every directory a command produces.
struct RunManifest {
  std::string command;
  /// Full argument vector, for re-running.
  std::vector<std::string> argv;
  /// FNV-1a over the serialized resolved config.
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  /// Artifact name -> path relative to the manifest's directory.
  std::map<std::string, std::string> artifacts;
  /// Headline numbers (final losses, checksums, eval scores).
  nlohmann::json results = nlohmann::json::object();
  std::string build_id;
  double wall_time_s = 0.0;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

std::string config_hash(const nlohmann::json& config);
void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);
/// Throws MissingArtifact when dir has no manifest.
RunManifest read_manifest(const std::filesystem::path& dir);

/// Compile-time build identifier (git revision when available).
std::string build_id();

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, training_abort = 3, missing_artifact = 4 };

/// Parses and runs one command; returns the process exit code. Errors are
/// reported on stderr.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace lasttok::cli
