#pragma once

// Everything gen-data writes: the world, a training corpus, a held-out corpus
// and the evaluation suites, under one directory.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "lasttok/synth/corpus.hpp"
#include "lasttok/synth/suites.hpp"
#include "lasttok/synth/world.hpp"

namespace lasttok::synth {

struct DataConfig {
  WorldConfig world;
  std::size_t utterances = 5000;
  std::size_t heldout = 500;
  std::uint64_t corpus_seed = 11;
  SuiteConfig suites;
};

void to_json(nlohmann::json& j, const DataConfig& c);
/// "world" and "utterances" are required; a missing one raises ConfigError
/// naming it. Other keys default; unknown keys are rejected.
void from_json(const nlohmann::json& j, DataConfig& c);

struct Dataset {
  DataConfig config;
  World world;
  std::vector<Utterance> train;
  std::vector<Utterance> heldout;
  EvalSuite suites;
};

Dataset generate_dataset(const DataConfig& config);

/// dir/data.json, dir/world.json, dir/train/, dir/heldout/, dir/suites/.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
/// Throws MissingArtifact when a part is absent.
Dataset read_dataset(const std::filesystem::path& dir);
/// World only, without reading the corpora.
World read_world(const std::filesystem::path& dir);

}  // namespace lasttok::synth
