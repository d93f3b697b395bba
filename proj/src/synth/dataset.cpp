#include "lasttok/synth/dataset.hpp"

#include <fstream>

#include "lasttok/errors.hpp"

namespace lasttok::synth {

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("missing " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
}

}  // namespace

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"world", c.world},
       {"utterances", c.utterances},
       {"heldout", c.heldout},
       {"corpus_seed", c.corpus_seed},
       {"suites", {{"swuggy", c.suites.swuggy}, {"sblimp", c.suites.sblimp}, {"abx", c.suites.abx},
                   {"seed", c.suites.seed}}}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  if (!j.is_object()) throw ConfigError("data: config must be a JSON object");
  for (const char* key : {"world", "utterances"}) {
    if (!j.contains(key)) throw ConfigError(std::string("data: missing field '") + key + "'");
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "world" && key != "utterances" && key != "heldout" && key != "corpus_seed" && key != "suites") {
      throw ConfigError("data: unknown field '" + key + "'");
    }
  }
  try {
    c.world = j.at("world").get<WorldConfig>();
    c.utterances = j.at("utterances").get<std::size_t>();
    c.heldout = j.value("heldout", c.heldout);
    c.corpus_seed = j.value("corpus_seed", c.corpus_seed);
    if (j.contains("suites")) {
      const auto& s = j.at("suites");
      for (const auto& [key, value] : s.items()) {
        if (key != "swuggy" && key != "sblimp" && key != "abx" && key != "seed") {
          throw ConfigError("data: unknown field 'suites." + key + "'");
        }
      }
      c.suites.swuggy = s.value("swuggy", c.suites.swuggy);
      c.suites.sblimp = s.value("sblimp", c.suites.sblimp);
      c.suites.abx = s.value("abx", c.suites.abx);
      c.suites.seed = s.value("seed", c.suites.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  if (c.utterances == 0) throw ConfigError("data: utterances must be positive");
}

Dataset generate_dataset(const DataConfig& config) {
  Dataset d;
  d.config = config;
  d.world = build_world(config.world);
  d.train = generate_corpus(d.world, config.utterances, config.corpus_seed, "train");
  // A distinct stream: held-out sentences are new draws, not a split.
  if (config.heldout > 0) d.heldout = generate_corpus(d.world, config.heldout, config.corpus_seed ^ 0x5eed, "heldout");
  d.suites = make_suites(d.world, config.suites);
  return d;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json(dir / "data.json", data.config);
  write_json(dir / "world.json", world_to_json(data.world));
  write_corpus(data.train, dir / "train");
  write_corpus(data.heldout, dir / "heldout");
  write_suites(data.suites, dir / "suites");
}

World read_world(const std::filesystem::path& dir) { return world_from_json(read_json(dir / "world.json")); }

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.config = read_json(dir / "data.json").get<DataConfig>();
  d.world = read_world(dir);
  d.train = read_corpus(dir / "train");
  d.heldout = read_corpus(dir / "heldout");
  d.suites = read_suites(dir / "suites");
  return d;
}

}  // namespace lasttok::synth
