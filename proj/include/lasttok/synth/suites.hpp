#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "lasttok/synth/corpus.hpp"
#include "lasttok/synth/world.hpp"

namespace lasttok::synth {

/// A scored pair: the first member is the correct one (real word,
/// grammatical sentence).
struct PairItem {
  std::string id;
  std::string good;
  std::string bad;
};

/// A and B differ only in their centre phoneme; X repeats the centre phoneme of
/// exactly one of them. correct = 0 means X matches A.
struct AbxTriple {
  std::string id;
  std::string a;
  std::string b;
  std::string x;
  int correct = 0;
  bool within = true;
};

struct SuiteConfig {
  std::size_t swuggy = 500;
  std::size_t sblimp = 500;
  std::size_t abx = 1000;
  std::uint64_t seed = 7;
};

struct EvalSuite {
  std::vector<PairItem> swuggy;
  std::vector<PairItem> sblimp;
  std::vector<AbxTriple> abx;
  std::vector<Utterance> utterances;

  /// Throws MissingArtifact for unknown ids.
  const Utterance& utterance(const std::string& id) const;
  void reindex();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// Throws ConfigError when a count is zero, the lexicon is too small to yield
/// pseudowords, or the world cannot supply ABX contexts.
EvalSuite make_suites(const World& world, const SuiteConfig& config);

/// Pseudoword for a lexicon word: one phoneme substituted, no adjacent
/// repeats, not itself in the lexicon. Empty when none exists.
std::vector<int> make_pseudoword(const World& world, const std::vector<int>& word, Rng& rng);

/// Writes dir/suites.json and the suite utterances as a corpus under dir/utterances.
void write_suites(const EvalSuite& suite, const std::filesystem::path& dir);
EvalSuite read_suites(const std::filesystem::path& dir);

}  // namespace lasttok::synth
