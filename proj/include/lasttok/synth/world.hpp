#pragma once

// Synthetic spoken world: phoneme prototypes, a lexicon over them, a toy
// grammar over word classes, and per-speaker affine warps. Frames are emitted
// directly in the feature space a frozen speech encoder would produce.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lasttok/compute/rng.hpp"
#include "lasttok/compute/tensor.hpp"

namespace lasttok::synth {

struct WorldConfig {
  std::uint64_t seed = 1;
  int phonemes = 20;
  int words = 200;
  int dim = 16;
  int speakers = 8;
  /// Phoneme families; 0 picks max(1, phonemes / 5).
  int families = 0;
  int dur_min = 2;
  int dur_max = 6;
  int word_len_min = 2;
  int word_len_max = 6;
  /// Emission noise as a fraction of the smallest prototype gap.
  double noise_rel = 0.2;
  /// Absolute emission noise; when > 0 it overrides noise_rel and prototypes are
  /// resampled until every gap exceeds 4 sigma.
  double noise_sigma = 0.0;
  double family_spread = 1.0;
  double phoneme_spread = 0.6;
  /// Speaker warp A = I + speaker_warp * G / sqrt(d).
  double speaker_warp = 0.2;
  /// Speaker offset b ~ N(0, speaker_shift^2 I).
  double speaker_shift = 0.3;
  int max_retries = 100;
};

void to_json(nlohmann::json& j, const WorldConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected with ConfigError.
void from_json(const nlohmann::json& j, WorldConfig& c);

struct PhonemeInventory {
  compute::Tensor prototypes;  // P x d
  std::vector<int> family;
  int families = 1;
  int dur_min = 2;
  int dur_max = 6;
  double sigma = 0.0;

  std::size_t size() const { return prototypes.rows(); }
  std::size_t dim() const { return prototypes.cols(); }
  double min_gap() const;
};

enum WordClass : int { kDet = 0, kAdj, kNoun, kVerb, kPrep, kAdv, kNumClasses };

std::string_view class_name(int word_class);

struct Lexicon {
  std::vector<std::vector<int>> words;
  /// Unigram frequency of each word under the grammar's sentence distribution.
  std::vector<double> frequency;

  std::size_t size() const { return words.size(); }
  /// Index of the word with exactly this phoneme sequence, or -1.
  int find(const std::vector<int>& phonemes) const;
  bool contains(const std::vector<int>& phonemes) const { return find(phonemes) >= 0; }
};

class ToyGrammar {
 public:
  ToyGrammar() = default;
  ToyGrammar(std::vector<int> word_class, std::vector<std::vector<int>> patterns, std::vector<double> pattern_weight,
             std::vector<std::vector<double>> class_word_weight);

  /// Samples a grammatical sentence (word ids).
  std::vector<int> sample(Rng& rng) const;
  bool is_grammatical(const std::vector<int>& sentence) const;
  /// Permutes the sentence into an ungrammatical order, or nullopt when every
  /// permutation tried stays grammatical.
  std::optional<std::vector<int>> corrupt(const std::vector<int>& sentence, Rng& rng) const;

  const std::vector<int>& word_class() const { return word_class_; }
  const std::vector<std::vector<int>>& patterns() const { return patterns_; }
  const std::vector<double>& pattern_weight() const { return pattern_weight_; }
  const std::vector<std::vector<int>>& class_words() const { return class_words_; }
  const std::vector<std::vector<double>>& class_word_weight() const { return class_word_weight_; }

  /// Expected unigram distribution over words.
  std::vector<double> unigram() const;

 private:
  std::vector<int> word_class_;
  std::vector<std::vector<int>> patterns_;
  std::vector<double> pattern_weight_;
  std::vector<std::vector<int>> class_words_;
  std::vector<std::vector<double>> class_word_weight_;
};

struct SpeakerProfile {
  int id = 0;
  compute::Tensor warp;  // d x d
  std::vector<double> offset;

  static SpeakerProfile identity(int id, std::size_t dim);
  /// warp * x + offset
  std::vector<double> apply(const double* x) const;
  double condition_number() const;
};

struct World {
  WorldConfig config;
  PhonemeInventory inventory;
  Lexicon lexicon;
  ToyGrammar grammar;
  std::vector<SpeakerProfile> speakers;
};

/// Deterministic in config.seed. Throws ConfigError on invalid sizes or when
/// separability cannot be reached within config.max_retries.
World build_world(const WorldConfig& config);

nlohmann::json world_to_json(const World& world);
World world_from_json(const nlohmann::json& j);

}  // namespace lasttok::synth
