#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lasttok/compute/tensor.hpp"
#include "lasttok/synth/world.hpp"

namespace lasttok::synth {

struct Segment {
  int phoneme = 0;
  int start = 0;
  int end = 0;  // exclusive

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct Utterance {
  std::string id;
  int speaker = 0;
  /// Word ids; empty for pseudowords and bare phoneme strings.
  std::vector<int> words;
  std::vector<Segment> alignment;
  /// T x d frames; values are exactly representable as 32-bit floats.
  compute::Tensor features;

  std::size_t frames() const { return features.rows(); }
  /// Phoneme sequence, one entry per alignment segment.
  std::vector<int> phonemes() const;
  /// Generating phoneme of every frame.
  std::vector<int> frame_labels() const;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// Frames for an explicit phoneme string: frame t = A mu_p(t) + b + eps_t,
/// eps_t ~ N(0, sigma^2 I), with per-segment durations drawn uniformly from
/// [dur_min, dur_max]. Throws std::invalid_argument on an empty sequence.
Utterance synthesize_phonemes(const PhonemeInventory& inventory, const std::vector<int>& phonemes,
                              const SpeakerProfile& speaker, std::uint64_t seed, std::string id);

/// Concatenates the words' phoneme strings and synthesises them.
Utterance synthesize(const World& world, const std::vector<int>& words, const SpeakerProfile& speaker,
                     std::uint64_t seed, std::string id);

/// Grammar sentences from random speakers.
std::vector<Utterance> generate_corpus(const World& world, std::size_t count, std::uint64_t seed,
                                       const std::string& id_prefix);

/// Writes dir/manifest.jsonl (one JSON record per utterance) and
/// dir/features.bin (little-endian float32 frames).
void write_corpus(const std::vector<Utterance>& utterances, const std::filesystem::path& dir);
/// Throws ParseError with the byte offset on malformed or truncated input and
/// MissingArtifact when the directory lacks either file.
std::vector<Utterance> read_corpus(const std::filesystem::path& dir);

}  // namespace lasttok::synth
