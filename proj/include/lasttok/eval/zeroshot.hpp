#pragma once

// Zero-resource style evaluation: paired likelihood scoring, ABX, unit
// purity, a phone-error proxy and codebook statistics.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lasttok/compute/tensor.hpp"
#include "lasttok/synth/suites.hpp"
#include "lasttok/textlm/adapters.hpp"
#include "lasttok/tok/tokenizer.hpp"

namespace lasttok::eval {

/// Log geometric-mean probability of an utterance, or nullopt when it yields
/// fewer than two tokens after dedup.
using SequenceScorer = std::function<std::optional<double>(const synth::Utterance&)>;

SequenceScorer lm_scorer(const tok::FrameTokenizer& tokenizer, const textlm::SpeechAdapters& adapters,
                         const textlm::CausalLM& lm);

/// Scores from the generating words instead of the audio: 0 for a lexicon
/// word or a grammatical sentence, -1 otherwise (pseudowords carry no words).
/// Upper bound for the paired suites.
SequenceScorer oracle_scorer(const synth::World& world);

struct PairVerdict {
  std::string id;
  /// NaN when the member was too short to score.
  double good_score = 0.0;
  double bad_score = 0.0;
  /// 0 = good member chosen, 1 = bad member chosen, -1 = tie.
  int chosen = -1;
  /// 1, 0, or 0.5 for a tie.
  double correct = 0.5;
};

struct PairReport {
  double accuracy = 0.0;
  std::size_t ties = 0;
  /// Pairs with a member of fewer than two tokens (scored as ties).
  std::size_t degenerate = 0;
  std::vector<PairVerdict> verdicts;
};

PairReport score_pairs(std::span<const synth::PairItem> pairs, const synth::EvalSuite& suite,
                       const SequenceScorer& scorer);

/// Maps an utterance to a sequence of frame vectors.
using Representation = std::function<compute::Tensor(const synth::Utterance&)>;

/// Encoder latents of a tokenizer.
Representation latent_representation(const tok::FrameTokenizer& tokenizer);
/// One-hot codes of the per-frame tokens.
Representation onehot_representation(const tok::FrameTokenizer& tokenizer);

/// 1 - cos(a, b); 1 when either vector is zero.
double cosine_distance(const double* a, const double* b, std::size_t n);

/// Dynamic time warping with cosine frame distance; the cost of the best path
/// divided by its length. Throws std::invalid_argument on an empty sequence.
double dtw_distance(const compute::Tensor& a, const compute::Tensor& b);

struct AbxVerdict {
  std::string id;
  double d_correct = 0.0;
  double d_wrong = 0.0;
  bool within = true;
  /// 1 when the wrong member is strictly closer, 0.5 on a tie.
  double error = 0.0;
};

struct AbxReport {
  double within = 0.0;
  double across = 0.0;
  std::vector<AbxVerdict> verdicts;
};

AbxReport abx_error(std::span<const synth::AbxTriple> triples, const synth::EvalSuite& suite,
                    const Representation& representation);

struct PurityReport {
  /// Majority phoneme per unit; -1 for units that never fired.
  std::vector<int> majority;
  std::vector<double> purity;
  std::vector<std::size_t> frames;
  /// Family of each unit's majority phoneme; -1 for unused units.
  std::vector<int> family;
  /// Frame-weighted purity over all units.
  double global = 0.0;
  std::size_t total_frames = 0;
};

/// tokens[i] and labels[i] are the per-frame units and phonemes of utterance i.
/// families maps phoneme -> family and may be empty. Throws
/// std::invalid_argument on a length mismatch.
PurityReport unit_purity(const std::vector<std::vector<int>>& tokens, const std::vector<std::vector<int>>& labels,
                         std::size_t units, std::size_t phonemes, std::span<const int> families = {});

std::size_t levenshtein(std::span<const int> a, std::span<const int> b);

struct PerReport {
  double per = 0.0;
  std::size_t utterances = 0;
  /// Frames whose unit had no majority phoneme in the mapping split.
  std::size_t unseen = 0;
};

/// Maps each frame token to its majority phoneme, collapses repeats, and
/// averages edit distance / reference length over utterances. Repeats in the
/// reference are collapsed too. Unmapped units decode to a blank that is
/// dropped.
PerReport per_proxy(const std::vector<int>& majority, const std::vector<std::vector<int>>& tokens,
                    const std::vector<std::vector<int>>& reference);

struct CodebookStats {
  double entropy = 0.0;
  double perplexity = 0.0;
  std::size_t dead = 0;
  /// Mean length of runs of identical adjacent frame tokens.
  double mean_run_length = 0.0;
};

CodebookStats codebook_stats(const std::vector<std::vector<int>>& tokens, std::size_t units);

nlohmann::json to_json(const PairReport& r);
nlohmann::json to_json(const AbxReport& r);
nlohmann::json to_json(const PurityReport& r);
nlohmann::json to_json(const PerReport& r);
nlohmann::json to_json(const CodebookStats& r);

void write_pair_csv(const std::filesystem::path& path, const PairReport& r);
void write_abx_csv(const std::filesystem::path& path, const AbxReport& r);

}  // namespace lasttok::eval
