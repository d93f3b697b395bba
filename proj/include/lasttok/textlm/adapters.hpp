#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lasttok/textlm/causal_lm.hpp"

namespace lasttok::textlm {

/// pretrain: the text LM stays frozen and only adapters (and the tokenizer)
/// learn. finetune: the LM weights are trained as well.
enum class LMMode { pretrain, finetune };

LMMode parse_mode(const std::string& s);
std::string to_string(LMMode mode);
/// Sets LM trainability for the mode; pretrain re-freezes and records the checksum.
void apply_mode(CausalLM& lm, LMMode mode);

struct AdapterConfig {
  std::size_t codebook_size = 64;
  std::size_t code_dim = 64;
  std::size_t n_before = 2;
  std::size_t n_after = 2;
  /// Output projection init scale; 0 gives uniform next-token predictions.
  double out_init = 0.0;
};

void to_json(nlohmann::json& j, const AdapterConfig& c);
void from_json(const nlohmann::json& j, AdapterConfig& c);

/// Speech path around a text LM: lookup table -> input projection -> adapter
/// blocks -> LM trunk -> adapter blocks -> projection to K speech tokens.
class SpeechAdapters {
 public:
  /// lookup is the K x code_dim speech token table. Passing the tokenizer's
  /// codebook parameter makes both views the same storage; passing nullptr
  /// creates a separately owned, trainable table.
  SpeechAdapters(const AdapterConfig& config, const LMConfig& lm, ParamPtr lookup, std::uint64_t seed);

  const AdapterConfig& config() const { return config_; }

  /// Next-token logits [n x K] for already-embedded token rows [n x code_dim].
  Var logits(const Var& code_rows, const CausalLM& lm) const;
  /// Index-lookup view of the same computation.
  Var logits(std::span<const int> tokens, const CausalLM& lm) const;

  const ParamPtr& lookup() const { return lookup_; }
  bool owns_lookup() const { return owns_lookup_; }
  /// Adapter parameters, plus the lookup table only when it is owned.
  std::vector<ParamPtr> parameters() const;

  /// Stand-alone adapters only (owned lookup table); lm is recorded so load()
  /// can rebuild the same shapes.
  void save(const std::filesystem::path& path, const LMConfig& lm) const;
  static SpeechAdapters load(const std::filesystem::path& path);

 private:
  AdapterConfig config_;
  ParamList params_;
  ParamPtr lookup_;
  bool owns_lookup_ = false;
  Linear in_proj_;
  std::vector<TransformerBlock> before_;
  std::vector<TransformerBlock> after_;
  LayerNorm out_norm_;
  Linear out_proj_;
};

struct SequenceScore {
  double total_logprob = 0.0;
  std::size_t count = 0;
  /// Log of the geometric mean of the per-token probabilities.
  double mean() const { return total_logprob / static_cast<double>(count); }
};

/// sum_{i>=2} log p(z_i | z_<i) over a deduplicated token sequence. Throws
/// std::invalid_argument for fewer than two tokens or adjacent duplicates and
/// std::out_of_range for ids outside [0, K).
SequenceScore sequence_logprob(std::span<const int> tokens, const SpeechAdapters& adapters, const CausalLM& lm);

}  // namespace lasttok::textlm
