#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lasttok/io/archive.hpp"
#include "lasttok/textlm/layers.hpp"

namespace lasttok::textlm {

struct LMConfig {
  std::size_t n_layers = 2;
  std::size_t model_dim = 64;
  std::size_t n_heads = 4;
  std::size_t vocab = 0;
  std::size_t max_seq_len = 128;
  /// Output projection init scale; 0 gives a zero-initialised head.
  double out_init = 0.0;

  /// "S" = 2 layers / dim 64, "M" = 4 layers / dim 128.
  static LMConfig preset(const std::string& name, std::size_t vocab);
  void validate() const;
};

void to_json(nlohmann::json& j, const LMConfig& c);
void from_json(const nlohmann::json& j, LMConfig& c);

/// Decoder-only transformer over word tokens. Text ids are [0, W) for words,
/// then BOS and EOS.
class CausalLM {
 public:
  CausalLM(const LMConfig& config, std::uint64_t seed);
  CausalLM(const CausalLM&) = delete;
  CausalLM& operator=(const CausalLM&) = delete;
  CausalLM(CausalLM&&) = default;
  CausalLM& operator=(CausalLM&&) = default;

  const LMConfig& config() const { return config_; }
  std::size_t bos() const { return config_.vocab - 2; }
  std::size_t eos() const { return config_.vocab - 1; }

  /// Next-token logits [T x V] for a text id sequence.
  Var text_logits(std::span<const int> tokens) const;
  /// Shared trunk: adds learned positions to already-embedded rows [T x D],
  /// runs the blocks and the final norm.
  Var add_positions(const Var& embedded) const;
  Var trunk(const Var& hidden) const;

  /// Mean next-token NLL over [BOS, words..., EOS] for each sentence.
  double text_loss(const std::vector<std::vector<int>>& sentences) const;
  /// [BOS, words..., EOS] as text ids.
  std::vector<int> encode_sentence(const std::vector<int>& words) const;

  const std::vector<ParamPtr>& parameters() const { return params_.items(); }

  /// Marks every parameter non-trainable and records the checksum.
  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }
  std::uint64_t checksum() const;
  /// Checksum recorded at the last freeze().
  std::optional<std::uint64_t> frozen_checksum() const { return frozen_checksum_; }

  void save(const std::filesystem::path& path) const;
  static CausalLM load(const std::filesystem::path& path);

 private:
  LMConfig config_;
  ParamList params_;
  ParamPtr token_embedding_;
  ParamPtr position_embedding_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
  Linear head_;
  bool frozen_ = false;
  std::optional<std::uint64_t> frozen_checksum_;
};

}  // namespace lasttok::textlm
