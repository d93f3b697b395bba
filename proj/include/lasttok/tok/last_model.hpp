#pragma once

// Language-model-aware tokenizer: encoder E over frozen frame features, a
// vector quantizer whose codebook doubles as the speech lookup table of the
// LM adapters, and a decoder D reconstructing the features from E's output.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "lasttok/compute/graph.hpp"
#include "lasttok/io/archive.hpp"
#include "lasttok/textlm/adapters.hpp"
#include "lasttok/textlm/causal_lm.hpp"
#include "lasttok/textlm/layers.hpp"
#include "lasttok/tok/tokenizer.hpp"

namespace lasttok::tok {

using compute::ParamPtr;
using compute::Var;

struct TokenizerConfig {
  std::size_t feature_dim = 16;
  std::size_t codebook_size = 64;
  std::size_t n_enc = 2;
  std::size_t n_dec = 2;
  /// Attention heads in the encoder/decoder blocks; must divide feature_dim.
  std::size_t heads = 2;
  /// Feed the straight-through quantized vectors to D instead of u.
  bool decoder_on_quantized = false;
  /// Let the LM loss reach the codebook through the lookup path as well.
  bool codebook_lm_grad = false;
};

void to_json(nlohmann::json& j, const TokenizerConfig& c);
void from_json(const nlohmann::json& j, TokenizerConfig& c);

struct LossWeights {
  double recon = 1.0;
  double codebook = 1.0;
  double commit = 0.25;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

class Codebook {
 public:
  explicit Codebook(ParamPtr codes);

  const ParamPtr& codes() const { return codes_; }
  std::size_t size() const { return codes_->value.rows(); }
  std::size_t dim() const { return codes_->value.cols(); }

  /// Nearest code per row of u; lowest index on ties.
  std::vector<int> assign(const compute::Tensor& u) const;

  const std::vector<std::uint64_t>& usage() const { return usage_; }
  void record(std::span<const int> codes);
  void reset_usage() { std::fill(usage_.begin(), usage_.end(), 0); }
  void set_usage(std::vector<std::uint64_t> usage) { usage_ = std::move(usage); }

 private:
  ParamPtr codes_;
  std::vector<std::uint64_t> usage_;
};

struct Quantized {
  std::vector<int> codes;
  /// c_{z_t}
  Var quantized;
  /// Forward value of quantized, gradient routed to u.
  Var straight;
  /// mean_t ||sg(u_t) - c_{z_t}||^2
  Var codebook_loss;
  /// mean_t ||u_t - sg(c_{z_t})||^2
  Var commit_loss;
};

/// A point to linearise the quantizer at: assignments, encoder outputs and
/// selected code vectors from an earlier pass over the same input.
struct VqPoint {
  std::vector<int> codes;
  compute::Tensor latents;
  compute::Tensor quantized;
};

/// Throws std::invalid_argument on empty input. With `at`, the assignments
/// are held at at->codes, every stop-gradient operand is replaced by its
/// value at the point, and the straight-through output becomes
/// u - u_at + q. The result equals the training graph in value at the point
/// and is differentiable with the straight-through gradient as its exact
/// gradient. Finite-difference checks use this.
Quantized quantize(const Var& u, Codebook& codebook, bool grad_to_codes = false, bool record_usage = true,
                   const VqPoint* at = nullptr);

/// Mean next-token NLL over a deduplicated sequence given its embedded rows.
/// Requires at least two tokens.
Var lm_loss(const Var& rows, std::span<const int> tokens, const textlm::SpeechAdapters& adapters,
            const textlm::CausalLM& lm);

/// (1 / (T d)) ||reconstruction - target||^2
Var recon_loss(const Var& reconstruction, const Var& target);

class Encoder {
 public:
  Encoder() = default;
  Encoder(textlm::ParamList& params, std::size_t feature_dim, std::size_t code_dim, std::size_t layers,
          std::size_t heads, Rng& rng);
  Var operator()(const Var& features, std::size_t valid_rows = 0) const;

 private:
  std::vector<textlm::TransformerBlock> blocks_;
  textlm::Linear proj_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(textlm::ParamList& params, std::size_t code_dim, std::size_t feature_dim, std::size_t layers,
          std::size_t heads, Rng& rng);
  Var operator()(const Var& latents, std::size_t valid_rows = 0) const;

 private:
  textlm::Linear proj_;
  std::vector<textlm::TransformerBlock> blocks_;
};

struct LossParts {
  Var total;
  Var lm;
  Var recon;
  Var codebook;
  Var commit;
  /// Weighted reconstruction and VQ terms; total = lm + aux.
  Var aux;
  /// False when fewer than two tokens survive dedup; lm is then absent.
  bool lm_valid = false;
  std::size_t lm_tokens = 0;
  std::vector<int> codes;
  /// Detached encoder outputs for the valid frames.
  compute::Tensor latents;
};

class LastModel final : public FrameTokenizer {
 public:
  LastModel(const TokenizerConfig& config, const textlm::AdapterConfig& adapters, const textlm::LMConfig& lm,
            std::uint64_t seed);
  LastModel(const LastModel&) = delete;
  LastModel& operator=(const LastModel&) = delete;

  const TokenizerConfig& config() const { return config_; }
  /// Shape of the LM the adapters were built for.
  const textlm::LMConfig& lm_config() const { return lm_config_; }
  std::size_t code_dim() const { return codebook_.dim(); }

  Var encode(const Var& features, std::size_t valid_rows = 0) const { return encoder_(features, valid_rows); }
  Var decode(const Var& latents, std::size_t valid_rows = 0) const { return decoder_(latents, valid_rows); }

  /// All loss terms for one utterance. Rows at or after valid_rows (0 = all)
  /// are right padding: masked from attention and excluded from every loss.
  LossParts losses(const compute::Tensor& features, std::size_t valid_rows, const textlm::CausalLM& lm,
                   const LossWeights& weights, bool record_usage = false, const VqPoint* at = nullptr);
  VqPoint vq_point(const compute::Tensor& features, std::size_t valid_rows = 0) const;

  std::vector<int> frame_tokens(const compute::Tensor& features) const override;
  compute::Tensor latents(const compute::Tensor& features) const override;
  std::size_t vocab_size() const override { return codebook_.size(); }

  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }
  const textlm::SpeechAdapters& adapters() const { return adapters_; }

  /// Encoder, codebook and decoder.
  std::vector<ParamPtr> tokenizer_parameters() const;
  std::vector<ParamPtr> adapter_parameters() const { return adapters_.parameters(); }
  std::vector<ParamPtr> parameters() const;

  /// Configs in the metadata, every parameter under "param/", usage counts.
  void save(const std::filesystem::path& path) const;
  /// Throws MissingArtifact when the file is absent and ConfigError when it
  /// holds something other than a tokenizer.
  static std::unique_ptr<LastModel> load(const std::filesystem::path& path);

 private:
  TokenizerConfig config_;
  textlm::LMConfig lm_config_;
  textlm::ParamList params_;
  Encoder encoder_;
  Codebook codebook_;
  Decoder decoder_;
  textlm::SpeechAdapters adapters_;
};

}  // namespace lasttok::tok
