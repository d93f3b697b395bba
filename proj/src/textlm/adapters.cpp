#include "lasttok/textlm/adapters.hpp"

#include <cmath>

#include "lasttok/errors.hpp"

namespace lasttok::textlm {

using compute::Tensor;

LMMode parse_mode(const std::string& s) {
  if (s == "pretrain") return LMMode::pretrain;
  if (s == "finetune") return LMMode::finetune;
  throw ConfigError("mode must be 'pretrain' or 'finetune', got '" + s + "'");
}

std::string to_string(LMMode mode) { return mode == LMMode::pretrain ? "pretrain" : "finetune"; }

void apply_mode(CausalLM& lm, LMMode mode) {
  if (mode == LMMode::pretrain) {
    lm.freeze();
  } else {
    lm.unfreeze();
  }
}

void to_json(nlohmann::json& j, const AdapterConfig& c) {
  j = {{"codebook_size", c.codebook_size},
       {"code_dim", c.code_dim},
       {"n_before", c.n_before},
       {"n_after", c.n_after},
       {"out_init", c.out_init}};
}

void from_json(const nlohmann::json& j, AdapterConfig& c) {
  c.codebook_size = j.at("codebook_size").get<std::size_t>();
  c.code_dim = j.at("code_dim").get<std::size_t>();
  c.n_before = j.at("n_before").get<std::size_t>();
  c.n_after = j.at("n_after").get<std::size_t>();
  c.out_init = j.value("out_init", 0.0);
}

SpeechAdapters::SpeechAdapters(const AdapterConfig& config, const LMConfig& lm, ParamPtr lookup, std::uint64_t seed)
    : config_(config) {
  if (config_.codebook_size == 0 || config_.code_dim == 0) throw ConfigError("adapters: empty speech vocabulary");
  Rng rng(seed);
  const auto D = lm.model_dim;
  if (lookup) {
    if (lookup->value.shape() != compute::Shape{config_.codebook_size, config_.code_dim}) {
      throw ConfigError("adapters: shared lookup table has shape " + compute::shape_string(lookup->value.shape()));
    }
    lookup_ = std::move(lookup);
  } else {
    lookup_ = params_.add("adapters.lookup", normal_tensor({config_.codebook_size, config_.code_dim}, 1.0, rng));
    owns_lookup_ = true;
  }
  const std::size_t depth = config_.n_before + lm.n_layers + config_.n_after;
  in_proj_ = Linear::make(params_, "adapters.in_proj", config_.code_dim, D, rng);
  for (std::size_t i = 0; i < config_.n_before; ++i) {
    before_.push_back(
        TransformerBlock::make(params_, "adapters.before." + std::to_string(i), D, lm.n_heads, true, depth, rng));
  }
  for (std::size_t i = 0; i < config_.n_after; ++i) {
    after_.push_back(
        TransformerBlock::make(params_, "adapters.after." + std::to_string(i), D, lm.n_heads, true, depth, rng));
  }
  out_norm_ = LayerNorm::make(params_, "adapters.out_norm", D);
  out_proj_ = Linear::make(params_, "adapters.out_proj", D, config_.codebook_size, rng, config_.out_init);
}

Var SpeechAdapters::logits(const Var& code_rows, const CausalLM& lm) const {
  Var h = lm.add_positions(in_proj_(code_rows));
  h = run_blocks(before_, h);
  h = lm.trunk(h);
  h = run_blocks(after_, h);
  return out_proj_(out_norm_(h));
}

Var SpeechAdapters::logits(std::span<const int> tokens, const CausalLM& lm) const {
  return logits(compute::gather_rows(compute::param(lookup_), tokens), lm);
}

std::vector<ParamPtr> SpeechAdapters::parameters() const { return params_.items(); }

void SpeechAdapters::save(const std::filesystem::path& path, const LMConfig& lm) const {
  if (!owns_lookup_) throw std::logic_error("SpeechAdapters::save: lookup table belongs to a tokenizer");
  io::TensorArchive ar;
  ar.metadata["kind"] = "speech_adapters";
  ar.metadata["adapters"] = config_;
  ar.metadata["lm"] = lm;
  ar.put_parameters(params_.items(), "param/");
  ar.save(path);
}

SpeechAdapters SpeechAdapters::load(const std::filesystem::path& path) {
  const auto ar = io::TensorArchive::load(path);
  if (ar.metadata.value("kind", "") != "speech_adapters") {
    throw ConfigError(path.string() + " is not a speech adapter checkpoint");
  }
  SpeechAdapters a(ar.metadata.at("adapters").get<AdapterConfig>(), ar.metadata.at("lm").get<LMConfig>(), nullptr, 0);
  ar.load_parameters(a.params_.items(), "param/");
  return a;
}

SequenceScore sequence_logprob(std::span<const int> tokens, const SpeechAdapters& adapters, const CausalLM& lm) {
  if (tokens.size() < 2) throw std::invalid_argument("sequence_logprob: need at least two tokens");
  const auto K = adapters.config().codebook_size;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= K) {
      throw std::out_of_range("sequence_logprob: token " + std::to_string(tokens[i]) + " outside [0, " +
                              std::to_string(K) + ")");
    }
    if (i > 0 && tokens[i] == tokens[i - 1]) {
      throw std::invalid_argument("sequence_logprob: adjacent duplicate tokens at position " + std::to_string(i));
    }
  }
  compute::NoGradGuard no_grad;
  const Var logits = adapters.logits(tokens.first(tokens.size() - 1), lm);
  SequenceScore score;
  score.count = tokens.size() - 1;
  for (std::size_t i = 0; i < score.count; ++i) {
    const double* row = logits.value().row(i);
    double mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(row[k] - mx);
    score.total_logprob += row[tokens[i + 1]] - mx - std::log(s);
  }
  return score;
}

}  // namespace lasttok::textlm
