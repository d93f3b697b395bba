#include "lasttok/textlm/causal_lm.hpp"

#include "lasttok/compute/checksum.hpp"
#include "lasttok/errors.hpp"

namespace lasttok::textlm {

using compute::Tensor;

LMConfig LMConfig::preset(const std::string& name, std::size_t vocab) {
  LMConfig c;
  c.vocab = vocab;
  if (name == "S") {
    c.n_layers = 2;
    c.model_dim = 64;
    c.n_heads = 4;
  } else if (name == "M") {
    c.n_layers = 4;
    c.model_dim = 128;
    c.n_heads = 4;
  } else {
    throw ConfigError("LM preset must be 'S' or 'M', got '" + name + "'");
  }
  return c;
}

void LMConfig::validate() const {
  if (n_layers == 0 || model_dim == 0 || n_heads == 0) throw ConfigError("LM config: sizes must be positive");
  if (model_dim % n_heads != 0) throw ConfigError("LM config: model_dim must be divisible by n_heads");
  if (vocab < 3) throw ConfigError("LM config: vocab must hold at least one word plus BOS/EOS");
  if (max_seq_len < 2) throw ConfigError("LM config: max_seq_len must be >= 2");
}

void to_json(nlohmann::json& j, const LMConfig& c) {
  j = {{"n_layers", c.n_layers}, {"model_dim", c.model_dim}, {"n_heads", c.n_heads},
       {"vocab", c.vocab},       {"max_seq_len", c.max_seq_len}, {"out_init", c.out_init}};
}

void from_json(const nlohmann::json& j, LMConfig& c) {
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.vocab = j.at("vocab").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.out_init = j.value("out_init", 0.0);
}

CausalLM::CausalLM(const LMConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto D = config_.model_dim;
  token_embedding_ = params_.add("lm.token_embedding", normal_tensor({config_.vocab, D}, 1.0, rng));
  position_embedding_ = params_.add("lm.position_embedding", normal_tensor({config_.max_seq_len, D}, 0.1, rng));
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    blocks_.push_back(TransformerBlock::make(params_, "lm.blocks." + std::to_string(i), D, config_.n_heads, true,
                                             config_.n_layers, rng));
  }
  final_norm_ = LayerNorm::make(params_, "lm.final_norm", D);
  head_ = Linear::make(params_, "lm.head", D, config_.vocab, rng, config_.out_init);
}

Var CausalLM::add_positions(const Var& embedded) const {
  const auto T = embedded.rows();
  if (T > config_.max_seq_len) {
    throw std::length_error("CausalLM: sequence of " + std::to_string(T) + " exceeds max_seq_len " +
                            std::to_string(config_.max_seq_len));
  }
  return compute::add(embedded, compute::slice_rows(compute::param(position_embedding_), 0, T));
}

Var CausalLM::trunk(const Var& hidden) const { return final_norm_(run_blocks(blocks_, hidden)); }

Var CausalLM::text_logits(std::span<const int> tokens) const {
  const Var emb = compute::gather_rows(compute::param(token_embedding_), tokens);
  return head_(trunk(add_positions(emb)));
}

std::vector<int> CausalLM::encode_sentence(const std::vector<int>& words) const {
  std::vector<int> ids;
  ids.reserve(words.size() + 2);
  ids.push_back(static_cast<int>(bos()));
  for (int w : words) {
    if (w < 0 || static_cast<std::size_t>(w) >= bos()) throw std::out_of_range("CausalLM: word id out of range");
    ids.push_back(w);
  }
  ids.push_back(static_cast<int>(eos()));
  return ids;
}

double CausalLM::text_loss(const std::vector<std::vector<int>>& sentences) const {
  compute::NoGradGuard no_grad;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : sentences) {
    const auto ids = encode_sentence(s);
    const std::span<const int> in(ids.data(), ids.size() - 1);
    const std::span<const int> target(ids.data() + 1, ids.size() - 1);
    const Var loss = compute::cross_entropy(text_logits(in), target);
    total += loss.value().item() * static_cast<double>(target.size());
    count += target.size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

void CausalLM::freeze() {
  set_trainable(params_.items(), false);
  frozen_ = true;
  frozen_checksum_ = checksum();
}

void CausalLM::unfreeze() {
  set_trainable(params_.items(), true);
  frozen_ = false;
}

std::uint64_t CausalLM::checksum() const { return compute::parameter_checksum(params_.items()); }

void CausalLM::save(const std::filesystem::path& path) const {
  io::TensorArchive ar;
  ar.metadata["kind"] = "causal_lm";
  ar.metadata["config"] = config_;
  ar.metadata["frozen"] = frozen_;
  ar.metadata["checksum"] = compute::hex64(checksum());
  ar.put_parameters(params_.items());
  ar.save(path);
}

CausalLM CausalLM::load(const std::filesystem::path& path) {
  const auto ar = io::TensorArchive::load(path);
  if (ar.metadata.value("kind", "") != "causal_lm") throw ConfigError(path.string() + " is not a causal LM checkpoint");
  CausalLM lm(ar.metadata.at("config").get<LMConfig>(), 0);
  ar.load_parameters(lm.params_.items());
  const auto stored = ar.metadata.at("checksum").get<std::string>();
  if (stored != compute::hex64(lm.checksum())) {
    throw ParseError("CausalLM: checksum mismatch in " + path.string(), 0);
  }
  if (ar.metadata.value("frozen", false)) lm.freeze();
  return lm;
}

}  // namespace lasttok::textlm
