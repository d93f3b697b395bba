#include "lasttok/tok/last_model.hpp"

#include <stdexcept>

#include "lasttok/errors.hpp"

namespace lasttok::tok {

using compute::Tensor;

void to_json(nlohmann::json& j, const TokenizerConfig& c) {
  j = {{"feature_dim", c.feature_dim},
       {"codebook_size", c.codebook_size},
       {"n_enc", c.n_enc},
       {"n_dec", c.n_dec},
       {"heads", c.heads},
       {"decoder_on_quantized", c.decoder_on_quantized},
       {"codebook_lm_grad", c.codebook_lm_grad}};
}

void from_json(const nlohmann::json& j, TokenizerConfig& c) {
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.codebook_size = j.at("codebook_size").get<std::size_t>();
  c.n_enc = j.at("n_enc").get<std::size_t>();
  c.n_dec = j.at("n_dec").get<std::size_t>();
  c.heads = j.value("heads", std::size_t{2});
  c.decoder_on_quantized = j.value("decoder_on_quantized", false);
  c.codebook_lm_grad = j.value("codebook_lm_grad", false);
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"recon", w.recon}, {"codebook", w.codebook}, {"commit", w.commit}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.recon = j.value("recon", 1.0);
  w.codebook = j.value("codebook", 1.0);
  w.commit = j.value("commit", 0.25);
}

Codebook::Codebook(ParamPtr codes) : codes_(std::move(codes)), usage_(codes_->value.rows(), 0) {}

std::vector<int> Codebook::assign(const Tensor& u) const {
  if (u.cols() != dim()) {
    throw compute::ShapeError("codebook: query dim " + std::to_string(u.cols()) + " != " + std::to_string(dim()));
  }
  std::vector<int> out(u.rows());
  for (std::size_t t = 0; t < u.rows(); ++t) out[t] = nearest_row(codes_->value, u.row(t));
  return out;
}

void Codebook::record(std::span<const int> codes) {
  for (int z : codes) ++usage_.at(static_cast<std::size_t>(z));
}

Quantized quantize(const Var& u, Codebook& codebook, bool grad_to_codes, bool record_usage, const VqPoint* at) {
  if (u.rows() == 0) throw std::invalid_argument("quantize: empty input");
  Quantized out;
  if (at) {
    if (at->codes.size() != u.rows() || at->latents.shape() != u.shape()) {
      throw compute::ShapeError("quantize: linearisation point does not match the input");
    }
    out.codes = at->codes;
  } else {
    out.codes = codebook.assign(u.value());
  }
  if (record_usage) codebook.record(out.codes);
  out.quantized = compute::gather_rows(compute::param(codebook.codes()), out.codes);
  Var held_u = compute::stop_gradient(u), held_q = compute::stop_gradient(out.quantized);
  if (at) {
    held_u = compute::constant(at->latents);
    held_q = compute::constant(at->quantized);
    out.straight = compute::add(compute::sub(u, held_u), grad_to_codes ? out.quantized : held_q);
  } else {
    out.straight = compute::straight_through(u, out.quantized, grad_to_codes);
  }
  const double inv_t = 1.0 / static_cast<double>(u.rows());
  out.codebook_loss = compute::scale(compute::sum_squares(compute::sub(held_u, out.quantized)), inv_t);
  out.commit_loss = compute::scale(compute::sum_squares(compute::sub(u, held_q)), inv_t);
  return out;
}

Var lm_loss(const Var& rows, std::span<const int> tokens, const textlm::SpeechAdapters& adapters,
            const textlm::CausalLM& lm) {
  const std::size_t n = tokens.size();
  if (n < 2) throw std::invalid_argument("lm_loss: need at least two tokens");
  if (rows.rows() != n) throw compute::ShapeError("lm_loss: rows do not match tokens");
  const Var logits = adapters.logits(compute::slice_rows(rows, 0, n - 1), lm);
  return compute::cross_entropy(logits, tokens.subspan(1));
}

Var recon_loss(const Var& reconstruction, const Var& target) { return compute::mse(reconstruction, target); }

Encoder::Encoder(textlm::ParamList& params, std::size_t feature_dim, std::size_t code_dim, std::size_t layers,
                 std::size_t heads, Rng& rng) {
  for (std::size_t i = 0; i < layers; ++i) {
    blocks_.push_back(textlm::TransformerBlock::make(params, "tok.enc." + std::to_string(i), feature_dim, heads,
                                                     false, layers, rng));
  }
  proj_ = textlm::Linear::make(params, "tok.enc.proj", feature_dim, code_dim, rng);
}

Var Encoder::operator()(const Var& features, std::size_t valid_rows) const {
  return proj_(textlm::run_blocks(blocks_, features, valid_rows));
}

Decoder::Decoder(textlm::ParamList& params, std::size_t code_dim, std::size_t feature_dim, std::size_t layers,
                 std::size_t heads, Rng& rng) {
  proj_ = textlm::Linear::make(params, "tok.dec.proj", code_dim, feature_dim, rng);
  for (std::size_t i = 0; i < layers; ++i) {
    blocks_.push_back(textlm::TransformerBlock::make(params, "tok.dec." + std::to_string(i), feature_dim, heads,
                                                     false, layers, rng));
  }
}

Var Decoder::operator()(const Var& latents, std::size_t valid_rows) const {
  return textlm::run_blocks(blocks_, proj_(latents), valid_rows);
}

namespace {

const TokenizerConfig& checked(const TokenizerConfig& c, const textlm::AdapterConfig& a,
                               const textlm::LMConfig& lm) {
  if (c.feature_dim == 0) throw ConfigError("tokenizer: feature_dim must be positive");
  if (c.codebook_size < 2) throw ConfigError("tokenizer: codebook_size must be at least 2");
  if (c.heads == 0 || c.feature_dim % c.heads != 0) {
    throw ConfigError("tokenizer: heads must divide feature_dim");
  }
  if (a.codebook_size != c.codebook_size) throw ConfigError("tokenizer: adapter vocabulary differs from codebook");
  if (a.code_dim != lm.model_dim) throw ConfigError("tokenizer: code_dim must equal the LM model_dim");
  return c;
}

ParamPtr make_codebook(textlm::ParamList& params, const TokenizerConfig& c, std::size_t code_dim, Rng& rng) {
  return params.add("tok.codebook", textlm::normal_tensor({c.codebook_size, code_dim}, 1.0, rng));
}

}  // namespace

// Each sub-module gets its own stream so the adapter init does not depend on
// the encoder depth.
LastModel::LastModel(const TokenizerConfig& config, const textlm::AdapterConfig& adapters,
                     const textlm::LMConfig& lm, std::uint64_t seed)
    : config_(checked(config, adapters, lm)),
      lm_config_(lm),
      encoder_([&] {
        Rng rng(seed);
        return Encoder(params_, config_.feature_dim, adapters.code_dim, config_.n_enc, config_.heads, rng);
      }()),
      codebook_([&] {
        Rng rng(seed + 1);
        return make_codebook(params_, config_, adapters.code_dim, rng);
      }()),
      decoder_([&] {
        Rng rng(seed + 2);
        return Decoder(params_, adapters.code_dim, config_.feature_dim, config_.n_dec, config_.heads, rng);
      }()),
      adapters_(adapters, lm, codebook_.codes(), seed + 3) {}

LossParts LastModel::losses(const Tensor& features, std::size_t valid_rows, const textlm::CausalLM& lm,
                            const LossWeights& weights, bool record_usage, const VqPoint* at) {
  const std::size_t T = features.rows();
  if (valid_rows == 0 || valid_rows > T) valid_rows = T;
  const std::size_t mask = valid_rows < T ? valid_rows : 0;

  Var u = encode(compute::constant(features), mask);
  if (valid_rows < T) u = compute::slice_rows(u, 0, valid_rows);
  Var target = compute::constant(features);
  if (valid_rows < T) target = compute::slice_rows(target, 0, valid_rows);

  Quantized q = quantize(u, codebook_, config_.codebook_lm_grad, record_usage, at);
  LossParts out;
  out.codes = q.codes;
  out.latents = u.value();
  out.codebook = q.codebook_loss;
  out.commit = q.commit_loss;
  out.recon = recon_loss(decode(config_.decoder_on_quantized ? q.straight : u), target);

  out.aux = compute::add(compute::scale(out.recon, weights.recon),
                         compute::add(compute::scale(out.codebook, weights.codebook),
                                      compute::scale(out.commit, weights.commit)));
  Var total = out.aux;
  const DedupResult d = dedup_with_positions(q.codes);
  out.lm_tokens = d.tokens.size();
  if (d.tokens.size() >= 2) {
    const Var rows = compute::gather_rows(q.straight, d.positions);
    out.lm = lm_loss(rows, d.tokens, adapters_, lm);
    out.lm_valid = true;
    total = compute::add(out.lm, total);
  }
  out.total = total;
  return out;
}

VqPoint LastModel::vq_point(const Tensor& features, std::size_t valid_rows) const {
  compute::NoGradGuard no_grad;
  const std::size_t T = features.rows();
  if (valid_rows == 0 || valid_rows > T) valid_rows = T;
  Var u = encode(compute::constant(features), valid_rows < T ? valid_rows : 0);
  if (valid_rows < T) u = compute::slice_rows(u, 0, valid_rows);
  VqPoint p;
  p.codes = codebook_.assign(u.value());
  p.latents = u.value();
  p.quantized = compute::gather_rows(compute::constant(codebook_.codes()->value), p.codes).value();
  return p;
}

std::vector<int> LastModel::frame_tokens(const Tensor& features) const {
  compute::NoGradGuard no_grad;
  return codebook_.assign(encode(compute::constant(features)).value());
}

Tensor LastModel::latents(const Tensor& features) const {
  compute::NoGradGuard no_grad;
  return encode(compute::constant(features)).value();
}

std::vector<ParamPtr> LastModel::tokenizer_parameters() const { return params_.items(); }

std::vector<ParamPtr> LastModel::parameters() const {
  std::vector<ParamPtr> all = params_.items();
  const auto a = adapters_.parameters();
  all.insert(all.end(), a.begin(), a.end());
  return all;
}

void LastModel::save(const std::filesystem::path& path) const {
  io::TensorArchive ar;
  ar.metadata["kind"] = "last_tokenizer";
  ar.metadata["tokenizer"] = config_;
  ar.metadata["adapters"] = adapters_.config();
  ar.metadata["lm"] = lm_config_;
  ar.metadata["usage"] = codebook_.usage();
  ar.put_parameters(parameters(), "param/");
  ar.save(path);
}

std::unique_ptr<LastModel> LastModel::load(const std::filesystem::path& path) {
  const auto ar = io::TensorArchive::load(path);
  if (ar.metadata.value("kind", "") != "last_tokenizer") {
    throw ConfigError(path.string() + " is not a tokenizer checkpoint");
  }
  auto model = std::make_unique<LastModel>(ar.metadata.at("tokenizer").get<TokenizerConfig>(),
                                           ar.metadata.at("adapters").get<textlm::AdapterConfig>(),
                                           ar.metadata.at("lm").get<textlm::LMConfig>(), 0);
  ar.load_parameters(model->parameters(), "param/");
  if (ar.metadata.contains("usage")) {
    model->codebook_.set_usage(ar.metadata.at("usage").get<std::vector<std::uint64_t>>());
  }
  return model;
}

}  // namespace lasttok::tok
