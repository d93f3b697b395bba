#include "lasttok/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lasttok/compute/checksum.hpp"
#include "lasttok/errors.hpp"

namespace lasttok::train {

using compute::NoGradGuard;
using compute::Tensor;
using compute::Var;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json row_to_json(const MetricsRow& r) {
  return nlohmann::json::array({r.step, r.lr, r.loss, r.lm_loss, r.recon_loss, r.codebook_loss, r.commit_loss,
                                r.codebook_perplexity, r.grad_norm, r.mean_tokens, r.lm_samples, r.skipped,
                                r.reseeded});
}

MetricsRow row_from_json(const nlohmann::json& j) {
  MetricsRow r;
  r.step = j.at(0).get<std::size_t>();
  r.lr = j.at(1).get<double>();
  r.loss = j.at(2).get<double>();
  r.lm_loss = j.at(3).get<double>();
  r.recon_loss = j.at(4).get<double>();
  r.codebook_loss = j.at(5).get<double>();
  r.commit_loss = j.at(6).get<double>();
  r.codebook_perplexity = j.at(7).get<double>();
  r.grad_norm = j.at(8).get<double>();
  r.mean_tokens = j.at(9).get<double>();
  r.lm_samples = j.at(10).get<std::size_t>();
  r.skipped = j.at(11).get<std::size_t>();
  r.reseeded = j.at(12).get<std::size_t>();
  return r;
}

double perplexity(const std::vector<std::uint64_t>& hist) {
  double total = 0.0;
  for (auto c : hist) total += static_cast<double>(c);
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (auto c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return std::exp(h);
}

const TrainConfig& validated(const TrainConfig& c) {
  c.validate();
  return c;
}

}  // namespace

std::string metrics_header() {
  return "step,lr,loss,lm_loss,recon_loss,codebook_loss,commit_loss,codebook_perplexity,grad_norm,mean_tokens,"
         "lm_samples,skipped,reseeded";
}

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream os;
  os << r.step << ',' << fmt(r.lr) << ',' << fmt(r.loss) << ',' << fmt(r.lm_loss) << ',' << fmt(r.recon_loss) << ','
     << fmt(r.codebook_loss) << ',' << fmt(r.commit_loss) << ',' << fmt(r.codebook_perplexity) << ','
     << fmt(r.grad_norm) << ',' << fmt(r.mean_tokens) << ',' << r.lm_samples << ',' << r.skipped << ',' << r.reseeded;
  return os.str();
}

void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << metrics_header() << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("metrics file not found: " + path.string());
  std::vector<MetricsRow> rows;
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || line != metrics_header()) throw ParseError("metrics: unexpected header", 0);
  offset += line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 13) throw ParseError("metrics: expected 13 columns", offset);
    try {
      MetricsRow r;
      r.step = std::stoull(cells[0]);
      r.lr = std::stod(cells[1]);
      r.loss = std::stod(cells[2]);
      r.lm_loss = std::stod(cells[3]);
      r.recon_loss = std::stod(cells[4]);
      r.codebook_loss = std::stod(cells[5]);
      r.commit_loss = std::stod(cells[6]);
      r.codebook_perplexity = std::stod(cells[7]);
      r.grad_norm = std::stod(cells[8]);
      r.mean_tokens = std::stod(cells[9]);
      r.lm_samples = std::stoull(cells[10]);
      r.skipped = std::stoull(cells[11]);
      r.reseeded = std::stoull(cells[12]);
      rows.push_back(r);
    } catch (const std::exception&) {
      throw ParseError("metrics: bad number", offset);
    }
    offset += line.size() + 1;
  }
  return rows;
}

TrainConfig text_lm_defaults() {
  TrainConfig c;
  c.max_steps = 1500;
  c.batch_size = 16;
  c.accum_steps = 1;
  c.warmup_steps = 100;
  c.peak_lr = 1e-3;
  c.final_lr = 1e-4;
  c.mode = textlm::LMMode::finetune;
  return c;
}

std::vector<std::vector<int>> heldout_sentences(const synth::World& world, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(world.grammar.sample(rng));
  return out;
}

std::vector<MetricsRow> pretrain_text_lm(textlm::CausalLM& lm, const synth::World& world, const TrainConfig& config) {
  config.validate();
  lm.unfreeze();
  AdamW opt(lm.parameters(), config);
  Rng rng(config.seed);
  std::vector<MetricsRow> log;
  const std::size_t n = config.batch_size * config.accum_steps;
  for (std::size_t step = 0; step < config.max_steps; ++step) {
    opt.zero_grad();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ids = lm.encode_sentence(world.grammar.sample(rng));
      const std::span<const int> all(ids);
      const Var ce = compute::cross_entropy(lm.text_logits(all.first(all.size() - 1)), all.subspan(1));
      total += ce.value().item();
      try {
        compute::backward(compute::scale(ce, 1.0 / static_cast<double>(n)));
      } catch (const compute::NonFiniteGradient& e) {
        throw TrainingAbort(std::string("text LM: ") + e.what());
      }
    }
    MetricsRow row;
    row.step = step + 1;
    row.lr = lr_at(step + 1, config);
    row.grad_norm = opt.grad_norm();
    if (!std::isfinite(total) || !std::isfinite(row.grad_norm)) {
      throw TrainingAbort("text LM: non-finite loss at step " + std::to_string(step + 1));
    }
    opt.step(row.lr);
    row.lm_loss = row.loss = total / static_cast<double>(n);
    row.lm_samples = n;
    log.push_back(row);
  }
  return log;
}

void init_codebook_kmeans(tok::LastModel& model, const std::vector<synth::Utterance>& corpus,
                          std::size_t max_frames, std::uint64_t seed) {
  const std::size_t d = model.code_dim();
  std::vector<double> rows;
  {
    NoGradGuard no_grad;
    for (const auto& u : corpus) {
      if (rows.size() / d >= max_frames) break;
      const Tensor lat = model.latents(u.features);
      const std::size_t take = std::min(lat.rows(), max_frames - rows.size() / d);
      rows.insert(rows.end(), lat.row(0), lat.row(0) + take * d);
    }
  }
  const std::size_t n = rows.size() / d;
  const std::size_t k = model.vocab_size();
  if (n < k) {
    throw ConfigError("codebook init: " + std::to_string(n) + " latent frames for " + std::to_string(k) + " codes");
  }
  kmeans::FitOptions opts;
  opts.k = k;
  opts.seed = seed;
  const auto fitted = kmeans::fit(Tensor({n, d}, std::move(rows)), opts);
  model.codebook().codes()->value = fitted.centroids();
}

std::vector<compute::ParamPtr> tokenizer_run_parameters(const tok::LastModel& model, textlm::CausalLM& lm,
                                                        textlm::LMMode mode) {
  textlm::apply_mode(lm, mode);
  auto params = model.parameters();
  if (mode == textlm::LMMode::finetune) {
    params.insert(params.end(), lm.parameters().begin(), lm.parameters().end());
  }
  return params;
}

namespace {

std::vector<compute::ParamPtr> unit_lm_parameters(const textlm::SpeechAdapters& adapters, textlm::CausalLM& lm,
                                                  textlm::LMMode mode) {
  textlm::apply_mode(lm, mode);
  auto params = adapters.parameters();
  if (mode == textlm::LMMode::finetune) {
    params.insert(params.end(), lm.parameters().begin(), lm.parameters().end());
  }
  return params;
}

}  // namespace

Trainer::Trainer(tok::LastModel& model, textlm::CausalLM& lm, const std::vector<synth::Utterance>& corpus,
                 const TrainConfig& config, const tok::LossWeights& weights)
    : model_(&model),
      tokenizer_(&model),
      lm_(lm),
      corpus_(corpus),
      config_(validated(config)),
      weights_(weights),
      optimizer_(tokenizer_run_parameters(model, lm, config.mode), config),
      rng_(config.seed),
      idle_(model.vocab_size(), 0) {
  if (corpus_.empty()) throw ConfigError("train: empty corpus");
  if (weights.recon < 0 || weights.codebook < 0 || weights.commit < 0) {
    throw ConfigError("train: loss weights must be >= 0");
  }
}

Trainer::Trainer(const tok::FrameTokenizer& tokenizer, textlm::SpeechAdapters& adapters, textlm::CausalLM& lm,
                 const std::vector<synth::Utterance>& corpus, const TrainConfig& config)
    : tokenizer_(&tokenizer),
      adapters_(&adapters),
      lm_(lm),
      corpus_(corpus),
      config_(validated(config)),
      optimizer_(unit_lm_parameters(adapters, lm, config.mode), config),
      rng_(config.seed) {
  if (corpus_.empty()) throw ConfigError("train: empty corpus");
  if (tokenizer.vocab_size() != adapters.config().codebook_size) {
    throw ConfigError("train: tokenizer vocabulary " + std::to_string(tokenizer.vocab_size()) +
                      " differs from adapter vocabulary " + std::to_string(adapters.config().codebook_size));
  }
  if (!adapters.owns_lookup()) {
    frozen_lookup_ = adapters.lookup();
    lookup_was_trainable_ = frozen_lookup_->trainable;
    frozen_lookup_->trainable = false;
  }
}

Trainer::~Trainer() {
  if (frozen_lookup_) frozen_lookup_->trainable = lookup_was_trainable_;
}

std::string Trainer::config_hash() const {
  nlohmann::json j;
  nlohmann::json train = config_;
  train.erase("checkpoint_every");
  j["train"] = train;
  j["lm"] = lm_.config();
  j["corpus"] = corpus_.size();
  if (model_) {
    j["kind"] = "tokenizer";
    j["tokenizer"] = model_->config();
    j["adapters"] = model_->adapters().config();
    j["weights"] = weights_;
  } else {
    j["kind"] = "unit_lm";
    j["adapters"] = adapters_->config();
    j["tokenizer_vocab"] = tokenizer_->vocab_size();
  }
  compute::Fnv1a h;
  h.update(j.dump());
  return compute::hex64(h.digest());
}

std::vector<Trainer::Crop> Trainer::draw_crops() {
  std::vector<Crop> crops(config_.batch_size * config_.accum_steps);
  for (auto& c : crops) {
    c.utterance = rng_.index(corpus_.size());
    const std::size_t frames = corpus_[c.utterance].frames();
    c.length = std::min(frames, config_.crop_frames);
    c.start = frames > config_.crop_frames ? rng_.index(frames - config_.crop_frames + 1) : 0;
  }
  return crops;
}

Tensor Trainer::crop_features(const Crop& crop) const {
  const Tensor& f = corpus_[crop.utterance].features;
  const std::size_t rows = (model_ && config_.pad_to_crop) ? std::max(crop.length, config_.crop_frames) : crop.length;
  Tensor out({rows, f.cols()});
  std::copy(f.row(crop.start), f.row(crop.start) + crop.length * f.cols(), out.row(0));
  return out;
}

struct Trainer::StepStats {
  double lm_sum = 0.0, recon_sum = 0.0, codebook_sum = 0.0, commit_sum = 0.0;
  std::size_t samples = 0, lm_samples = 0, tokens = 0;
  std::vector<std::uint64_t> hist;
  std::vector<double> latents;
};

Trainer::StepStats Trainer::accumulate(const std::vector<Crop>& crops) {
  const std::size_t n = crops.size();
  StepStats stats;
  stats.samples = n;
  stats.hist.assign(tokenizer_->vocab_size(), 0);

  // Tokenize first so the LM term can be normalised by the number of crops
  // that actually contribute to it.
  std::vector<Tensor> feats(n);
  std::vector<std::vector<int>> tokens(n);
  for (std::size_t i = 0; i < n; ++i) {
    feats[i] = crop_features(crops[i]);
    NoGradGuard no_grad;
    std::vector<int> codes;
    if (model_) {
      const std::size_t mask = crops[i].length < feats[i].rows() ? crops[i].length : 0;
      Tensor u = model_->encode(compute::constant(feats[i]), mask).value();
      if (mask) u = u.slice_rows(0, crops[i].length);
      codes = model_->codebook().assign(u);
      stats.latents.insert(stats.latents.end(), u.data().begin(), u.data().end());
    } else {
      codes = tokenizer_->frame_tokens(feats[i]);
    }
    for (int z : codes) ++stats.hist[static_cast<std::size_t>(z)];
    tokens[i] = tok::dedup(codes);
    stats.tokens += tokens[i].size();
    if (tokens[i].size() >= 2) ++stats.lm_samples;
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_lm = stats.lm_samples ? 1.0 / static_cast<double>(stats.lm_samples) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Var loss;
    if (model_) {
      const auto parts = model_->losses(feats[i], crops[i].length, lm_, weights_, true);
      if (parts.lm_valid != (tokens[i].size() >= 2)) throw std::logic_error("trainer: tokenization pass diverged");
      loss = compute::scale(parts.aux, inv_n);
      if (parts.lm_valid) {
        loss = compute::add(compute::scale(parts.lm, inv_lm), loss);
        stats.lm_sum += parts.lm.value().item();
      }
      stats.recon_sum += parts.recon.value().item();
      stats.codebook_sum += parts.codebook.value().item();
      stats.commit_sum += parts.commit.value().item();
    } else {
      if (tokens[i].size() < 2) continue;
      const std::span<const int> t(tokens[i]);
      const Var ce = compute::cross_entropy(adapters_->logits(t.first(t.size() - 1), lm_), t.subspan(1));
      stats.lm_sum += ce.value().item();
      loss = compute::scale(ce, inv_lm);
    }
    if (!std::isfinite(loss.value().item())) {
      optimizer_.zero_grad();
      throw TrainingAbort("non-finite loss at step " + std::to_string(step_ + 1));
    }
    try {
      compute::backward(loss);
    } catch (const compute::NonFiniteGradient& e) {
      optimizer_.zero_grad();
      throw TrainingAbort("step " + std::to_string(step_ + 1) + ": " + e.what());
    }
  }
  return stats;
}

void Trainer::check_frozen() const {
  if (lm_.frozen() && lm_.frozen_checksum() && lm_.checksum() != *lm_.frozen_checksum()) {
    throw TrainingAbort("frozen LM parameters changed at step " + std::to_string(step_));
  }
}

void Trainer::accumulate_only() {
  const auto crops = draw_crops();
  optimizer_.zero_grad();
  accumulate(crops);
}

MetricsRow Trainer::step() {
  if (step_ >= config_.max_steps) throw std::logic_error("trainer: max_steps reached");
  const auto crops = draw_crops();
  optimizer_.zero_grad();
  const StepStats stats = accumulate(crops);

  MetricsRow row;
  row.step = step_ + 1;
  row.lr = lr_at(step_ + 1, config_);
  row.grad_norm = optimizer_.grad_norm();
  if (!std::isfinite(row.grad_norm)) {
    optimizer_.zero_grad();
    throw TrainingAbort("non-finite gradient norm at step " + std::to_string(step_ + 1));
  }
  state_good_ = false;
  optimizer_.step(row.lr);
  ++step_;

  if (model_) {
    const auto& codes = model_->codebook().codes();
    const std::size_t d = codes->value.cols();
    const std::size_t rows = stats.latents.size() / d;
    for (std::size_t k = 0; k < idle_.size(); ++k) {
      idle_[k] = stats.hist[k] > 0 ? 0 : idle_[k] + 1;
      if (config_.dead_code_steps == 0 || idle_[k] < config_.dead_code_steps || rows == 0) continue;
      const std::size_t r = rng_.index(rows);
      std::copy_n(stats.latents.data() + r * d, d, codes->value.row(k));
      optimizer_.reset_row(*codes, k);
      idle_[k] = 0;
      ++row.reseeded;
    }
  }
  check_frozen();
  state_good_ = true;

  const double n = static_cast<double>(stats.samples);
  row.lm_samples = stats.lm_samples;
  row.skipped = stats.samples - stats.lm_samples;
  row.lm_loss = stats.lm_samples ? stats.lm_sum / static_cast<double>(stats.lm_samples) : 0.0;
  row.recon_loss = stats.recon_sum / n;
  row.codebook_loss = stats.codebook_sum / n;
  row.commit_loss = stats.commit_sum / n;
  row.loss = row.lm_loss;
  if (model_) {
    row.loss += weights_.recon * row.recon_loss + weights_.codebook * row.codebook_loss +
                weights_.commit * row.commit_loss;
  }
  row.codebook_perplexity = perplexity(stats.hist);
  row.mean_tokens = static_cast<double>(stats.tokens) / n;
  log_.push_back(row);
  if (progress) progress(row);
  return row;
}

void Trainer::run(std::size_t until, const std::filesystem::path& out_dir) {
  until = std::min(until, config_.max_steps);
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  auto flush = [&] {
    if (out_dir.empty()) return;
    write_metrics(out_dir / "metrics.csv", log_);
    save_checkpoint(out_dir / "checkpoint.ckpt");
  };
  while (step_ < until) {
    try {
      step();
    } catch (const TrainingAbort&) {
      if (!out_dir.empty()) {
        write_metrics(out_dir / "metrics.csv", log_);
        if (state_good_) save_checkpoint(out_dir / "checkpoint.ckpt");
      }
      throw;
    }
    if (config_.checkpoint_every && step_ % config_.checkpoint_every == 0 && step_ < until) flush();
  }
  flush();
}

std::vector<compute::ParamPtr> Trainer::checkpoint_parameters() const {
  std::vector<compute::ParamPtr> params = model_ ? model_->parameters() : adapters_->parameters();
  if (config_.mode == textlm::LMMode::finetune) {
    params.insert(params.end(), lm_.parameters().begin(), lm_.parameters().end());
  }
  return params;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  io::TensorArchive archive;
  auto& meta = archive.metadata;
  meta["kind"] = model_ ? "tokenizer" : "unit_lm";
  meta["step"] = step_;
  meta["config_hash"] = config_hash();
  meta["train"] = config_;
  meta["rng"] = rng_.state();
  meta["idle"] = idle_;
  if (model_) meta["usage"] = model_->codebook().usage();
  nlohmann::json log = nlohmann::json::array();
  for (const auto& r : log_) log.push_back(row_to_json(r));
  meta["log"] = std::move(log);
  archive.put_parameters(checkpoint_parameters(), "param/");
  optimizer_.save(archive);
  archive.save(path);
}

void Trainer::resume(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("checkpoint not found: " + path.string());
  const auto archive = io::TensorArchive::load(path);
  const auto& meta = archive.metadata;
  const std::string expected = config_hash();
  const std::string found = meta.value("config_hash", std::string{});
  if (found != expected) {
    throw ConfigError("checkpoint " + path.string() + " was written under config " + found + ", current config is " +
                      expected);
  }
  archive.load_parameters(checkpoint_parameters(), "param/");
  optimizer_.load(archive);
  rng_.set_state(meta.at("rng").get<std::string>());
  step_ = meta.at("step").get<std::size_t>();
  idle_ = meta.at("idle").get<std::vector<std::size_t>>();
  if (model_) model_->codebook().set_usage(meta.at("usage").get<std::vector<std::uint64_t>>());
  log_.clear();
  for (const auto& r : meta.at("log")) log_.push_back(row_from_json(r));
  if (lm_.frozen()) check_frozen();
}

}  // namespace lasttok::train
