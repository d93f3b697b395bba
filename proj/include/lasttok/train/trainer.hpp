#pragma once

// Training loops. Every optimizer step draws batch_size * accum_steps crops,
// builds one graph per crop and backpropagates it immediately, so gradients
// are summed in a fixed sample order regardless of how the step is split
// into micro-batches. The LM term is averaged over the crops that keep at
// least two tokens after dedup; the other terms over all crops.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lasttok/compute/rng.hpp"
#include "lasttok/kmeans/kmeans.hpp"
#include "lasttok/synth/corpus.hpp"
#include "lasttok/synth/world.hpp"
#include "lasttok/textlm/adapters.hpp"
#include "lasttok/textlm/causal_lm.hpp"
#include "lasttok/tok/last_model.hpp"
#include "lasttok/train/adamw.hpp"
#include "lasttok/train/schedule.hpp"

namespace lasttok::train {

struct MetricsRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double lm_loss = 0.0;
  double recon_loss = 0.0;
  double codebook_loss = 0.0;
  double commit_loss = 0.0;
  /// exp(entropy) of the frame tokens seen this step.
  double codebook_perplexity = 0.0;
  double grad_norm = 0.0;
  /// Mean token count per crop after dedup.
  double mean_tokens = 0.0;
  std::size_t lm_samples = 0;
  /// Crops with fewer than two tokens after dedup.
  std::size_t skipped = 0;
  std::size_t reseeded = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);
void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Defaults for text LM pretraining: shorter, higher learning rate.
TrainConfig text_lm_defaults();

/// Fixed held-out sentences (word ids) for checking the text LM.
std::vector<std::vector<int>> heldout_sentences(const synth::World& world, std::size_t count, std::uint64_t seed);

/// Trains the causal LM on grammar sentences; batch_size * accum_steps
/// sentences per step. Returns one metrics row per step.
std::vector<MetricsRow> pretrain_text_lm(textlm::CausalLM& lm, const synth::World& world, const TrainConfig& config);

/// Encodes frames with the untrained encoder and sets the codebook to k-means
/// centroids of up to max_frames of those latents.
void init_codebook_kmeans(tok::LastModel& model, const std::vector<synth::Utterance>& corpus,
                          std::size_t max_frames, std::uint64_t seed);

class Trainer {
 public:
  /// Tokenizer training: encoder, codebook, decoder and adapters learn; in
  /// finetune mode the LM learns too.
  Trainer(tok::LastModel& model, textlm::CausalLM& lm, const std::vector<synth::Utterance>& corpus,
          const TrainConfig& config, const tok::LossWeights& weights);
  /// Unit LM over a fixed tokenizer, trained with the LM loss alone. A lookup
  /// table shared with the tokenizer is frozen for the run.
  Trainer(const tok::FrameTokenizer& tokenizer, textlm::SpeechAdapters& adapters, textlm::CausalLM& lm,
          const std::vector<synth::Utterance>& corpus, const TrainConfig& config);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Called after every completed step.
  std::function<void(const MetricsRow&)> progress;

  bool is_tokenizer_run() const { return model_ != nullptr; }
  const TrainConfig& config() const { return config_; }
  std::size_t current_step() const { return step_; }
  const std::vector<MetricsRow>& log() const { return log_; }
  const std::vector<compute::ParamPtr>& trainable() const { return optimizer_.parameters(); }
  /// Hash of everything that must match for a resume to be valid.
  std::string config_hash() const;

  /// One optimizer step. Throws TrainingAbort on a non-finite loss or
  /// gradient (parameters are left at their last good values) and on frozen
  /// LM drift.
  MetricsRow step();

  /// Runs until current_step() == until (capped at max_steps). With a
  /// non-empty out_dir, writes metrics.csv there and checkpoint.ckpt every
  /// checkpoint_every steps, at the end, and before rethrowing an abort.
  void run(std::size_t until, const std::filesystem::path& out_dir = {});

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, moments, RNG, counters and the metrics log. Throws
  /// ConfigError when the checkpoint was written under a different config.
  void resume(const std::filesystem::path& path);

  /// Gradients of one step without applying them (for equivalence checks):
  /// the trainable parameters' grad buffers hold the summed, normalised
  /// gradient afterwards. Draws the same crops step() would.
  void accumulate_only();

 private:
  struct Crop {
    std::size_t utterance = 0;
    std::size_t start = 0;
    std::size_t length = 0;
  };
  struct StepStats;

  std::vector<Crop> draw_crops();
  compute::Tensor crop_features(const Crop& crop) const;
  StepStats accumulate(const std::vector<Crop>& crops);
  void check_frozen() const;
  std::vector<compute::ParamPtr> checkpoint_parameters() const;

  tok::LastModel* model_ = nullptr;
  const tok::FrameTokenizer* tokenizer_ = nullptr;
  textlm::SpeechAdapters* adapters_ = nullptr;
  textlm::CausalLM& lm_;
  const std::vector<synth::Utterance>& corpus_;
  TrainConfig config_;
  tok::LossWeights weights_;
  AdamW optimizer_;
  Rng rng_;
  std::size_t step_ = 0;
  std::vector<std::size_t> idle_;
  std::vector<MetricsRow> log_;
  compute::ParamPtr frozen_lookup_;
  bool lookup_was_trainable_ = false;
  /// False between an update and its frozen-drift check.
  bool state_good_ = true;
};

/// Applies mode to lm and returns the parameters a tokenizer run optimizes.
std::vector<compute::ParamPtr> tokenizer_run_parameters(const tok::LastModel& model, textlm::CausalLM& lm,
                                                        textlm::LMMode mode);

}  // namespace lasttok::train
