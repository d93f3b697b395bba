#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "lasttok/textlm/adapters.hpp"

namespace lasttok::train {

struct TrainConfig {
  std::size_t max_steps = 5000;
  /// Samples per micro-batch; one optimizer step sees batch_size * accum_steps.
  std::size_t batch_size = 16;
  std::size_t accum_steps = 2;
  std::size_t warmup_steps = 250;
  double peak_lr = 3e-4;
  double final_lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  textlm::LMMode mode = textlm::LMMode::pretrain;
  std::size_t crop_frames = 128;
  /// Right-pad every crop with zero frames to crop_frames (masked).
  bool pad_to_crop = false;
  /// Codes unused for this many consecutive steps are reseeded; 0 disables.
  std::size_t dead_code_steps = 500;
  /// Encoder outputs fed to the k-means codebook initialisation; 0 keeps
  /// the random codebook.
  std::size_t codebook_init_frames = 10000;
  std::size_t checkpoint_every = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Linear warmup from 0 to peak_lr over warmup_steps, then cosine decay to
/// final_lr at max_steps. The update that completes step s uses lr_at(s).
double lr_at(std::size_t step, const TrainConfig& config);

}  // namespace lasttok::train
