#include "lasttok/train/schedule.hpp"

#include <cmath>
#include <numbers>

#include "lasttok/errors.hpp"

namespace lasttok::train {

void TrainConfig::validate() const {
  if (max_steps == 0) throw ConfigError("train: max_steps must be positive");
  if (warmup_steps >= max_steps) throw ConfigError("train: warmup_steps must be below max_steps");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (accum_steps == 0) throw ConfigError("train: accum_steps must be positive");
  if (!(peak_lr > 0.0) || !(final_lr > 0.0)) throw ConfigError("train: learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
  if (weight_decay < 0.0 || grad_clip < 0.0) throw ConfigError("train: weight_decay and grad_clip must be >= 0");
  if (crop_frames == 0) throw ConfigError("train: crop_frames must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"max_steps", c.max_steps},
       {"batch_size", c.batch_size},
       {"accum_steps", c.accum_steps},
       {"warmup_steps", c.warmup_steps},
       {"peak_lr", c.peak_lr},
       {"final_lr", c.final_lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"weight_decay", c.weight_decay},
       {"grad_clip", c.grad_clip},
       {"seed", c.seed},
       {"mode", textlm::to_string(c.mode)},
       {"crop_frames", c.crop_frames},
       {"pad_to_crop", c.pad_to_crop},
       {"dead_code_steps", c.dead_code_steps},
       {"codebook_init_frames", c.codebook_init_frames},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train: config must be a JSON object");
  nlohmann::json defaults;
  to_json(defaults, TrainConfig{});
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("train: unknown field '" + key + "'");
  }
  try {
    c.max_steps = j.value("max_steps", c.max_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.accum_steps = j.value("accum_steps", c.accum_steps);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.final_lr = j.value("final_lr", c.final_lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) c.mode = textlm::parse_mode(j.at("mode").get<std::string>());
    c.crop_frames = j.value("crop_frames", c.crop_frames);
    c.pad_to_crop = j.value("pad_to_crop", c.pad_to_crop);
    c.dead_code_steps = j.value("dead_code_steps", c.dead_code_steps);
    c.codebook_init_frames = j.value("codebook_init_frames", c.codebook_init_frames);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

double lr_at(std::size_t step, const TrainConfig& c) {
  if (step < c.warmup_steps) {
    return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  const double progress =
      static_cast<double>(step - c.warmup_steps) / static_cast<double>(c.max_steps - c.warmup_steps);
  return c.final_lr + 0.5 * (c.peak_lr - c.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace lasttok::train
