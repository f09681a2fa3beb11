#pragma once

#include "crkt/model.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace crkt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossConfig {
  double alpha = 0.1;  // weight of the top-k relevance loss
  double beta = 0.1;   // weight of the contrastive loss
  double flip_rate = 0.8;
  double band_low = 0.4;  // base-question correct-rate band, inclusive
  double band_high = 0.6;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 200;
  int patience = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
  // Reuse the epoch-0 augmentation for every epoch.
  bool freeze_augmentation = false;
  double validation_fraction = 0.1;
  int max_len = 200;
  int min_len = 5;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
};

void validate(const LossConfig& c);
void validate(const TrainConfig& c);

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

// Sections "model", "loss" and "train"; missing keys keep their defaults and
// unknown keys are rejected. Throws ConfigError.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& c);

// A value given as a list is a grid axis; the result is the cartesian product
// in row-major order of the axes as they appear in the file.
std::vector<RunConfig> expand_grid(const std::string& text);

std::string read_text_file(const std::string& path);

}  // namespace crkt
