#pragma once

#include <stdexcept>
#include <string>

#include "ffnlab/model.hpp"
#include "ffnlab/span_data.hpp"
#include "ffnlab/train.hpp"

namespace ffnlab {

// Thrown for bad flags, bad config files, bad values (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat key=value run configuration covering the model, data, schedule, and
// training loop. Unknown keys are rejected.
struct RunConfig {
  // model
  int64_t num_layers = 2;
  int64_t d_model = 64;
  int64_t num_heads = 4;
  int64_t d_kv = 16;
  int64_t d_ff_base = 192;
  int64_t vocab_size = 64;
  int64_t rel_pos_buckets = 32;
  int64_t rel_pos_max_distance = 128;
  std::string variant = "relu";
  // data
  uint64_t corpus_seed = 1;
  int64_t corpus_tokens = 262144;
  int64_t num_sentinels = 16;
  double corruption_rate = 0.15;
  double mean_span_length = 3.0;
  int64_t input_length = 64;
  int64_t target_length = 16;
  int64_t batch_size = 16;
  double heldout_fraction = 0.10;
  // schedule
  int64_t warmup_steps = 1000;
  double decay_fraction = 0.10;
  // training
  int64_t steps = 2000;
  uint64_t seed = 0;
  int64_t seeds = 4;          // seed count for compare/variance runs
  int64_t eval_interval = 0;  // 0 = auto: max(steps/20, 50)
  std::string optimizer = "adafactor";
  std::string precision = "f32";
  std::string out_dir = "out";

  void set(const std::string& key, const std::string& value);
  std::string serialize() const;

  static RunConfig from_file(const std::string& path);

  ModelConfig model_config() const;
  DataConfig data_config() const;
  ScheduleConfig schedule_config() const;
  TrainOptions train_options() const;
};

}  // namespace ffnlab
