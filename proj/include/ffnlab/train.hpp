#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ffnlab/model.hpp"
#include "ffnlab/span_data.hpp"

namespace ffnlab {

struct ScheduleConfig {
  int64_t total_steps = 10000;
  int64_t warmup_steps = 1000;
  double decay_fraction = 0.10;
  void validate() const;
};

// 1/sqrt(max(step, warmup)), multiplied by the linear ramp
// (total - step) / (decay_fraction * total) inside the final decay window.
double learning_rate(int64_t step, const ScheduleConfig& schedule);

enum class OptimizerKind { Adafactor, Sgd };

// Adafactor with factored second moments for matrices and full second
// moments for vectors. Update clipping threshold d=1.0, decay exponent 0.8,
// regularizers eps1=1e-30 (second moment) and eps2=1e-3.
class Adafactor {
 public:
  struct Options {
    double decay_exponent = 0.8;
    double clip_threshold = 1.0;
    double eps1 = 1e-30;
    double eps2 = 1e-3;
  };

  Adafactor() = default;
  explicit Adafactor(const Options& options) : options_(options) {}

  // Applies one update to every parameter from its populated grad, then
  // clears the grads. Throws (naming the parameter) on NaN gradients.
  void step(std::vector<std::pair<std::string, Tensor>>& params, double lr);
  int64_t step_count() const { return step_; }

 private:
  struct State {
    std::vector<double> row;   // factored: row means EMA
    std::vector<double> col;   // factored: col means EMA
    std::vector<double> full;  // vectors/scalars
  };
  Options options_;
  int64_t step_ = 0;
  std::vector<State> states_;
};

void sgd_step(std::vector<std::pair<std::string, Tensor>>& params, double lr);

struct StepRecord {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> heldout_log_ppl;
};

struct TrainReport {
  std::vector<StepRecord> trace;
  double final_heldout_log_ppl = 0.0;
  double wall_seconds = 0.0;
  uint64_t seed = 0;
  bool diverged = false;
  int64_t diverged_at_step = -1;
};

struct TrainOptions {
  int64_t steps = 2000;
  int64_t eval_interval = 0;  // 0: max(steps / 20, 50)
  OptimizerKind optimizer = OptimizerKind::Adafactor;
  Precision train_precision = Precision::F32;
  int64_t effective_eval_interval() const {
    if (eval_interval > 0) return eval_interval;
    return std::max<int64_t>(steps / 20, 50);
  }
};

// Mean NLL (natural log) per non-pad target token over all heldout batches.
// Always evaluated at 64-bit.
double heldout_log_perplexity(const TransformerModel& model,
                              const SpanDataset& data);

// Cross-entropy loss of one batch, pad positions masked out of both the sum
// and the token count. Returns the mean-per-token loss tensor on the tape.
Tensor batch_loss(const TransformerModel& model, const Batch& batch);

// Deterministic given (configs, seed): seed drives model init and span
// corruption; the corpus seed lives in DataConfig.
TrainReport train(const ModelConfig& model_config, const DataConfig& data_config,
                  const ScheduleConfig& schedule, const TrainOptions& options,
                  uint64_t seed, TransformerModel* trained_model = nullptr,
                  const std::string& progress_tag = "");

struct VarianceResult {
  double mean = 0.0;
  double stddev = 0.0;  // sample stddev, n-1 denominator
  std::vector<double> per_seed;       // finals of the runs that converged
  std::vector<uint64_t> seeds_used;
  std::vector<uint64_t> seeds_diverged;
};

VarianceResult variance_study(const ModelConfig& model_config,
                              const DataConfig& data_config,
                              const ScheduleConfig& schedule,
                              const TrainOptions& options,
                              const std::vector<uint64_t>& seeds);

struct VariantResult {
  FfnVariant variant;
  int64_t d_ff = 0;
  int64_t ffn_params = 0;
  VarianceResult stats;
};

struct ComparisonReport {
  std::vector<VariantResult> rows;
  std::string table_text() const;  // aligned text, "mean (stddev)" column
  std::string csv() const;  // variant,d_ff,params,mean_log_ppl,stddev_log_ppl,n_seeds
};

// Throws before any training if the per-layer FFN parameter counts differ
// across the listed variants.
void assert_parameter_parity(const std::vector<FfnVariant>& variants,
                             int64_t d_model, int64_t d_ff_base);

ComparisonReport compare_variants(const ModelConfig& base_config,
                                  const DataConfig& data_config,
                                  const ScheduleConfig& schedule,
                                  const TrainOptions& options,
                                  const std::vector<FfnVariant>& variants,
                                  const std::vector<uint64_t>& seeds,
                                  int jobs = 1);

// Metrics CSV: step,loss,lr,heldout_log_ppl (heldout blank off-interval).
std::string metrics_csv(const TrainReport& report);

// Max relative finite-difference error over every parameter of a tiny model
// built from `config`, against the tape gradients of one batch loss.
double model_gradient_check(const ModelConfig& config, const Batch& batch,
                            double eps);

}  // namespace ffnlab
