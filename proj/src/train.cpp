#include "ffnlab/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace ffnlab {

namespace {

// Restores the precision mode on scope exit.
struct PrecisionScope {
  explicit PrecisionScope(Precision p) : prev(precision()) { set_precision(p); }
  ~PrecisionScope() { set_precision(prev); }
  Precision prev;
};

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ScheduleConfig::validate() const {
  if (!(warmup_steps > 0 && warmup_steps < total_steps)) {
    throw std::invalid_argument("schedule: need 0 < warmup_steps < total_steps");
  }
  if (!(decay_fraction > 0.0 && decay_fraction < 1.0)) {
    throw std::invalid_argument("schedule: decay_fraction must be in (0, 1)");
  }
}

double learning_rate(int64_t step, const ScheduleConfig& schedule) {
  schedule.validate();
  if (step < 0 || step > schedule.total_steps) {
    throw std::out_of_range("learning_rate: step " + std::to_string(step) +
                            " outside [0, " +
                            std::to_string(schedule.total_steps) + "]");
  }
  double base =
      1.0 / std::sqrt(static_cast<double>(std::max(step, schedule.warmup_steps)));
  double decay_start =
      (1.0 - schedule.decay_fraction) * static_cast<double>(schedule.total_steps);
  if (static_cast<double>(step) > decay_start) {
    base *= static_cast<double>(schedule.total_steps - step) /
            (schedule.decay_fraction * static_cast<double>(schedule.total_steps));
  }
  return base;
}

// ---- optimizers ------------------------------------------------------------

namespace {

void check_grad_finite(const std::string& name, const std::vector<double>& g) {
  for (double v : g) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("NaN/Inf gradient in parameter " + name);
    }
  }
}

}  // namespace

void Adafactor::step(std::vector<std::pair<std::string, Tensor>>& params,
                     double lr) {
  if (lr < 0) throw std::invalid_argument("adafactor: lr must be >= 0");
  if (states_.empty()) states_.resize(params.size());
  if (states_.size() != params.size()) {
    throw std::invalid_argument("adafactor: parameter list changed size");
  }
  ++step_;
  double beta2t = 1.0 - std::pow(static_cast<double>(step_), -options_.decay_exponent);

  std::vector<double> update;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, t] = params[pi];
    State& st = states_[pi];
    std::vector<double> zero;
    const std::vector<double>& g = t.has_grad() ? t.grad()
                                                : (zero.assign(t.size(), 0.0), zero);
    check_grad_finite(name, g);

    int64_t n = t.size();
    update.assign(static_cast<size_t>(n), 0.0);

    if (t.ndim() >= 2) {
      int64_t cols = t.shape().back();
      int64_t rows = n / cols;
      if (st.row.empty()) {
        st.row.assign(static_cast<size_t>(rows), 0.0);
        st.col.assign(static_cast<size_t>(cols), 0.0);
      }
      // EMA of row/col means of g^2 + eps1; V_ij = R_i C_j / mean(R).
      for (int64_t r = 0; r < rows; ++r) {
        double m = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
          double gg = g[r * cols + c];
          m += gg * gg + options_.eps1;
        }
        st.row[r] = beta2t * st.row[r] + (1.0 - beta2t) * (m / cols);
      }
      for (int64_t c = 0; c < cols; ++c) {
        double m = 0.0;
        for (int64_t r = 0; r < rows; ++r) {
          double gg = g[r * cols + c];
          m += gg * gg + options_.eps1;
        }
        st.col[c] = beta2t * st.col[c] + (1.0 - beta2t) * (m / rows);
      }
      double row_mean = 0.0;
      for (double r : st.row) row_mean += r;
      row_mean /= static_cast<double>(rows);
      for (int64_t r = 0; r < rows; ++r) {
        double rf = st.row[r] / row_mean;
        for (int64_t c = 0; c < cols; ++c) {
          update[r * cols + c] = g[r * cols + c] / std::sqrt(rf * st.col[c]);
        }
      }
    } else {
      if (st.full.empty()) st.full.assign(static_cast<size_t>(n), 0.0);
      for (int64_t i = 0; i < n; ++i) {
        st.full[i] = beta2t * st.full[i] +
                     (1.0 - beta2t) * (g[i] * g[i] + options_.eps1);
        update[i] = g[i] / std::sqrt(st.full[i]);
      }
    }

    double rms = 0.0;
    for (double u : update) rms += u * u;
    rms = std::sqrt(rms / static_cast<double>(n));
    double clip = std::max(1.0, rms / options_.clip_threshold);

    auto& data = t.mutable_data();
    for (int64_t i = 0; i < n; ++i) data[i] -= lr * update[i] / clip;
    t.zero_grad();
  }
}

void sgd_step(std::vector<std::pair<std::string, Tensor>>& params, double lr) {
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    const auto& g = t.grad();
    check_grad_finite(name, g);
    auto& data = t.mutable_data();
    for (int64_t i = 0; i < t.size(); ++i) data[i] -= lr * g[i];
    t.zero_grad();
  }
}

// ---- loss and evaluation ---------------------------------------------------

Tensor batch_loss(const TransformerModel& model, const Batch& batch) {
  int64_t tokens = count_non_pad(batch.targets, Vocab::kPad);
  if (tokens == 0) return Tensor::scalar(0.0);
  Tensor enc = model.encode(batch.inputs, batch.batch_size, batch.input_length);
  Tensor logits =
      model.decode_logits(enc, batch.targets, batch.batch_size, batch.target_length);
  Tensor log_probs = log_softmax(logits);
  Tensor nll = nll_sum(log_probs, batch.targets, Vocab::kPad);
  return scale(nll, 1.0 / static_cast<double>(tokens));
}

double heldout_log_perplexity(const TransformerModel& model,
                              const SpanDataset& data) {
  if (data.heldout_batch_count() == 0) {
    throw std::invalid_argument("heldout_log_perplexity: heldout shard is empty");
  }
  NoGradGuard no_grad;
  PrecisionScope f64(Precision::F64);
  double total_nll = 0.0;
  int64_t total_tokens = 0;
  for (int64_t i = 0; i < data.heldout_batch_count(); ++i) {
    Batch batch = data.heldout_batch(i);
    Tensor enc = model.encode(batch.inputs, batch.batch_size, batch.input_length);
    Tensor logits = model.decode_logits(enc, batch.targets, batch.batch_size,
                                        batch.target_length);
    total_nll += nll_sum(log_softmax(logits), batch.targets, Vocab::kPad).item();
    total_tokens += count_non_pad(batch.targets, Vocab::kPad);
  }
  if (total_tokens == 0) {
    throw std::runtime_error("heldout_log_perplexity: no non-pad target tokens");
  }
  return total_nll / static_cast<double>(total_tokens);
}

// ---- training --------------------------------------------------------------

TrainReport train(const ModelConfig& model_config, const DataConfig& data_config,
                  const ScheduleConfig& schedule, const TrainOptions& options,
                  uint64_t seed, TransformerModel* trained_model,
                  const std::string& progress_tag) {
  model_config.validate();
  data_config.validate();
  schedule.validate();
  if (options.steps < 0 || options.steps > schedule.total_steps) {
    throw std::invalid_argument("train: steps must lie within the schedule");
  }

  auto t0 = std::chrono::steady_clock::now();
  PrecisionScope mode(options.train_precision);

  std::vector<int64_t> corpus = generate_corpus(
      data_config.corpus_seed, data_config.corpus_tokens, data_config.vocab());
  SpanDataset data(std::move(corpus), data_config, mix_seed(seed, 0x5eed));

  ModelConfig cfg = model_config;
  cfg.seed = mix_seed(seed, 0x10de1);
  TransformerModel model(cfg);
  auto params = model.parameters();

  Adafactor adafactor;
  TrainReport report;
  report.seed = seed;

  StepRecord initial;
  initial.step = 0;
  initial.lr = learning_rate(0, schedule);
  initial.heldout_log_ppl = heldout_log_perplexity(model, data);
  report.final_heldout_log_ppl = *initial.heldout_log_ppl;
  report.trace.push_back(initial);

  int64_t interval = options.effective_eval_interval();
  for (int64_t step = 1; step <= options.steps; ++step) {
    Batch batch = data.train_batch(step - 1);
    Tensor loss = batch_loss(model, batch);
    double loss_value = loss.item();
    double lr = learning_rate(step, schedule);
    if (!std::isfinite(loss_value)) {
      report.diverged = true;
      report.diverged_at_step = step;
      break;
    }
    loss.backward();
    if (options.optimizer == OptimizerKind::Adafactor) {
      adafactor.step(params, lr);
    } else {
      sgd_step(params, lr);
    }

    StepRecord rec;
    rec.step = step;
    rec.loss = loss_value;
    rec.lr = lr;
    if (step % interval == 0 || step == options.steps) {
      rec.heldout_log_ppl = heldout_log_perplexity(model, data);
      report.final_heldout_log_ppl = *rec.heldout_log_ppl;
      if (!progress_tag.empty()) {
        std::cerr << progress_tag << " step " << step << "/" << options.steps
                  << " loss " << loss_value << " heldout "
                  << *rec.heldout_log_ppl << "\n";
      }
    }
    report.trace.push_back(rec);
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (trained_model != nullptr) *trained_model = model;
  return report;
}

std::string metrics_csv(const TrainReport& report) {
  std::ostringstream os;
  os << "step,loss,lr,heldout_log_ppl\n";
  for (const StepRecord& r : report.trace) {
    os << r.step << ",";
    if (r.step > 0) os << format_g17(r.loss);
    os << "," << format_g17(r.lr) << ",";
    if (r.heldout_log_ppl) os << format_g17(*r.heldout_log_ppl);
    os << "\n";
  }
  return os.str();
}

// ---- multi-seed protocol ---------------------------------------------------

namespace {

VarianceResult summarize_runs(std::vector<std::pair<uint64_t, TrainReport>> runs) {
  // Order-independent aggregation.
  std::stable_sort(runs.begin(), runs.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  VarianceResult result;
  for (const auto& [seed, report] : runs) {
    if (report.diverged) {
      result.seeds_diverged.push_back(seed);
    } else {
      result.seeds_used.push_back(seed);
      result.per_seed.push_back(report.final_heldout_log_ppl);
    }
  }
  size_t n = result.per_seed.size();
  if (n == 0) return result;
  double sum = 0.0;
  for (double v : result.per_seed) sum += v;
  result.mean = sum / static_cast<double>(n);
  auto [lo, hi] = std::minmax_element(result.per_seed.begin(), result.per_seed.end());
  if (*lo == *hi) {
    result.mean = *lo;
    result.stddev = 0.0;  // exact for forced-identical runs
  } else if (n >= 2) {
    double ss = 0.0;
    for (double v : result.per_seed) ss += (v - result.mean) * (v - result.mean);
    result.stddev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return result;
}

}  // namespace

VarianceResult variance_study(const ModelConfig& model_config,
                              const DataConfig& data_config,
                              const ScheduleConfig& schedule,
                              const TrainOptions& options,
                              const std::vector<uint64_t>& seeds) {
  if (seeds.size() < 2) {
    throw std::invalid_argument("variance_study: need at least 2 seeds");
  }
  std::vector<std::pair<uint64_t, TrainReport>> runs;
  for (uint64_t seed : seeds) {
    runs.emplace_back(seed,
                      train(model_config, data_config, schedule, options, seed));
  }
  return summarize_runs(std::move(runs));
}

void assert_parameter_parity(const std::vector<FfnVariant>& variants,
                             int64_t d_model, int64_t d_ff_base) {
  if (variants.empty()) {
    throw std::invalid_argument("assert_parameter_parity: empty variant list");
  }
  int64_t reference = -1;
  std::string reference_name;
  for (FfnVariant v : variants) {
    int64_t d_ff = is_gated(v) ? matched_hidden_width(d_ff_base, 1) : d_ff_base;
    int64_t count = parameter_count(v, d_model, d_ff, false);
    if (reference < 0) {
      reference = count;
      reference_name = variant_name(v);
    } else if (count != reference) {
      throw std::runtime_error(
          "parameter parity violated: " + variant_name(v) + " has " +
          std::to_string(count) + " FFN parameters, " + reference_name +
          " has " + std::to_string(reference));
    }
  }
}

ComparisonReport compare_variants(const ModelConfig& base_config,
                                  const DataConfig& data_config,
                                  const ScheduleConfig& schedule,
                                  const TrainOptions& options,
                                  const std::vector<FfnVariant>& variants,
                                  const std::vector<uint64_t>& seeds,
                                  int jobs) {
  if (variants.empty()) {
    throw std::invalid_argument("compare_variants: empty variant list");
  }
  assert_parameter_parity(variants, base_config.d_model, base_config.d_ff_base);

  struct Job {
    size_t variant_index;
    uint64_t seed;
    TrainReport report;
  };
  std::vector<Job> queue;
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    for (uint64_t seed : seeds) queue.push_back({vi, seed, {}});
  }

  auto run_job = [&](Job& job) {
    ModelConfig cfg = base_config;
    cfg.ffn_variant = variants[job.variant_index];
    std::string tag = "[" + variant_name(cfg.ffn_variant) + " seed " +
                      std::to_string(job.seed) + "]";
    job.report = train(cfg, data_config, schedule, options, job.seed, nullptr, tag);
  };

  int workers = std::max(1, jobs);
  if (workers == 1) {
    for (Job& job : queue) run_job(job);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < queue.size();
             i = next.fetch_add(1)) {
          run_job(queue[i]);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }

  ComparisonReport report;
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    VariantResult row;
    row.variant = variants[vi];
    row.d_ff = is_gated(variants[vi])
                   ? matched_hidden_width(base_config.d_ff_base, 1)
                   : base_config.d_ff_base;
    row.ffn_params = parameter_count(variants[vi], base_config.d_model, row.d_ff,
                                     false);
    std::vector<std::pair<uint64_t, TrainReport>> runs;
    for (const Job& job : queue) {
      if (job.variant_index == vi) runs.emplace_back(job.seed, job.report);
    }
    row.stats = summarize_runs(std::move(runs));
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string ComparisonReport::table_text() const {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-10s %7s %11s  %s\n", "variant", "d_ff",
                "ffn_params", "heldout log-ppl, mean (stddev)");
  os << buf;
  for (const VariantResult& row : rows) {
    std::string stat;
    if (row.stats.per_seed.empty()) {
      stat = "all seeds diverged";
    } else {
      char sbuf[64];
      std::snprintf(sbuf, sizeof(sbuf), "%.3f (%.3f)", row.stats.mean,
                    row.stats.stddev);
      stat = sbuf;
    }
    if (!row.stats.seeds_diverged.empty()) {
      stat += " [" + std::to_string(row.stats.seeds_diverged.size()) +
              " diverged seed(s) excluded]";
    }
    std::snprintf(buf, sizeof(buf), "%-10s %7lld %11lld  %s\n",
                  variant_name(row.variant).c_str(),
                  static_cast<long long>(row.d_ff),
                  static_cast<long long>(row.ffn_params), stat.c_str());
    os << buf;
  }
  return os.str();
}

std::string ComparisonReport::csv() const {
  std::ostringstream os;
  os << "variant,d_ff,params,mean_log_ppl,stddev_log_ppl,n_seeds\n";
  for (const VariantResult& row : rows) {
    os << variant_name(row.variant) << "," << row.d_ff << "," << row.ffn_params
       << "," << format_g17(row.stats.mean) << ","
       << format_g17(row.stats.stddev) << "," << row.stats.per_seed.size()
       << "\n";
  }
  return os.str();
}

// ---- gradient checking -----------------------------------------------------

double model_gradient_check(const ModelConfig& config, const Batch& batch,
                            double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw std::invalid_argument("model_gradient_check: eps must be in (0, 1e-2]");
  }
  PrecisionScope f64(Precision::F64);
  TransformerModel model(config);
  Tensor loss = batch_loss(model, batch);
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : model.parameters()) {
    analytic.push_back(t.has_grad() ? t.grad()
                                    : std::vector<double>(t.size(), 0.0));
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  auto params = model.parameters();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].second.mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
      double orig = data[i];
      data[i] = orig + eps;
      double fp = batch_loss(model, batch).item();
      data[i] = orig - eps;
      double fm = batch_loss(model, batch).item();
      data[i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[pi][i];
      double err = std::abs(a - numeric) /
                   std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ffnlab
