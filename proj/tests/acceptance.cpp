// Acceptance gate: runs the eight release criteria end to end and prints one
// PASS/FAIL line per criterion. Expects the path to the ffnlab CLI binary as
// argv[1] (used by the determinism criterion). Exit code = number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ffnlab/config.hpp"
#include "ffnlab/ffn.hpp"
#include "ffnlab/model.hpp"
#include "ffnlab/span_data.hpp"
#include "ffnlab/train.hpp"

namespace fs = std::filesystem;
using namespace ffnlab;

namespace {

std::string g_cli_path;

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool condition, const std::string& what) {
  if (!condition) throw Failure(what);
}

Tensor random_tensor(Shape shape, uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

// ---- criterion 1: exact parameter parity at reference dims ---------------

void criterion_parameter_parity() {
  require(matched_hidden_width(3072, 1) == 2048, "matched width != 2048");
  int64_t baseline = parameter_count(FfnVariant::ReLU, 768, 3072, false);
  require(baseline == 4718592, "ReLU baseline != 4,718,592");
  for (FfnVariant v : kAllVariants) {
    int64_t d_ff = is_gated(v) ? 2048 : 3072;
    require(parameter_count(v, 768, d_ff, false) == baseline,
            variant_name(v) + " breaks parity");
  }
  std::vector<FfnVariant> all(std::begin(kAllVariants), std::end(kAllVariants));
  assert_parameter_parity(all, 768, 3072);
  bool threw = false;
  try {
    assert_parameter_parity(all, 64, 100);  // 200 vs 198: no exact match
  } catch (const std::runtime_error&) {
    threw = true;
  }
  require(threw, "parity precheck accepted a mismatched width");
}

// ---- criterion 2: gradient suite ------------------------------------------

void criterion_gradients() {
  set_precision(Precision::F64);
  const double eps = 1e-5;

  uint64_t seed = 500;
  for (FfnVariant v : kAllVariants) {
    FfnLayer layer;
    layer.variant = v;
    layer.w1 = random_tensor({4, 5}, ++seed, -0.5, 0.5);
    if (is_gated(v)) layer.v = random_tensor({4, 5}, ++seed, -0.5, 0.5);
    layer.w2 = random_tensor({5, 4}, ++seed, -0.5, 0.5);
    Tensor x = random_tensor({3, 4}, ++seed, -0.5, 0.5);
    double err = finite_difference_check(
        [&](const Tensor& t) { return reduce_sum(ffn_forward(layer, t)); }, x,
        eps);
    require(err < 1e-6, variant_name(v) + " standalone FFN error " +
                            std::to_string(err));
  }

  Batch batch;
  batch.batch_size = 1;
  batch.input_length = 5;
  batch.target_length = 5;
  batch.inputs = {3, 4, 5, 6, 10};
  batch.targets = {10, 4, 3, 1, 0};
  for (FfnVariant v : kAllVariants) {
    ModelConfig config;
    config.num_layers = 2;
    config.d_model = 8;
    config.num_heads = 2;
    config.d_kv = 4;
    config.d_ff_base = 12;
    config.vocab_size = 11;
    config.ffn_variant = v;
    config.seed = 99;
    double err = model_gradient_check(config, batch, eps);
    require(err < 1e-5, variant_name(v) + " full-model error " +
                            std::to_string(err));
  }
}

// ---- criterion 3: desk-scale efficacy for every variant --------------------

void criterion_efficacy() {
  const double baseline = std::log(64.0);

  ModelConfig model_config;
  model_config.num_layers = 2;
  model_config.d_model = 64;
  model_config.num_heads = 4;
  model_config.d_kv = 16;
  model_config.d_ff_base = 192;
  model_config.vocab_size = 64;

  DataConfig data_config;
  data_config.corpus_tokens = 131072;
  data_config.input_length = 64;
  data_config.target_length = 16;
  data_config.batch_size = 16;

  ScheduleConfig schedule;
  schedule.total_steps = 2000;
  schedule.warmup_steps = 1000;

  TrainOptions options;
  options.steps = 2000;
  options.eval_interval = 500;

  for (FfnVariant v : kAllVariants) {
    ModelConfig config = model_config;
    config.ffn_variant = v;
    auto start = std::chrono::steady_clock::now();
    TrainReport report = train(config, data_config, schedule, options, 1,
                               nullptr, "[" + variant_name(v) + "]");
    double minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count() /
        60.0;
    require(!report.diverged, variant_name(v) + " diverged");
    for (const StepRecord& r : report.trace) {
      require(std::isfinite(r.loss) || r.step == 0,
              variant_name(v) + " produced a non-finite loss");
    }
    require(report.final_heldout_log_ppl < baseline,
            variant_name(v) + " heldout " +
                std::to_string(report.final_heldout_log_ppl) +
                " not below ln(64)");
    std::printf("    %-8s heldout %.4f < %.4f (%.1f min)\n",
                variant_name(v).c_str(), report.final_heldout_log_ppl,
                baseline, minutes);
    std::fflush(stdout);
  }
}

// ---- criterion 4: multi-seed variance protocol -----------------------------

void criterion_variance() {
  ModelConfig model_config;
  model_config.num_layers = 1;
  model_config.d_model = 16;
  model_config.num_heads = 2;
  model_config.d_kv = 8;
  model_config.d_ff_base = 24;
  model_config.vocab_size = 64;
  model_config.ffn_variant = FfnVariant::GEGLU;

  DataConfig data_config;
  data_config.corpus_tokens = 5120;
  data_config.input_length = 32;
  data_config.target_length = 8;
  data_config.batch_size = 8;

  ScheduleConfig schedule;
  schedule.total_steps = 20;
  schedule.warmup_steps = 10;

  TrainOptions options;
  options.steps = 20;
  options.eval_interval = 20;

  VarianceResult r = variance_study(model_config, data_config, schedule,
                                    options, {1, 2, 3, 4});
  require(r.per_seed.size() == 4, "expected four converged seeds");

  double mean = 0.0;
  for (double v : r.per_seed) mean += v;
  mean /= 4.0;
  double ss = 0.0;
  for (double v : r.per_seed) ss += (v - mean) * (v - mean);
  double stddev = std::sqrt(ss / 3.0);
  require(std::abs(r.mean - mean) <= 1e-15 * std::abs(mean),
          "mean does not match recomputation");
  require(std::abs(r.stddev - stddev) <= 1e-12 * stddev,
          "stddev does not match recomputation");
  require(r.stddev > 0.0, "distinct seeds gave zero spread");

  VarianceResult same = variance_study(model_config, data_config, schedule,
                                       options, {7, 7, 7, 7});
  require(same.stddev == 0.0, "identical seeds must give stddev exactly 0");

  // the comparison table format: "mean (stddev)"
  ComparisonReport report =
      compare_variants(model_config, data_config, schedule, options,
                       {FfnVariant::GEGLU}, {1, 2, 3, 4});
  char expected[64];
  std::snprintf(expected, sizeof expected, "%.3f (%.3f)", r.mean, r.stddev);
  require(report.table_text().find(expected) != std::string::npos,
          std::string("table missing \"") + expected + "\"");
}

// ---- criterion 5: schedule closed form -------------------------------------

void criterion_schedule() {
  ScheduleConfig schedule;
  schedule.total_steps = 10000;
  schedule.warmup_steps = 1000;
  schedule.decay_fraction = 0.10;

  auto close = [](double a, double b) { return std::abs(a - b) < 1e-12; };
  require(close(learning_rate(0, schedule), 1.0 / std::sqrt(1000.0)),
          "lr(0)");
  require(close(learning_rate(1000, schedule), 1.0 / std::sqrt(1000.0)),
          "lr(warmup)");
  require(close(learning_rate(9000, schedule), 1.0 / std::sqrt(9000.0)),
          "lr(0.9 total) continuity");
  require(learning_rate(10000, schedule) == 0.0, "lr(total) != 0");
  // just inside the decay window: ramp factor (total-step)/(0.1 total)
  require(close(learning_rate(9001, schedule),
                (1.0 / std::sqrt(9001.0)) * (999.0 / 1000.0)),
          "lr just past the boundary");
}

// ---- criterion 6: span corruption round-trip and golden stability -----------

void criterion_span_roundtrip() {
  Vocab vocab{64, 16};
  CorruptionConfig config;
  config.input_length = 64;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    config.seed = seed;
    std::vector<int64_t> tokens = generate_corpus(seed + 9000, 64, vocab);
    SpanCorruptionExample ex = corrupt(tokens, config, vocab);
    require(reconstruct(ex, vocab) == tokens,
            "round-trip failed at seed " + std::to_string(seed));
  }

  // golden example: regenerate and compare byte for byte
  std::vector<int64_t> tokens = generate_corpus(17, 20, vocab);
  CorruptionConfig golden;
  golden.corruption_rate = 0.15;
  golden.mean_span_length = 3.0;
  golden.input_length = 20;
  golden.seed = 17;
  SpanCorruptionExample ex = corrupt(tokens, golden, vocab);
  std::string got = "tokens:";
  for (int64_t t : tokens) got += " " + std::to_string(t);
  got += "\n" + serialize_example(ex);

  std::ifstream in(FFNLAB_TEST_DATA_DIR "/golden_corruption.txt",
                   std::ios::binary);
  require(in.good(), "golden file missing");
  std::stringstream buffer;
  buffer << in.rdbuf();
  require(got == buffer.str(), "golden corruption example drifted");
}

// ---- criterion 7: perplexity oracle ----------------------------------------

void criterion_perplexity_oracle() {
  ModelConfig mc;
  mc.num_layers = 1;
  mc.d_model = 16;
  mc.num_heads = 2;
  mc.d_kv = 8;
  mc.d_ff_base = 24;
  mc.vocab_size = 64;
  mc.seed = 5;

  DataConfig dc;
  dc.corpus_tokens = 5120;
  dc.input_length = 32;
  dc.target_length = 8;
  dc.batch_size = 8;

  TransformerModel model(mc);
  std::vector<int64_t> corpus =
      generate_corpus(dc.corpus_seed, dc.corpus_tokens, dc.vocab());
  SpanDataset data(std::move(corpus), dc, 7);
  require(data.heldout_batch_count() == 2, "expected a 2-batch heldout shard");

  double pipeline = heldout_log_perplexity(model, data);

  set_precision(Precision::F64);
  NoGradGuard no_grad;
  double nll = 0.0;
  int64_t tokens = 0;
  for (int64_t b = 0; b < data.heldout_batch_count(); ++b) {
    Batch batch = data.heldout_batch(b);
    Tensor enc =
        model.encode(batch.inputs, batch.batch_size, batch.input_length);
    Tensor lp = log_softmax(model.decode_logits(
        enc, batch.targets, batch.batch_size, batch.target_length));
    for (int64_t row = 0; row < batch.batch_size * batch.target_length;
         ++row) {
      int64_t t = batch.targets[static_cast<size_t>(row)];
      if (t == Vocab::kPad) continue;
      nll -= lp.data()[row * mc.vocab_size + t];
      ++tokens;
    }
  }
  require(tokens > 0, "no non-pad heldout tokens");
  require(std::abs(pipeline - nll / tokens) < 1e-8,
          "pipeline deviates from direct NLL summation");

  // uniform logits: zero embedding forces every logit to zero
  TransformerModel uniform(mc);
  std::fill(uniform.embedding().mutable_data().begin(),
            uniform.embedding().mutable_data().end(), 0.0);
  double flat = heldout_log_perplexity(uniform, data);
  require(std::abs(flat - std::log(64.0)) < 1e-9,
          "uniform-logit model is not at ln(V)");
}

// ---- criterion 8: CLI-level determinism -------------------------------------

void criterion_cli_determinism() {
  require(!g_cli_path.empty(), "CLI path not supplied as argv[1]");

  fs::path work = fs::current_path() / "acceptance_determinism";
  fs::remove_all(work);
  fs::create_directories(work);
  fs::path config_path = work / "run.cfg";
  {
    std::ofstream cfg(config_path);
    cfg << "num_layers = 1\n"
        << "d_model = 32\n"
        << "num_heads = 2\n"
        << "d_kv = 16\n"
        << "d_ff_base = 24\n"
        << "variant = swiglu\n"
        << "corpus_tokens = 10240\n"
        << "input_length = 32\n"
        << "target_length = 8\n"
        << "batch_size = 8\n"
        << "steps = 30\n"
        << "warmup_steps = 10\n"
        << "eval_interval = 10\n"
        << "seed = 11\n";
  }

  auto run = [&](const std::string& out_dir) {
    std::string cmd = "\"" + g_cli_path + "\" train --config \"" +
                      config_path.string() + "\" --out \"" +
                      (work / out_dir).string() + "\" > /dev/null";
    int rc = std::system(cmd.c_str());
    require(rc == 0, "cmd_train exited with " + std::to_string(rc));
  };
  run("run1");
  run("run2");

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(in.good(), "missing " + p.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
  };
  std::string a = slurp(work / "run1" / "metrics.csv");
  std::string b = slurp(work / "run2" / "metrics.csv");
  require(!a.empty(), "empty metrics.csv");
  require(a == b, "metrics CSVs differ between identical invocations");
  fs::remove_all(work);
}

struct Criterion {
  const char* label;
  std::function<void()> run;
};

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_cli_path = argv[1];

  const Criterion criteria[] = {
      {"1 parameter parity at d_model=768 (4,718,592 each)",
       criterion_parameter_parity},
      {"2 gradient suite (8 FFN layers < 1e-6, full models < 1e-5)",
       criterion_gradients},
      {"3 desk-scale efficacy (all variants beat ln(64) in 2000 steps)",
       criterion_efficacy},
      {"4 variance protocol (4 seeds, mean (stddev), exact stats)",
       criterion_variance},
      {"5 inverse-sqrt schedule closed form to 1e-12", criterion_schedule},
      {"6 span corruption round-trip x1000 + byte-stable golden example",
       criterion_span_roundtrip},
      {"7 perplexity oracle (direct NLL to 1e-8, uniform model at ln V)",
       criterion_perplexity_oracle},
      {"8 byte-identical metrics across repeated cmd_train",
       criterion_cli_determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    std::string detail;
    bool ok = true;
    try {
      c.run();
    } catch (const std::exception& e) {
      ok = false;
      detail = e.what();
    }
    std::printf("criterion %s: %s%s%s\n", c.label, ok ? "PASS" : "FAIL",
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  return failures;
}
