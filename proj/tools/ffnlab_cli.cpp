// ffnlab: desk-scale training laboratory for Transformer feed-forward
// variants (ReLU/GELU/Swish baselines and the GLU family).
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "ffnlab/config.hpp"
#include "ffnlab/ffn.hpp"
#include "ffnlab/model.hpp"
#include "ffnlab/span_data.hpp"
#include "ffnlab/train.hpp"

namespace fs = std::filesystem;
using namespace ffnlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// Effective config = file (if given) overridden by explicitly passed flags.
struct ConfigFlags {
  std::string config_path;
  RunConfig overrides;
  CLI::Option* variant_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* out_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key=value config file");
    variant_opt = cmd->add_option("--variant", overrides.variant,
                                  "FFN variant (relu,gelu,swish,glu,bilinear,"
                                  "reglu,geglu,swiglu)");
    seed_opt = cmd->add_option("--seed", overrides.seed, "run seed");
    steps_opt = cmd->add_option("--steps", overrides.steps, "training steps");
    out_opt = cmd->add_option("--out", overrides.out_dir, "output directory");
  }

  RunConfig resolve() const {
    RunConfig config = config_path.empty() ? RunConfig{}
                                           : RunConfig::from_file(config_path);
    if (variant_opt->count()) config.variant = overrides.variant;
    if (seed_opt->count()) config.seed = overrides.seed;
    if (steps_opt->count()) config.steps = overrides.steps;
    if (out_opt->count()) config.out_dir = overrides.out_dir;
    return config;
  }
};

fs::path prepare_out_dir(const RunConfig& config) {
  fs::path dir(config.out_dir);
  fs::create_directories(dir);
  // Echo the merged effective config next to the results.
  write_file(dir / "effective_config.txt", config.serialize());
  return dir;
}

int cmd_gen_data(uint64_t seed, int64_t tokens, int64_t vocab_size,
                 const std::string& out_path) {
  Vocab vocab{vocab_size, 16};
  std::vector<int64_t> corpus = generate_corpus(seed, tokens, vocab);
  write_corpus(out_path, corpus, vocab, seed);
  std::cout << "wrote " << corpus.size() << " tokens to " << out_path << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& config) {
  fs::path dir = prepare_out_dir(config);
  TransformerModel model(config.model_config());
  TrainReport report =
      train(config.model_config(), config.data_config(),
            config.schedule_config(), config.train_options(), config.seed,
            &model, "[" + config.variant + "]");
  write_file(dir / "metrics.csv", metrics_csv(report));
  save_checkpoint(model, (dir / "checkpoint.txt").string(),
                  (dir / "checkpoint.bin").string());
  if (report.diverged) {
    throw NumericalError("training diverged (NaN loss) at step " +
                         std::to_string(report.diverged_at_step) +
                         "; partial trace written to " +
                         (dir / "metrics.csv").string());
  }
  std::cout << "final heldout log-perplexity: " << report.final_heldout_log_ppl
            << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& config, const std::string& checkpoint_dir) {
  fs::path dir(checkpoint_dir);
  TransformerModel model = load_checkpoint((dir / "checkpoint.txt").string(),
                                           (dir / "checkpoint.bin").string());
  DataConfig data_config = config.data_config();
  data_config.vocab_size = model.config().vocab_size;
  std::vector<int64_t> corpus = generate_corpus(
      data_config.corpus_seed, data_config.corpus_tokens, data_config.vocab());
  SpanDataset data(std::move(corpus), data_config, mix_seed(config.seed, 0x5eed));
  double ppl = heldout_log_perplexity(model, data);
  std::cout << "heldout log-perplexity: " << ppl << "\n";
  return kExitOk;
}

int cmd_compare(const RunConfig& config, const std::string& variants_arg,
                int64_t n_seeds, int jobs) {
  std::vector<FfnVariant> variants;
  if (variants_arg == "all") {
    variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
  } else {
    std::stringstream ss(variants_arg);
    std::string name;
    while (std::getline(ss, name, ',')) {
      try {
        variants.push_back(variant_from_name(name));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
  }
  if (variants.empty()) throw ConfigError("compare: empty variant list");

  fs::path dir = prepare_out_dir(config);
  std::vector<uint64_t> seeds;
  for (int64_t i = 0; i < n_seeds; ++i) seeds.push_back(config.seed + i);

  ComparisonReport report =
      compare_variants(config.model_config(), config.data_config(),
                       config.schedule_config(), config.train_options(),
                       variants, seeds, jobs);
  std::string table = report.table_text();
  write_file(dir / "comparison.txt", table);
  write_file(dir / "comparison.csv", report.csv());
  std::cout << table;
  for (const VariantResult& row : report.rows) {
    if (row.stats.per_seed.empty()) {
      throw NumericalError("all seeds diverged for variant " +
                           variant_name(row.variant));
    }
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& variant, double eps, double threshold) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw ConfigError("gradcheck: --eps must be in (0, 1e-2]");
  }
  set_precision(Precision::F64);

  if (variant == "identity") {
    // Linear two-matrix layer: central differences are exact.
    Rng rng(7);
    FfnLayer layer = make_ffn_layer(FfnVariant::ReLU, 4, 6, rng);
    auto random_input = [] {
      Rng r(11);
      std::vector<double> v(24);
      for (double& d : v) d = r.uniform(-1.0, 1.0);
      return v;
    };
    Tensor x = Tensor::from_data({2, 3, 4}, random_input());
    auto f = [&](const Tensor& t) {
      return reduce_sum(matmul(matmul(t, layer.w1), layer.w2));
    };
    double err = finite_difference_check(f, x, eps);
    std::cout << "identity-ffn max relative error: " << err << "\n";
    if (err > 1e-10) throw NumericalError("identity gradcheck above 1e-10");
    return kExitOk;
  }

  FfnVariant v;
  try {
    v = variant_from_name(variant);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  ModelConfig config;
  config.num_layers = 2;
  config.d_model = 8;
  config.num_heads = 2;
  config.d_kv = 4;
  config.d_ff_base = 12;
  config.vocab_size = 11;
  config.ffn_variant = v;
  config.seed = 99;

  Batch batch;
  batch.batch_size = 1;
  batch.input_length = 5;
  batch.target_length = 5;
  batch.inputs = {3, 4, 5, 6, 10};
  batch.targets = {10, 4, 3, 1, 0};

  double err = model_gradient_check(config, batch, eps);
  std::cout << variant << " full-model max relative error: " << err << "\n";
  if (err > threshold) {
    throw NumericalError("gradient check error " + std::to_string(err) +
                         " above threshold " + std::to_string(threshold));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale Transformer FFN variant laboratory"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  uint64_t gen_seed = 1;
  int64_t gen_tokens = 262144;
  int64_t gen_vocab = 64;
  std::string gen_out = "corpus.txt";
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--tokens", gen_tokens, "number of tokens");
  gen->add_option("--vocab-size", gen_vocab, "vocabulary size (default 64)");
  gen->add_option("--out", gen_out, "output corpus file");

  // train
  auto* train_cmd = app.add_subcommand("train", "train one variant");
  ConfigFlags train_flags;
  train_flags.attach(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "heldout evaluation of a checkpoint");
  ConfigFlags eval_flags;
  eval_flags.attach(eval_cmd);
  std::string eval_checkpoint;
  eval_cmd->add_option("--checkpoint", eval_checkpoint,
                       "directory containing checkpoint.txt/checkpoint.bin")
      ->required();

  // compare
  auto* compare_cmd = app.add_subcommand(
      "compare", "multi-seed comparison across variants");
  ConfigFlags compare_flags;
  compare_flags.attach(compare_cmd);
  std::string compare_variants_arg = "all";
  int64_t compare_seeds = 4;
  int compare_jobs = 1;
  compare_cmd->add_option("--variants", compare_variants_arg,
                          "comma-separated variant list or \"all\"");
  compare_cmd->add_option("--seeds", compare_seeds, "seeds per variant (default 4)");
  compare_cmd->add_option("--jobs", compare_jobs, "parallel training jobs");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck",
                                      "finite-difference check of a tiny model");
  std::string grad_variant = "relu";
  double grad_eps = 1e-5;
  double grad_threshold = 1e-5;
  grad_cmd->add_option("--variant", grad_variant,
                       "variant name, or \"identity\" for the linear case");
  grad_cmd->add_option("--eps", grad_eps, "finite-difference step");
  grad_cmd->add_option("--threshold", grad_threshold, "max allowed relative error");

  // defaults
  auto* defaults_cmd = app.add_subcommand("defaults", "print all config defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_seed, gen_tokens, gen_vocab, gen_out);
    if (train_cmd->parsed()) return cmd_train(train_flags.resolve());
    if (eval_cmd->parsed()) return cmd_eval(eval_flags.resolve(), eval_checkpoint);
    if (compare_cmd->parsed()) {
      return cmd_compare(compare_flags.resolve(), compare_variants_arg,
                         compare_seeds, compare_jobs);
    }
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_variant, grad_eps, grad_threshold);
    if (defaults_cmd->parsed()) {
      std::cout << RunConfig{}.serialize();
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
