#include "ffnlab/config.hpp"

#include <fstream>
#include <sstream>

namespace ffnlab {

namespace {

int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an integer, got \"" + value + "\"");
  }
}

uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an unsigned integer, got \"" +
                      value + "\"");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a real number, got \"" + value + "\"");
  }
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "num_layers") num_layers = parse_int(key, value);
  else if (key == "d_model") d_model = parse_int(key, value);
  else if (key == "num_heads") num_heads = parse_int(key, value);
  else if (key == "d_kv") d_kv = parse_int(key, value);
  else if (key == "d_ff_base") d_ff_base = parse_int(key, value);
  else if (key == "vocab_size") vocab_size = parse_int(key, value);
  else if (key == "rel_pos_buckets") rel_pos_buckets = parse_int(key, value);
  else if (key == "rel_pos_max_distance") rel_pos_max_distance = parse_int(key, value);
  else if (key == "variant") variant = value;
  else if (key == "corpus_seed") corpus_seed = parse_uint(key, value);
  else if (key == "corpus_tokens") corpus_tokens = parse_int(key, value);
  else if (key == "num_sentinels") num_sentinels = parse_int(key, value);
  else if (key == "corruption_rate") corruption_rate = parse_real(key, value);
  else if (key == "mean_span_length") mean_span_length = parse_real(key, value);
  else if (key == "input_length") input_length = parse_int(key, value);
  else if (key == "target_length") target_length = parse_int(key, value);
  else if (key == "batch_size") batch_size = parse_int(key, value);
  else if (key == "heldout_fraction") heldout_fraction = parse_real(key, value);
  else if (key == "warmup_steps") warmup_steps = parse_int(key, value);
  else if (key == "decay_fraction") decay_fraction = parse_real(key, value);
  else if (key == "steps") steps = parse_int(key, value);
  else if (key == "seed") seed = parse_uint(key, value);
  else if (key == "seeds") seeds = parse_int(key, value);
  else if (key == "eval_interval") eval_interval = parse_int(key, value);
  else if (key == "optimizer") optimizer = value;
  else if (key == "precision") precision = value;
  else if (key == "out_dir") out_dir = value;
  else throw ConfigError("config: unknown key \"" + key + "\"");
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "num_layers = " << num_layers << "\n"
     << "d_model = " << d_model << "\n"
     << "num_heads = " << num_heads << "\n"
     << "d_kv = " << d_kv << "\n"
     << "d_ff_base = " << d_ff_base << "\n"
     << "vocab_size = " << vocab_size << "\n"
     << "rel_pos_buckets = " << rel_pos_buckets << "\n"
     << "rel_pos_max_distance = " << rel_pos_max_distance << "\n"
     << "variant = " << variant << "\n"
     << "corpus_seed = " << corpus_seed << "\n"
     << "corpus_tokens = " << corpus_tokens << "\n"
     << "num_sentinels = " << num_sentinels << "\n"
     << "corruption_rate = " << corruption_rate << "\n"
     << "mean_span_length = " << mean_span_length << "\n"
     << "input_length = " << input_length << "\n"
     << "target_length = " << target_length << "\n"
     << "batch_size = " << batch_size << "\n"
     << "heldout_fraction = " << heldout_fraction << "\n"
     << "warmup_steps = " << warmup_steps << "\n"
     << "decay_fraction = " << decay_fraction << "\n"
     << "steps = " << steps << "\n"
     << "seed = " << seed << "\n"
     << "seeds = " << seeds << "\n"
     << "eval_interval = " << eval_interval << "\n"
     << "optimizer = " << optimizer << "\n"
     << "precision = " << precision << "\n"
     << "out_dir = " << out_dir << "\n";
  return os.str();
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  RunConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected \"key = value\"");
    }
    config.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return config;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.num_layers = num_layers;
  m.d_model = d_model;
  m.num_heads = num_heads;
  m.d_kv = d_kv;
  m.d_ff_base = d_ff_base;
  m.vocab_size = vocab_size;
  m.rel_pos_buckets = rel_pos_buckets;
  m.rel_pos_max_distance = rel_pos_max_distance;
  m.seed = seed;
  try {
    m.ffn_variant = variant_from_name(variant);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return m;
}

DataConfig RunConfig::data_config() const {
  DataConfig d;
  d.corpus_seed = corpus_seed;
  d.corpus_tokens = corpus_tokens;
  d.vocab_size = vocab_size;
  d.num_sentinels = num_sentinels;
  d.corruption_rate = corruption_rate;
  d.mean_span_length = mean_span_length;
  d.input_length = input_length;
  d.target_length = target_length;
  d.batch_size = batch_size;
  d.heldout_fraction = heldout_fraction;
  return d;
}

ScheduleConfig RunConfig::schedule_config() const {
  ScheduleConfig s;
  s.total_steps = steps;
  s.warmup_steps = std::min(warmup_steps, std::max<int64_t>(1, steps - 1));
  s.decay_fraction = decay_fraction;
  return s;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.steps = steps;
  o.eval_interval = eval_interval;
  if (optimizer == "adafactor") o.optimizer = OptimizerKind::Adafactor;
  else if (optimizer == "sgd") o.optimizer = OptimizerKind::Sgd;
  else throw ConfigError("config: optimizer must be adafactor or sgd");
  if (precision == "f32") o.train_precision = Precision::F32;
  else if (precision == "f64") o.train_precision = Precision::F64;
  else throw ConfigError("config: precision must be f32 or f64");
  return o;
}

}  // namespace ffnlab
