#include "ffnlab/span_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ffnlab {

void Vocab::validate() const {
  if (num_sentinels < 1 || num_symbols() < 2) {
    throw std::invalid_argument(
        "vocab: need vocab_size >= symbols(>=2) + sentinels + 2 reserved, got "
        "vocab_size=" + std::to_string(vocab_size) +
        " num_sentinels=" + std::to_string(num_sentinels));
  }
}

void CorruptionConfig::validate() const {
  if (!(corruption_rate > 0.0 && corruption_rate < 1.0)) {
    throw std::invalid_argument("corruption_rate must be in (0, 1)");
  }
  if (mean_span_length < 1.0) {
    throw std::invalid_argument("mean_span_length must be >= 1");
  }
  if (input_length <= 0) {
    throw std::invalid_argument("input_length must be positive");
  }
}

std::vector<int64_t> generate_corpus(uint64_t seed, int64_t num_tokens,
                                     const Vocab& vocab) {
  vocab.validate();
  int64_t s = vocab.num_symbols();
  if (s > 128) {
    throw std::invalid_argument(
        "generate_corpus: desk-scale Markov generator supports at most 128 "
        "symbols, got " + std::to_string(s));
  }
  if (num_tokens < 0) throw std::invalid_argument("num_tokens must be >= 0");
  if (num_tokens == 0) return {};

  // Order-2 transition table; cubed uniforms give peaked, non-uniform rows.
  Rng rng(mix_seed(seed, 0xc0df));
  std::vector<double> cumulative(static_cast<size_t>(s * s * s));
  for (int64_t ctx = 0; ctx < s * s; ++ctx) {
    double* row = cumulative.data() + ctx * s;
    double total = 0.0;
    for (int64_t j = 0; j < s; ++j) {
      double u = rng.uniform();
      row[j] = u * u * u + 1e-4;
      total += row[j];
    }
    double acc = 0.0;
    for (int64_t j = 0; j < s; ++j) {
      acc += row[j] / total;
      row[j] = acc;
    }
    row[s - 1] = 1.0;
  }

  std::vector<int64_t> out(static_cast<size_t>(num_tokens));
  int64_t a = static_cast<int64_t>(rng.uniform_int(s));
  int64_t b = static_cast<int64_t>(rng.uniform_int(s));
  for (int64_t i = 0; i < num_tokens; ++i) {
    const double* row = cumulative.data() + (a * s + b) * s;
    double u = rng.uniform();
    int64_t next = std::lower_bound(row, row + s, u) - row;
    if (next >= s) next = s - 1;
    out[i] = Vocab::kFirstSymbol + next;
    a = b;
    b = next;
  }
  return out;
}

SpanCorruptionExample corrupt(const std::vector<int64_t>& tokens,
                              const CorruptionConfig& config,
                              const Vocab& vocab, Rng& rng) {
  config.validate();
  vocab.validate();
  int64_t len = static_cast<int64_t>(tokens.size());
  if (len != config.input_length) {
    throw std::invalid_argument("corrupt: got " + std::to_string(len) +
                                " tokens, config.input_length is " +
                                std::to_string(config.input_length));
  }
  for (int64_t t : tokens) {
    if (vocab.is_sentinel(t)) {
      throw std::invalid_argument("corrupt: raw text may not contain sentinel ids");
    }
  }

  int64_t budget = std::llround(config.corruption_rate * len);
  int64_t num_spans = std::llround(budget / config.mean_span_length);
  num_spans = std::min(num_spans, budget);
  if (num_spans <= 0) {
    return SpanCorruptionExample{tokens, {Vocab::kEos}};
  }
  if (num_spans > vocab.num_sentinels) {
    throw std::runtime_error("corrupt: " + std::to_string(num_spans) +
                             " spans exhaust " +
                             std::to_string(vocab.num_sentinels) + " sentinels");
  }

  // Random composition of the budget into num_spans lengths >= 1.
  std::vector<int64_t> lengths(num_spans, 1);
  for (int64_t extra = budget - num_spans; extra > 0; --extra) {
    lengths[rng.uniform_int(num_spans)]++;
  }

  // Non-overlapping starts by rejection.
  struct Span { int64_t start, len; };
  std::vector<Span> spans(num_spans);
  bool placed = false;
  for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
    for (int64_t i = 0; i < num_spans; ++i) {
      spans[i] = {static_cast<int64_t>(rng.uniform_int(len - lengths[i] + 1)),
                  lengths[i]};
    }
    std::sort(spans.begin(), spans.end(),
              [](const Span& a, const Span& b) { return a.start < b.start; });
    placed = true;
    for (int64_t i = 1; i < num_spans; ++i) {
      if (spans[i].start < spans[i - 1].start + spans[i - 1].len) {
        placed = false;
        break;
      }
    }
  }
  if (!placed) {
    throw std::runtime_error("corrupt: could not place non-overlapping spans");
  }

  SpanCorruptionExample ex;
  int64_t cursor = 0;
  for (int64_t i = 0; i < num_spans; ++i) {
    for (; cursor < spans[i].start; ++cursor) ex.input_ids.push_back(tokens[cursor]);
    ex.input_ids.push_back(vocab.sentinel_id(i));
    ex.target_ids.push_back(vocab.sentinel_id(i));
    for (int64_t j = 0; j < spans[i].len; ++j) {
      ex.target_ids.push_back(tokens[cursor++]);
    }
  }
  for (; cursor < len; ++cursor) ex.input_ids.push_back(tokens[cursor]);
  ex.target_ids.push_back(Vocab::kEos);
  return ex;
}

SpanCorruptionExample corrupt(const std::vector<int64_t>& tokens,
                              const CorruptionConfig& config,
                              const Vocab& vocab) {
  Rng rng(config.seed);
  return corrupt(tokens, config, vocab, rng);
}

std::vector<int64_t> reconstruct(const SpanCorruptionExample& example,
                                 const Vocab& vocab) {
  // Parse target into sentinel-keyed groups.
  struct Group { int64_t sentinel_index; std::vector<int64_t> tokens; };
  std::vector<Group> groups;
  bool saw_eos = false;
  for (int64_t id : example.target_ids) {
    if (saw_eos) {
      if (id != Vocab::kPad) {
        throw std::invalid_argument("reconstruct: tokens after eos in target");
      }
      continue;
    }
    if (id == Vocab::kEos) {
      saw_eos = true;
    } else if (vocab.is_sentinel(id)) {
      groups.push_back({vocab.sentinel_index(id), {}});
    } else {
      if (groups.empty()) {
        throw std::invalid_argument("reconstruct: target does not start with a sentinel");
      }
      groups.back().tokens.push_back(id);
    }
  }

  std::vector<int64_t> out;
  size_t next_group = 0;
  int64_t prev_index = -1;
  for (int64_t id : example.input_ids) {
    if (!vocab.is_sentinel(id)) {
      out.push_back(id);
      continue;
    }
    int64_t index = vocab.sentinel_index(id);
    if (index <= prev_index) {
      throw std::invalid_argument(
          "reconstruct: sentinels in input must be strictly increasing and unique");
    }
    prev_index = index;
    if (next_group >= groups.size() || groups[next_group].sentinel_index != index) {
      throw std::invalid_argument("reconstruct: no target span for sentinel " +
                                  std::to_string(index));
    }
    for (int64_t t : groups[next_group].tokens) out.push_back(t);
    ++next_group;
  }
  if (next_group != groups.size()) {
    throw std::invalid_argument("reconstruct: target has spans with no matching sentinel");
  }
  return out;
}

std::string serialize_example(const SpanCorruptionExample& example) {
  std::ostringstream os;
  os << "input:";
  for (int64_t id : example.input_ids) os << " " << id;
  os << "\ntarget:";
  for (int64_t id : example.target_ids) os << " " << id;
  os << "\n";
  return os.str();
}

// ---- batching ----------------------------------------------------------

int64_t DataConfig::effective_target_length() const {
  if (target_length > 0) return target_length;
  return std::max<int64_t>(1, std::llround(input_length * 114.0 / 512.0));
}

void DataConfig::validate() const {
  vocab().validate();
  CorruptionConfig{corruption_rate, mean_span_length, input_length, 0}.validate();
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (target_length < 0) throw std::invalid_argument("target_length must be >= 0");
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw std::invalid_argument("heldout_fraction must be in (0, 1)");
  }
  if (corpus_tokens < 0) throw std::invalid_argument("corpus_tokens must be >= 0");
}

SpanDataset::SpanDataset(std::vector<int64_t> corpus, DataConfig config,
                         uint64_t corruption_seed)
    : corpus_(std::move(corpus)),
      config_(config),
      vocab_(config.vocab()),
      corruption_seed_(corruption_seed) {
  config_.validate();
  int64_t total = static_cast<int64_t>(corpus_.size());
  train_tokens_ = total - static_cast<int64_t>(
                              std::floor(total * config_.heldout_fraction));
  if (train_tokens_ < config_.input_length) {
    throw std::invalid_argument("corpus too short: train region of " +
                                std::to_string(train_tokens_) +
                                " tokens cannot fill one input of " +
                                std::to_string(config_.input_length));
  }
}

Batch SpanDataset::make_batch(const int64_t* base, int64_t region_len,
                              bool wrap, int64_t first_example,
                              uint64_t seed_salt) const {
  int64_t in_len = config_.input_length;
  int64_t tgt_len = config_.effective_target_length();
  Batch batch;
  batch.batch_size = config_.batch_size;
  batch.input_length = in_len;
  batch.target_length = tgt_len;
  batch.inputs.assign(static_cast<size_t>(batch.batch_size * in_len), Vocab::kPad);
  batch.targets.assign(static_cast<size_t>(batch.batch_size * tgt_len), Vocab::kPad);

  int64_t stride_slots = wrap ? std::max<int64_t>(1, region_len - in_len + 1)
                              : region_len / in_len;
  CorruptionConfig ccfg{config_.corruption_rate, config_.mean_span_length,
                        in_len, 0};
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    int64_t example = first_example + b;
    int64_t start = wrap ? (example * in_len) % stride_slots : example * in_len;
    std::vector<int64_t> window(base + start, base + start + in_len);
    Rng rng(mix_seed(corruption_seed_ ^ seed_salt, example));
    SpanCorruptionExample ex = corrupt(window, ccfg, vocab_, rng);
    int64_t in_copy = std::min<int64_t>(in_len, ex.input_ids.size());
    std::copy_n(ex.input_ids.begin(), in_copy,
                batch.inputs.begin() + b * in_len);
    int64_t tgt_copy = std::min<int64_t>(tgt_len, ex.target_ids.size());
    std::copy_n(ex.target_ids.begin(), tgt_copy,
                batch.targets.begin() + b * tgt_len);
  }
  return batch;
}

Batch SpanDataset::train_batch(int64_t step) const {
  if (step < 0) throw std::invalid_argument("train_batch: negative step");
  return make_batch(corpus_.data(), train_tokens_, /*wrap=*/true,
                    step * config_.batch_size, /*seed_salt=*/0);
}

int64_t SpanDataset::heldout_batch_count() const {
  int64_t examples = heldout_token_count() / config_.input_length;
  return examples / config_.batch_size;
}

Batch SpanDataset::heldout_batch(int64_t index) const {
  if (index < 0 || index >= heldout_batch_count()) {
    throw std::out_of_range("heldout_batch: index " + std::to_string(index) +
                            " of " + std::to_string(heldout_batch_count()));
  }
  return make_batch(corpus_.data() + train_tokens_, heldout_token_count(),
                    /*wrap=*/false, index * config_.batch_size,
                    /*seed_salt=*/0x9d1dull);
}

void write_corpus(const std::string& path, const std::vector<int64_t>& corpus,
                  const Vocab& vocab, uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file " + path);
  out << "# ffnlab-corpus vocab_size=" << vocab.vocab_size
      << " num_sentinels=" << vocab.num_sentinels << " seed=" << seed
      << " tokens=" << corpus.size() << "\n";
  constexpr size_t kPerLine = 512;
  for (size_t i = 0; i < corpus.size(); ++i) {
    out << corpus[i];
    out << ((i % kPerLine == kPerLine - 1 || i + 1 == corpus.size()) ? '\n' : ' ');
  }
  if (!out) throw std::runtime_error("failed writing corpus file " + path);
}

std::vector<int64_t> read_corpus(const std::string& path, Vocab* vocab_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read corpus file " + path);
  std::vector<int64_t> corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (vocab_out != nullptr) {
        auto read_field = [&](const std::string& key) -> int64_t {
          size_t pos = line.find(key + "=");
          if (pos == std::string::npos) return -1;
          return std::stoll(line.substr(pos + key.size() + 1));
        };
        int64_t vs = read_field("vocab_size");
        int64_t ns = read_field("num_sentinels");
        if (vs > 0) vocab_out->vocab_size = vs;
        if (ns > 0) vocab_out->num_sentinels = ns;
      }
      continue;
    }
    std::istringstream ls(line);
    int64_t id;
    while (ls >> id) corpus.push_back(id);
  }
  return corpus;
}

}  // namespace ffnlab
