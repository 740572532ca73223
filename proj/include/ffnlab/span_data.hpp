#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ffnlab/rng.hpp"

namespace ffnlab {

// Character-level vocabulary layout: pad=0, eos=1, raw symbols from 2 up,
// sentinels occupying the top of the id range (sentinel_0 is the highest id).
struct Vocab {
  int64_t vocab_size = 64;
  int64_t num_sentinels = 16;

  static constexpr int64_t kPad = 0;
  static constexpr int64_t kEos = 1;
  static constexpr int64_t kFirstSymbol = 2;

  int64_t num_symbols() const { return vocab_size - 2 - num_sentinels; }
  int64_t sentinel_id(int64_t k) const { return vocab_size - 1 - k; }
  bool is_sentinel(int64_t id) const {
    return id >= vocab_size - num_sentinels && id < vocab_size;
  }
  int64_t sentinel_index(int64_t id) const { return vocab_size - 1 - id; }
  void validate() const;
};

struct CorruptionConfig {
  double corruption_rate = 0.15;
  double mean_span_length = 3.0;
  int64_t input_length = 64;
  uint64_t seed = 0;
  void validate() const;
};

// input_ids: the sequence with each deleted span replaced by one sentinel.
// target_ids: (sentinel, deleted tokens) groups in order, terminated by eos.
struct SpanCorruptionExample {
  std::vector<int64_t> input_ids;
  std::vector<int64_t> target_ids;
};

// Seeded order-2 Markov chain over the raw symbols; deterministic and
// non-uniform so models can beat the uniform baseline.
std::vector<int64_t> generate_corpus(uint64_t seed, int64_t num_tokens,
                                     const Vocab& vocab);

// tokens must have exactly config.input_length raw tokens.
SpanCorruptionExample corrupt(const std::vector<int64_t>& tokens,
                              const CorruptionConfig& config,
                              const Vocab& vocab, Rng& rng);
SpanCorruptionExample corrupt(const std::vector<int64_t>& tokens,
                              const CorruptionConfig& config,
                              const Vocab& vocab);

// Splices the target spans back at sentinel positions; throws on malformed
// sentinel sequences.
std::vector<int64_t> reconstruct(const SpanCorruptionExample& example,
                                 const Vocab& vocab);

std::string serialize_example(const SpanCorruptionExample& example);

// ---- batching ----------------------------------------------------------

struct DataConfig {
  uint64_t corpus_seed = 1;
  int64_t corpus_tokens = 262144;
  int64_t vocab_size = 64;
  int64_t num_sentinels = 16;
  double corruption_rate = 0.15;
  double mean_span_length = 3.0;
  int64_t input_length = 64;
  int64_t target_length = 0;  // 0: derive from input_length (ratio 114/512)
  int64_t batch_size = 16;
  double heldout_fraction = 0.10;

  Vocab vocab() const { return Vocab{vocab_size, num_sentinels}; }
  int64_t effective_target_length() const;
  void validate() const;
};

// Fixed-shape token batch, row-major [batch_size, length].
struct Batch {
  int64_t batch_size = 0;
  int64_t input_length = 0;
  int64_t target_length = 0;
  std::vector<int64_t> inputs;
  std::vector<int64_t> targets;
};

// Deterministic view over a corpus: training batches draw from the leading
// (1 - heldout_fraction) of the corpus and wrap cyclically; the heldout
// shard is the disjoint tail and never wraps. Every batch is a pure
// function of (corpus, corruption seed, index).
class SpanDataset {
 public:
  SpanDataset(std::vector<int64_t> corpus, DataConfig config,
              uint64_t corruption_seed);

  Batch train_batch(int64_t step) const;
  int64_t heldout_batch_count() const;
  Batch heldout_batch(int64_t index) const;
  const Vocab& vocab() const { return vocab_; }
  const DataConfig& config() const { return config_; }
  int64_t train_token_count() const { return train_tokens_; }
  int64_t heldout_token_count() const {
    return static_cast<int64_t>(corpus_.size()) - train_tokens_;
  }

 private:
  Batch make_batch(const int64_t* base, int64_t region_len, bool wrap,
                   int64_t first_example, uint64_t seed_salt) const;

  std::vector<int64_t> corpus_;
  DataConfig config_;
  Vocab vocab_;
  uint64_t corruption_seed_;
  int64_t train_tokens_;
};

// Plain-text corpus files: '#'-prefixed header, then space-separated ids.
void write_corpus(const std::string& path, const std::vector<int64_t>& corpus,
                  const Vocab& vocab, uint64_t seed);
std::vector<int64_t> read_corpus(const std::string& path, Vocab* vocab_out);

}  // namespace ffnlab
