#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ffnlab/span_data.hpp"

using namespace ffnlab;

TEST_CASE("corpus generation is deterministic and in range") {
  Vocab vocab{64, 16};
  std::vector<int64_t> a = generate_corpus(42, 5000, vocab);
  std::vector<int64_t> b = generate_corpus(42, 5000, vocab);
  CHECK(a == b);
  CHECK(a.size() == 5000);
  for (int64_t t : a) {
    CHECK(t >= Vocab::kFirstSymbol);
    CHECK(t < Vocab::kFirstSymbol + vocab.num_symbols());
  }
  CHECK(generate_corpus(42, 0, vocab).empty());
  CHECK(generate_corpus(43, 5000, vocab) != a);
}

TEST_CASE("corpus statistics are far from uniform") {
  Vocab vocab{64, 16};
  std::vector<int64_t> corpus = generate_corpus(7, 100000, vocab);
  std::map<std::pair<int64_t, int64_t>, int64_t> bigrams;
  for (size_t i = 1; i < corpus.size(); ++i) {
    ++bigrams[{corpus[i - 1], corpus[i]}];
  }
  int64_t max_count = 0;
  for (const auto& [key, count] : bigrams) max_count = std::max(max_count, count);
  // uniform over 46 symbols would give ~47 per bigram with stddev ~7;
  // demand a peak far outside that noise band
  double uniform = 100000.0 / (46.0 * 46.0);
  CHECK(max_count > 1.5 * uniform);
}

TEST_CASE("corrupt/reconstruct round-trips over many seeds") {
  Vocab vocab{64, 16};
  CorruptionConfig config;
  config.input_length = 64;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    config.seed = seed;
    std::vector<int64_t> tokens = generate_corpus(seed + 5000, 64, vocab);
    SpanCorruptionExample ex = corrupt(tokens, config, vocab);
    CHECK(reconstruct(ex, vocab) == tokens);
  }
}

TEST_CASE("a zero budget leaves the sequence intact") {
  Vocab vocab{64, 16};
  CorruptionConfig config;
  config.corruption_rate = 0.02;  // llround(0.02 * 20) == 0
  config.input_length = 20;
  config.seed = 3;
  std::vector<int64_t> tokens = generate_corpus(9, 20, vocab);
  SpanCorruptionExample ex = corrupt(tokens, config, vocab);
  CHECK(ex.input_ids == tokens);
  CHECK(ex.target_ids == std::vector<int64_t>{Vocab::kEos});
  CHECK(reconstruct(ex, vocab) == tokens);
}

TEST_CASE("golden corruption example is byte-stable") {
  Vocab vocab{64, 16};
  std::vector<int64_t> tokens = generate_corpus(17, 20, vocab);
  CorruptionConfig config;
  config.corruption_rate = 0.15;
  config.mean_span_length = 3.0;
  config.input_length = 20;
  config.seed = 17;
  SpanCorruptionExample ex = corrupt(tokens, config, vocab);

  std::string got = "tokens:";
  for (int64_t t : tokens) got += " " + std::to_string(t);
  got += "\n" + serialize_example(ex);

  std::ifstream in(FFNLAB_TEST_DATA_DIR "/golden_corruption.txt",
                   std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buffer;
  buffer << in.rdbuf();
  CHECK(got == buffer.str());
}

TEST_CASE("realized corruption stays near the configured rate") {
  Vocab vocab{64, 16};
  CorruptionConfig config;
  config.input_length = 64;
  int64_t deleted = 0;
  const int kExamples = 100;
  for (int i = 0; i < kExamples; ++i) {
    config.seed = static_cast<uint64_t>(i);
    std::vector<int64_t> tokens = generate_corpus(200 + i, 64, vocab);
    SpanCorruptionExample ex = corrupt(tokens, config, vocab);
    deleted += 64 - static_cast<int64_t>(ex.input_ids.size()) +
               static_cast<int64_t>(std::count_if(
                   ex.input_ids.begin(), ex.input_ids.end(),
                   [&](int64_t id) { return vocab.is_sentinel(id); }));
  }
  double realized = static_cast<double>(deleted) / (64.0 * kExamples);
  CHECK(realized > 0.15 * 0.7);
  CHECK(realized < 0.15 * 1.3);
}

TEST_CASE("reconstruct rejects malformed targets") {
  Vocab vocab{64, 16};
  int64_t s0 = vocab.sentinel_id(0);  // 63
  int64_t s1 = vocab.sentinel_id(1);  // 62

  // sentinel in the input with no matching target group
  SpanCorruptionExample missing;
  missing.input_ids = {5, s0, 6};
  missing.target_ids = {Vocab::kEos};
  CHECK_THROWS_AS(reconstruct(missing, vocab), std::invalid_argument);

  // repeated sentinel in the input
  SpanCorruptionExample repeated;
  repeated.input_ids = {5, s0, 6, s0};
  repeated.target_ids = {s0, 7, Vocab::kEos};
  CHECK_THROWS_AS(reconstruct(repeated, vocab), std::invalid_argument);

  // groups out of order
  SpanCorruptionExample swapped;
  swapped.input_ids = {5, s0, 6, s1};
  swapped.target_ids = {s1, 7, s0, 8, Vocab::kEos};
  CHECK_THROWS_AS(reconstruct(swapped, vocab), std::invalid_argument);

  // no sentinels: identity
  SpanCorruptionExample clean;
  clean.input_ids = {5, 6, 7};
  clean.target_ids = {Vocab::kEos};
  CHECK(reconstruct(clean, vocab) == std::vector<int64_t>{5, 6, 7});
}

TEST_CASE("sentinel exhaustion throws") {
  Vocab vocab{64, 1};
  CorruptionConfig config;
  config.corruption_rate = 0.5;
  config.mean_span_length = 1.0;
  config.input_length = 20;
  config.seed = 4;
  std::vector<int64_t> tokens = generate_corpus(4, 20, vocab);
  CHECK_THROWS_AS(corrupt(tokens, config, vocab), std::runtime_error);
}

TEST_CASE("corrupt validates its inputs") {
  Vocab vocab{64, 16};
  CorruptionConfig config;
  config.input_length = 10;
  std::vector<int64_t> wrong_len = {2, 3, 4};
  CHECK_THROWS_AS(corrupt(wrong_len, config, vocab), std::invalid_argument);

  CorruptionConfig bad_rate;
  bad_rate.corruption_rate = 1.5;
  CHECK_THROWS_AS(bad_rate.validate(), std::invalid_argument);
}

TEST_CASE("dataset batches have the contracted shape and padding") {
  DataConfig config;
  config.corpus_tokens = 20000;
  config.batch_size = 4;
  config.input_length = 32;
  config.target_length = 12;
  Vocab vocab = config.vocab();
  std::vector<int64_t> corpus =
      generate_corpus(config.corpus_seed, config.corpus_tokens, vocab);
  SpanDataset data(corpus, config, 99);

  Batch batch = data.train_batch(0);
  CHECK(batch.batch_size == 4);
  CHECK(batch.inputs.size() == 4 * 32);
  CHECK(batch.targets.size() == 4 * 12);
  for (int64_t id : batch.inputs) {
    CHECK(id >= 0);
    CHECK(id < config.vocab_size);
  }
  // every target row ends in eos-then-pads
  for (int64_t row = 0; row < 4; ++row) {
    const int64_t* t = batch.targets.data() + row * 12;
    int64_t eos_at = -1;
    for (int64_t i = 0; i < 12; ++i) {
      if (t[i] == Vocab::kEos) eos_at = i;
      if (eos_at >= 0 && i > eos_at) CHECK(t[i] == Vocab::kPad);
    }
    CHECK(eos_at >= 0);
  }

  // determinism: same step, same bytes
  Batch again = data.train_batch(0);
  CHECK(batch.inputs == again.inputs);
  CHECK(batch.targets == again.targets);
  CHECK(data.train_batch(1).inputs != batch.inputs);
}

TEST_CASE("train and heldout shards are disjoint") {
  DataConfig config;
  config.corpus_tokens = 20480;
  config.heldout_fraction = 0.10;
  Vocab vocab = config.vocab();
  std::vector<int64_t> corpus =
      generate_corpus(config.corpus_seed, config.corpus_tokens, vocab);
  SpanDataset data(corpus, config, 99);
  CHECK(data.train_token_count() == 18432);
  CHECK(data.heldout_token_count() == 2048);
  CHECK(data.heldout_batch_count() >= 1);

  Batch h0 = data.heldout_batch(0);
  CHECK(h0.inputs.size() ==
        static_cast<size_t>(h0.batch_size * h0.input_length));
  // heldout is deterministic too
  CHECK(data.heldout_batch(0).inputs == h0.inputs);
  CHECK_THROWS_AS(data.heldout_batch(data.heldout_batch_count()),
                  std::out_of_range);
}

TEST_CASE("target length defaults to the reference ratio") {
  DataConfig config;
  config.input_length = 512;
  config.target_length = 0;
  CHECK(config.effective_target_length() == 114);
  DataConfig other;
  other.input_length = 64;
  other.target_length = 16;
  CHECK(other.effective_target_length() == 16);
}

TEST_CASE("corpus files round-trip") {
  Vocab vocab{64, 16};
  std::vector<int64_t> corpus = generate_corpus(3, 1300, vocab);
  std::string path = "span_data_roundtrip.tmp";
  write_corpus(path, corpus, vocab, 3);
  Vocab read_vocab;
  std::vector<int64_t> reread = read_corpus(path, &read_vocab);
  CHECK(reread == corpus);
  CHECK(read_vocab.vocab_size == 64);
  CHECK(read_vocab.num_sentinels == 16);
  std::remove(path.c_str());
}

TEST_CASE("vocab layout") {
  Vocab vocab{64, 16};
  CHECK(vocab.num_symbols() == 46);
  CHECK(vocab.sentinel_id(0) == 63);
  CHECK(vocab.sentinel_id(15) == 48);
  CHECK(vocab.is_sentinel(48));
  CHECK_FALSE(vocab.is_sentinel(47));
  CHECK(vocab.sentinel_index(63) == 0);
  Vocab bad{10, 9};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
