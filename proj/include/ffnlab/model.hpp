#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ffnlab/ffn.hpp"
#include "ffnlab/tensor.hpp"

namespace ffnlab {

struct ModelConfig {
  int64_t num_layers = 12;
  int64_t d_model = 768;
  int64_t num_heads = 12;
  int64_t d_kv = 64;
  int64_t d_ff_base = 3072;
  FfnVariant ffn_variant = FfnVariant::ReLU;
  int64_t vocab_size = 64;
  uint64_t seed = 0;
  int64_t rel_pos_buckets = 32;
  int64_t rel_pos_max_distance = 128;

  // Gated variants run at the parameter-matched width, two-matrix variants
  // at the base width.
  int64_t d_ff() const {
    return is_gated(ffn_variant) ? matched_hidden_width(d_ff_base, 1)
                                 : d_ff_base;
  }
  void validate() const;
};

// T5-style relative position bucket. relative_position = key_pos - query_pos.
int64_t relative_position_bucket(int64_t relative_position, bool bidirectional,
                                 int64_t num_buckets, int64_t max_distance);

// table: [num_buckets, num_heads] -> bias [num_heads, q_len, k_len]
Tensor relative_position_bias(const Tensor& table, int64_t q_len, int64_t k_len,
                              bool bidirectional, int64_t num_buckets,
                              int64_t max_distance);

struct AttentionParams {
  Tensor wq, wk, wv;  // [d_model, num_heads * d_kv]
  Tensor wo;          // [num_heads * d_kv, d_model]
};

// softmax(Q K^T / sqrt(d_kv) + position_bias + mask) V per head, heads
// concatenated and projected. pos_bias may be undefined; causal adds the
// standard lower-triangular mask.
Tensor multi_head_attention(const Tensor& query_input, const Tensor& kv_input,
                            const AttentionParams& params, int64_t num_heads,
                            int64_t d_kv, const Tensor& pos_bias, bool causal);

struct EncoderLayer {
  Tensor attn_norm_gain, ffn_norm_gain;
  AttentionParams attn;
  FfnLayer ffn;
};

struct DecoderLayer {
  Tensor self_norm_gain, cross_norm_gain, ffn_norm_gain;
  AttentionParams self_attn, cross_attn;
  FfnLayer ffn;
};

// Pre-norm encoder-decoder with RMS normalization, shared embedding matrix
// (encoder input, decoder input, output projection) and bucketed relative
// position bias on the self-attention logits.
class TransformerModel {
 public:
  explicit TransformerModel(const ModelConfig& config);

  // tokens: row-major [batch, src_len] -> [batch, src_len, d_model]
  Tensor encode(const std::vector<int64_t>& tokens, int64_t batch,
                int64_t src_len) const;
  // Shifts targets right internally (pad as start token); logits at position
  // j therefore depend only on targets before j.
  // -> [batch, tgt_len, vocab]
  Tensor decode_logits(const Tensor& encoder_output,
                       const std::vector<int64_t>& targets, int64_t batch,
                       int64_t tgt_len) const;

  const ModelConfig& config() const { return config_; }
  // Name/tensor pairs in a stable order; names double as checkpoint keys.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const {
    return parameters_;
  }
  Tensor parameter(const std::string& name) const;
  int64_t parameter_total() const;

  Tensor embedding() const { return embedding_; }

 private:
  ModelConfig config_;
  Tensor embedding_;  // [vocab, d_model]
  Tensor encoder_pos_bias_;  // [buckets, heads]
  Tensor decoder_pos_bias_;
  std::vector<EncoderLayer> encoder_layers_;
  std::vector<DecoderLayer> decoder_layers_;
  Tensor encoder_final_gain_, decoder_final_gain_;
  std::vector<std::pair<std::string, Tensor>> parameters_;
};

// Checkpoints: a plain-text manifest (config plus tensor names/shapes/dtype)
// and a binary blob of little-endian float32 in manifest order.
void save_checkpoint(const TransformerModel& model,
                     const std::string& manifest_path,
                     const std::string& blob_path);
TransformerModel load_checkpoint(const std::string& manifest_path,
                                 const std::string& blob_path);

}  // namespace ffnlab
