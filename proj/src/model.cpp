#include "ffnlab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ffnlab {

void ModelConfig::validate() const {
  if (num_layers < 0) throw std::invalid_argument("num_layers must be >= 0");
  if (d_model <= 0 || num_heads <= 0 || d_kv <= 0 || d_ff_base <= 0 ||
      vocab_size <= 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (rel_pos_buckets < 2 || rel_pos_max_distance < 2) {
    throw std::invalid_argument("relative position bias needs >= 2 buckets and distance");
  }
  matched_hidden_width(d_ff_base, 1);  // throws if the matched width vanishes
}

int64_t relative_position_bucket(int64_t relative_position, bool bidirectional,
                                 int64_t num_buckets, int64_t max_distance) {
  int64_t bucket = 0;
  int64_t nb = num_buckets;
  int64_t n;
  if (bidirectional) {
    nb /= 2;
    if (relative_position > 0) bucket += nb;
    n = std::llabs(relative_position);
  } else {
    n = std::max<int64_t>(-relative_position, 0);
  }
  int64_t max_exact = nb / 2;
  if (n < max_exact) return bucket + n;
  double frac = std::log(static_cast<double>(n) / max_exact) /
                std::log(static_cast<double>(max_distance) / max_exact);
  int64_t v = max_exact + static_cast<int64_t>(frac * (nb - max_exact));
  return bucket + std::min(v, nb - 1);
}

Tensor relative_position_bias(const Tensor& table, int64_t q_len, int64_t k_len,
                              bool bidirectional, int64_t num_buckets,
                              int64_t max_distance) {
  if (table.ndim() != 2 || table.dim(0) != num_buckets) {
    throw std::invalid_argument("relative_position_bias: table must be [buckets, heads]");
  }
  std::vector<int64_t> buckets(static_cast<size_t>(q_len * k_len));
  for (int64_t q = 0; q < q_len; ++q) {
    for (int64_t k = 0; k < k_len; ++k) {
      buckets[q * k_len + k] =
          relative_position_bucket(k - q, bidirectional, num_buckets, max_distance);
    }
  }
  Tensor gathered = embedding_lookup(table, buckets, {q_len, k_len});
  return permute(gathered, {2, 0, 1});  // [heads, q_len, k_len]
}

Tensor multi_head_attention(const Tensor& query_input, const Tensor& kv_input,
                            const AttentionParams& params, int64_t num_heads,
                            int64_t d_kv, const Tensor& pos_bias, bool causal) {
  if (query_input.ndim() != 3 || kv_input.ndim() != 3 ||
      query_input.dim(0) != kv_input.dim(0)) {
    throw std::invalid_argument("multi_head_attention: inputs must be [batch, seq, d_model]");
  }
  int64_t batch = query_input.dim(0);
  int64_t q_len = query_input.dim(1);
  int64_t k_len = kv_input.dim(1);

  auto split_heads = [&](const Tensor& t, int64_t seq) {
    return permute(reshape(t, {batch, seq, num_heads, d_kv}), {0, 2, 1, 3});
  };
  Tensor q = split_heads(matmul(query_input, params.wq), q_len);
  Tensor k = split_heads(matmul(kv_input, params.wk), k_len);
  Tensor v = split_heads(matmul(kv_input, params.wv), k_len);

  Tensor scores = scale(bmm(q, transpose(k)),
                        1.0 / std::sqrt(static_cast<double>(d_kv)));
  if (pos_bias.defined()) {
    Shape expect{num_heads, q_len, k_len};
    if (pos_bias.shape() != expect) {
      throw std::invalid_argument("multi_head_attention: bias shape " +
                                  shape_str(pos_bias.shape()) + " != " +
                                  shape_str(expect));
    }
    scores = add(scores, pos_bias);
  }
  if (causal) {
    if (q_len != k_len) {
      throw std::invalid_argument("multi_head_attention: causal mask needs q_len == k_len");
    }
    std::vector<double> mask(static_cast<size_t>(q_len * k_len), 0.0);
    for (int64_t i = 0; i < q_len; ++i) {
      for (int64_t j = i + 1; j < k_len; ++j) mask[i * k_len + j] = -1e30;
    }
    scores = add(scores, Tensor::from_data({q_len, k_len}, std::move(mask)));
  }

  Tensor weights = softmax(scores);               // [batch, heads, q, k]
  Tensor mixed = bmm(weights, v);                 // [batch, heads, q, d_kv]
  Tensor merged = reshape(permute(mixed, {0, 2, 1, 3}),
                          {batch, q_len, num_heads * d_kv});
  return matmul(merged, params.wo);
}

namespace {

constexpr double kRmsEps = 1e-6;

Tensor init_matrix(int64_t rows, int64_t cols, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(rows * cols));
  double stddev = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& x : w) x = stddev * rng.normal();
  return Tensor::from_data({rows, cols}, std::move(w), true);
}

}  // namespace

TransformerModel::TransformerModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  int64_t d = config_.d_model;
  int64_t inner = config_.num_heads * config_.d_kv;
  int64_t d_ff = config_.d_ff();

  auto reg = [&](const std::string& name, Tensor t) {
    parameters_.emplace_back(name, t);
    return t;
  };
  auto make_attention = [&](const std::string& prefix) {
    AttentionParams p;
    p.wq = reg(prefix + ".wq", init_matrix(d, inner, rng));
    p.wk = reg(prefix + ".wk", init_matrix(d, inner, rng));
    p.wv = reg(prefix + ".wv", init_matrix(d, inner, rng));
    p.wo = reg(prefix + ".wo", init_matrix(inner, d, rng));
    return p;
  };
  auto make_ffn = [&](const std::string& prefix) {
    FfnLayer ffn = make_ffn_layer(config_.ffn_variant, d, d_ff, rng);
    reg(prefix + ".w1", ffn.w1);
    if (ffn.v.defined()) reg(prefix + ".v", ffn.v);
    reg(prefix + ".w2", ffn.w2);
    return ffn;
  };
  auto make_gain = [&](const std::string& name) {
    return reg(name, Tensor::full({d}, 1.0, true));
  };

  // Embedding stddev 1/sqrt(vocab) keeps shared-projection logits O(1).
  embedding_ = reg("embedding", init_matrix(config_.vocab_size, d, rng));
  encoder_pos_bias_ = reg("encoder.pos_bias",
                          Tensor::zeros({config_.rel_pos_buckets,
                                         config_.num_heads}, true));
  decoder_pos_bias_ = reg("decoder.pos_bias",
                          Tensor::zeros({config_.rel_pos_buckets,
                                         config_.num_heads}, true));

  for (int64_t i = 0; i < config_.num_layers; ++i) {
    std::string p = "encoder." + std::to_string(i);
    EncoderLayer layer;
    layer.attn_norm_gain = make_gain(p + ".attn_norm");
    layer.attn = make_attention(p + ".attn");
    layer.ffn_norm_gain = make_gain(p + ".ffn_norm");
    layer.ffn = make_ffn(p + ".ffn");
    encoder_layers_.push_back(std::move(layer));
  }
  encoder_final_gain_ = make_gain("encoder.final_norm");

  for (int64_t i = 0; i < config_.num_layers; ++i) {
    std::string p = "decoder." + std::to_string(i);
    DecoderLayer layer;
    layer.self_norm_gain = make_gain(p + ".self_norm");
    layer.self_attn = make_attention(p + ".self_attn");
    layer.cross_norm_gain = make_gain(p + ".cross_norm");
    layer.cross_attn = make_attention(p + ".cross_attn");
    layer.ffn_norm_gain = make_gain(p + ".ffn_norm");
    layer.ffn = make_ffn(p + ".ffn");
    decoder_layers_.push_back(std::move(layer));
  }
  decoder_final_gain_ = make_gain("decoder.final_norm");
}

Tensor TransformerModel::encode(const std::vector<int64_t>& tokens,
                                int64_t batch, int64_t src_len) const {
  if (static_cast<int64_t>(tokens.size()) != batch * src_len) {
    throw std::invalid_argument("encode: token count does not match [batch, src_len]");
  }
  Tensor x = embedding_lookup(embedding_, tokens, {batch, src_len});
  Tensor bias;
  if (!encoder_layers_.empty()) {
    bias = relative_position_bias(encoder_pos_bias_, src_len, src_len,
                                  /*bidirectional=*/true,
                                  config_.rel_pos_buckets,
                                  config_.rel_pos_max_distance);
  }
  for (const EncoderLayer& layer : encoder_layers_) {
    Tensor normed = rms_normalize(x, layer.attn_norm_gain, kRmsEps);
    Tensor attn_out =
        multi_head_attention(normed, normed, layer.attn, config_.num_heads,
                             config_.d_kv, bias, /*causal=*/false);
    Tensor h = add(x, attn_out);
    x = add(h, ffn_forward(layer.ffn, rms_normalize(h, layer.ffn_norm_gain, kRmsEps)));
  }
  return rms_normalize(x, encoder_final_gain_, kRmsEps);
}

Tensor TransformerModel::decode_logits(const Tensor& encoder_output,
                                       const std::vector<int64_t>& targets,
                                       int64_t batch, int64_t tgt_len) const {
  if (static_cast<int64_t>(targets.size()) != batch * tgt_len) {
    throw std::invalid_argument("decode_logits: target count does not match [batch, tgt_len]");
  }
  // Shift right: position 0 sees pad, position t sees target t-1.
  std::vector<int64_t> shifted(targets.size());
  for (int64_t b = 0; b < batch; ++b) {
    shifted[b * tgt_len] = 0;
    for (int64_t t = 1; t < tgt_len; ++t) {
      shifted[b * tgt_len + t] = targets[b * tgt_len + t - 1];
    }
  }
  Tensor x = embedding_lookup(embedding_, shifted, {batch, tgt_len});
  Tensor bias;
  if (!decoder_layers_.empty()) {
    bias = relative_position_bias(decoder_pos_bias_, tgt_len, tgt_len,
                                  /*bidirectional=*/false,
                                  config_.rel_pos_buckets,
                                  config_.rel_pos_max_distance);
  }
  for (const DecoderLayer& layer : decoder_layers_) {
    Tensor normed = rms_normalize(x, layer.self_norm_gain, kRmsEps);
    Tensor h = add(x, multi_head_attention(normed, normed, layer.self_attn,
                                           config_.num_heads, config_.d_kv,
                                           bias, /*causal=*/true));
    Tensor h2 = add(h, multi_head_attention(
                           rms_normalize(h, layer.cross_norm_gain, kRmsEps),
                           encoder_output, layer.cross_attn, config_.num_heads,
                           config_.d_kv, Tensor(), /*causal=*/false));
    x = add(h2, ffn_forward(layer.ffn,
                            rms_normalize(h2, layer.ffn_norm_gain, kRmsEps)));
  }
  x = rms_normalize(x, decoder_final_gain_, kRmsEps);
  return matmul(x, transpose(embedding_));  // shared output projection
}

Tensor TransformerModel::parameter(const std::string& name) const {
  for (const auto& [n, t] : parameters_) {
    if (n == name) return t;
  }
  throw std::invalid_argument("no parameter named " + name);
}

int64_t TransformerModel::parameter_total() const {
  int64_t total = 0;
  for (const auto& [name, t] : parameters_) total += t.size();
  return total;
}

// ---- checkpoints ---------------------------------------------------------

void save_checkpoint(const TransformerModel& model,
                     const std::string& manifest_path,
                     const std::string& blob_path) {
  const ModelConfig& c = model.config();
  std::ofstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path);
  manifest << "format ffnlab-checkpoint 1\n"
           << "num_layers " << c.num_layers << "\n"
           << "d_model " << c.d_model << "\n"
           << "num_heads " << c.num_heads << "\n"
           << "d_kv " << c.d_kv << "\n"
           << "d_ff_base " << c.d_ff_base << "\n"
           << "ffn_variant " << variant_name(c.ffn_variant) << "\n"
           << "vocab_size " << c.vocab_size << "\n"
           << "seed " << c.seed << "\n"
           << "rel_pos_buckets " << c.rel_pos_buckets << "\n"
           << "rel_pos_max_distance " << c.rel_pos_max_distance << "\n";

  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + blob_path);
  for (const auto& [name, t] : model.parameters()) {
    manifest << "tensor " << name;
    for (int64_t d : t.shape()) manifest << " " << d;
    manifest << " f32\n";
    std::vector<float> buf(t.data().begin(), t.data().end());
    blob.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!manifest || !blob) {
    throw std::runtime_error("failed writing checkpoint");
  }
}

TransformerModel load_checkpoint(const std::string& manifest_path,
                                 const std::string& blob_path) {
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot read " + manifest_path);
  ModelConfig config;
  struct Entry { std::string name; Shape shape; };
  std::vector<Entry> entries;
  std::string line;
  while (std::getline(manifest, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string name; int version = 0;
      ls >> name >> version;
      if (name != "ffnlab-checkpoint" || version != 1) {
        throw std::runtime_error("unsupported checkpoint format in " + manifest_path);
      }
    } else if (key == "num_layers") ls >> config.num_layers;
    else if (key == "d_model") ls >> config.d_model;
    else if (key == "num_heads") ls >> config.num_heads;
    else if (key == "d_kv") ls >> config.d_kv;
    else if (key == "d_ff_base") ls >> config.d_ff_base;
    else if (key == "vocab_size") ls >> config.vocab_size;
    else if (key == "seed") ls >> config.seed;
    else if (key == "rel_pos_buckets") ls >> config.rel_pos_buckets;
    else if (key == "rel_pos_max_distance") ls >> config.rel_pos_max_distance;
    else if (key == "ffn_variant") {
      std::string v; ls >> v;
      config.ffn_variant = variant_from_name(v);
    } else if (key == "tensor") {
      Entry e;
      ls >> e.name;
      std::vector<std::string> rest;
      std::string tok;
      while (ls >> tok) rest.push_back(tok);
      if (rest.empty() || rest.back() != "f32") {
        throw std::runtime_error("bad tensor line in " + manifest_path);
      }
      for (size_t i = 0; i + 1 < rest.size(); ++i) {
        e.shape.push_back(std::stoll(rest[i]));
      }
      entries.push_back(std::move(e));
    } else if (!key.empty()) {
      throw std::runtime_error("unknown manifest key \"" + key + "\"");
    }
  }

  TransformerModel model(config);
  if (entries.size() != model.parameters().size()) {
    throw std::runtime_error("checkpoint tensor count does not match the config");
  }
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot read " + blob_path);
  for (size_t i = 0; i < entries.size(); ++i) {
    auto [name, t] = model.parameters()[i];
    if (entries[i].name != name || entries[i].shape != t.shape()) {
      throw std::runtime_error("checkpoint tensor " + entries[i].name +
                               " does not match model parameter " + name);
    }
    std::vector<float> buf(static_cast<size_t>(t.size()));
    blob.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!blob) throw std::runtime_error("checkpoint blob truncated at " + name);
    auto& data = t.mutable_data();
    for (size_t j = 0; j < buf.size(); ++j) data[j] = buf[j];
  }
  return model;
}

}  // namespace ffnlab
