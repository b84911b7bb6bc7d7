#include "metaprep/model.hpp"

#include <cmath>
#include <string>

namespace metaprep::nn {

namespace {

using ad::Graph;

constexpr double kInitStd = 0.02;
constexpr double kMaskBias = -1e9;
constexpr double kLayerNormEps = 1e-12;

Tensor trunc_normal(Shape shape, RngStream& rng) {
  Storage v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = rng.truncated_normal(kInitStd, 2.0);
  return Tensor(std::move(shape), std::move(v));
}

std::string layer_key(Index layer, const char* suffix) {
  return "layer" + std::to_string(layer) + "." + suffix;
}

void check_ids(const char* what, const TokenMatrix& m, Index limit) {
  for (Index id : m.ids) {
    if (id < 0 || id >= limit) {
      throw ValueError(std::string("encode: ") + what + " id " + std::to_string(id) +
                       " out of range [0, " + std::to_string(limit) + ")");
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 8) throw ConfigError("model: vocab_size must be >= 8 (4 reserved ids)");
  if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0 || max_len <= 0) {
    throw ConfigError("model: dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (n_segments < 2) throw ConfigError("model: n_segments must be >= 2");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("model: dropout_rate must be in [0, 1)");
}

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RngStream rng = RngStream::from_seed(seed).split("model_init");
  ParamSet p;
  const Index d = cfg.d_model, f = cfg.d_ff;
  p.insert("emb.tok", trunc_normal({cfg.vocab_size, d}, rng));
  p.insert("emb.pos", trunc_normal({cfg.max_len, d}, rng));
  p.insert("emb.seg", trunc_normal({cfg.n_segments, d}, rng));
  p.insert("emb.ln.gain", Tensor::full({d}, 1.0));
  p.insert("emb.ln.bias", Tensor::zeros({d}));
  for (Index l = 0; l < cfg.n_layers; ++l) {
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      p.insert(layer_key(l, w), trunc_normal({d, d}, rng));
    }
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
      p.insert(layer_key(l, b), Tensor::zeros({d}));
    }
    p.insert(layer_key(l, "ln1.gain"), Tensor::full({d}, 1.0));
    p.insert(layer_key(l, "ln1.bias"), Tensor::zeros({d}));
    p.insert(layer_key(l, "ffn.w1"), trunc_normal({d, f}, rng));
    p.insert(layer_key(l, "ffn.b1"), Tensor::zeros({f}));
    p.insert(layer_key(l, "ffn.w2"), trunc_normal({f, d}, rng));
    p.insert(layer_key(l, "ffn.b2"), Tensor::zeros({d}));
    p.insert(layer_key(l, "ln2.gain"), Tensor::full({d}, 1.0));
    p.insert(layer_key(l, "ln2.bias"), Tensor::zeros({d}));
  }
  p.insert("pool.w", trunc_normal({d, d}, rng));
  p.insert("pool.b", Tensor::zeros({d}));
  p.insert("mlm.bias", Tensor::zeros({cfg.vocab_size}));
  p.insert("nsp.w", trunc_normal({d, 2}, rng));
  p.insert("nsp.b", Tensor::zeros({2}));
  p.insert("qa.w", trunc_normal({d, 2}, rng));
  p.insert("qa.b", Tensor::zeros({2}));
  p.insert("qq.w", trunc_normal({d, 2}, rng));
  p.insert("qq.b", Tensor::zeros({2}));
  return p;
}

Index param_count(const ModelConfig& cfg) { return init_params(cfg, 0).total_size(); }

ParamSet encoder_subset(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params) {
    if (name.rfind("emb.", 0) == 0 || name.rfind("layer", 0) == 0) out.insert(name, t.detached());
  }
  return out;
}

void add_pooler_params(ParamSet& params, const ModelConfig& cfg, RngStream& rng) {
  params.insert("pool.w", trunc_normal({cfg.d_model, cfg.d_model}, rng));
  params.insert("pool.b", Tensor::zeros({cfg.d_model}));
}

EncoderOutput encode(const ParamSet& params, const ModelConfig& cfg, const TokenMatrix& tokens,
                     const TokenMatrix& segments, const TokenMatrix& attention_mask,
                     RngStream* dropout_rng, EncodeTrace* trace) {
  const Index b = tokens.rows, t = tokens.cols;
  const Index d = cfg.d_model, h = cfg.n_heads, hd = cfg.head_dim();
  if (segments.rows != b || segments.cols != t || attention_mask.rows != b || attention_mask.cols != t) {
    throw ShapeError("encode: tokens " + std::to_string(b) + "x" + std::to_string(t) +
                     ", segments " + std::to_string(segments.rows) + "x" + std::to_string(segments.cols) +
                     ", mask " + std::to_string(attention_mask.rows) + "x" + std::to_string(attention_mask.cols));
  }
  if (t > cfg.max_len) {
    throw ShapeError("encode: sequence length " + std::to_string(t) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
  check_ids("token", tokens, cfg.vocab_size);
  check_ids("segment", segments, cfg.n_segments);
  const double rate = cfg.dropout_rate;

  // Additive bias over keys: 0 where attendable, -1e9 where masked out.
  Storage bias_vals(b * t);
  for (Index i = 0; i < b * t; ++i) {
    Index m = attention_mask.ids[static_cast<size_t>(i)];
    if (m != 0 && m != 1) throw ValueError("encode: attention mask entries must be 0 or 1");
    bias_vals(i) = m == 1 ? 0.0 : kMaskBias;
  }
  Tensor mask_bias(Shape{b, 1, 1, t}, std::move(bias_vals));

  Tensor x = ad::embedding_gather(params.at("emb.tok"), tokens.ids, {b, t});
  Tensor pos = ad::slice(params.at("emb.pos"), 0, 0, t);
  x = ad::add(x, ad::broadcast_to(pos, {b, t, d}));
  x = ad::add(x, ad::embedding_gather(params.at("emb.seg"), segments.ids, {b, t}));
  x = ad::layer_norm(x, params.at("emb.ln.gain"), params.at("emb.ln.bias"), kLayerNormEps);
  x = ad::dropout(x, rate, dropout_rng);

  const double scaling = 1.0 / std::sqrt(static_cast<double>(hd));
  for (Index l = 0; l < cfg.n_layers; ++l) {
    auto key = [l](const char* s) { return layer_key(l, s); };
    auto heads = [&](Tensor y) {
      // [B,T,D] -> [B,H,T,hd]
      return ad::swap_axes(ad::reshape(std::move(y), {b, t, h, hd}), 1, 2);
    };
    Tensor q = heads(ad::linear(x, params.at(key("attn.wq")), params.at(key("attn.bq"))));
    Tensor k = heads(ad::linear(x, params.at(key("attn.wk")), params.at(key("attn.bk"))));
    Tensor v = heads(ad::linear(x, params.at(key("attn.wv")), params.at(key("attn.bv"))));
    Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k)), scaling);  // [B,H,T,T]
    scores = ad::add(scores, ad::broadcast_to(mask_bias, {b, h, t, t}));
    Tensor att = ad::softmax(scores);
    if (trace != nullptr) trace->attention.push_back(att.detached());
    att = ad::dropout(att, rate, dropout_rng);
    Tensor ctx = ad::reshape(ad::swap_axes(ad::matmul(att, v), 1, 2), {b, t, d});
    Tensor attn_out = ad::dropout(ad::linear(ctx, params.at(key("attn.wo")), params.at(key("attn.bo"))),
                                  rate, dropout_rng);
    x = ad::layer_norm(ad::add(x, attn_out), params.at(key("ln1.gain")), params.at(key("ln1.bias")),
                       kLayerNormEps);
    Tensor ff = ad::gelu(ad::linear(x, params.at(key("ffn.w1")), params.at(key("ffn.b1"))));
    ff = ad::dropout(ad::linear(ff, params.at(key("ffn.w2")), params.at(key("ffn.b2"))), rate, dropout_rng);
    x = ad::layer_norm(ad::add(x, ff), params.at(key("ln2.gain")), params.at(key("ln2.bias")),
                       kLayerNormEps);
  }

  Tensor first = ad::reshape(ad::slice(x, 1, 0, 1), {b, d});
  Tensor pooled = ad::tanh(ad::linear(first, params.at("pool.w"), params.at("pool.b")));

  EncoderOutput out;
  out.token_states = std::move(x);
  out.pooled = std::move(pooled);
  return out;
}

Tensor mlm_loss(const ParamSet& params, const EncoderOutput& output, std::span<const Index> mask_positions,
                std::span<const Index> mask_targets) {
  if (mask_positions.empty()) {
    throw ValueError("mlm_loss: empty mask positions (degenerate batch)");
  }
  if (mask_positions.size() != mask_targets.size()) {
    throw ShapeError("mlm_loss: " + std::to_string(mask_positions.size()) + " positions vs " +
                     std::to_string(mask_targets.size()) + " targets");
  }
  const Shape& s = output.token_states.shape();
  Index bt = s[0] * s[1], d = s[2];
  Tensor flat = ad::reshape(output.token_states, {bt, d});
  Tensor picked = ad::embedding_gather(flat, mask_positions, {static_cast<Index>(mask_positions.size())});
  // Tied decoder: score against the input embedding matrix, plus output bias.
  Tensor logits = ad::add(ad::matmul(picked, ad::transpose(params.at("emb.tok"))),
                          ad::broadcast_to(params.at("mlm.bias"),
                                           {static_cast<Index>(mask_positions.size()),
                                            params.at("emb.tok").dim(0)}));
  return ad::cross_entropy_with_logits(logits, mask_targets);
}

Tensor nsp_loss(const ParamSet& params, const EncoderOutput& output, std::span<const Index> labels) {
  Tensor logits = ad::linear(output.pooled, params.at("nsp.w"), params.at("nsp.b"));
  return ad::cross_entropy_with_logits(logits, labels);
}

Tensor pair_loss(const ParamSet& params, const EncoderOutput& output, std::span<const Index> labels, TaskTag tag) {
  const char* prefix = nullptr;
  if (tag == TaskTag::kQaMatch) {
    prefix = "qa";
  } else if (tag == TaskTag::kQqMatch) {
    prefix = "qq";
  } else {
    throw ValueError("pair_loss: unknown task tag '" + task_tag_name(tag) + "'");
  }
  Tensor logits = ad::linear(output.pooled, params.at(std::string(prefix) + ".w"),
                             params.at(std::string(prefix) + ".b"));
  return ad::cross_entropy_with_logits(logits, labels);
}

}  // namespace metaprep::nn
