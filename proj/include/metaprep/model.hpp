#pragma once

#include "metaprep/ops.hpp"
#include "metaprep/param_set.hpp"

#include <optional>
#include <span>

namespace metaprep::nn {

using ad::ParamSet;
using ad::Tensor;

// Miniature BERT-style encoder. Defaults keep gradient checks and unrolled
// second-order backprop in the sub-second range.
struct ModelConfig {
  Index vocab_size{64};
  Index max_len{32};
  Index d_model{32};
  Index n_heads{4};
  Index n_layers{2};
  Index d_ff{64};
  Index n_segments{2};
  double dropout_rate{0.0};

  void validate() const;
  Index head_dim() const { return d_model / n_heads; }
};

struct EncoderOutput {
  Tensor token_states;  // [B, T, D]
  Tensor pooled;        // [B, D] first-position state through a tanh projection
};

// Per-layer attention weights [B, H, T, T], filled when a trace is passed to
// encode. Test instrumentation only.
struct EncodeTrace {
  std::vector<Tensor> attention;
};

// Truncated normal (stddev 0.02, cut at 2 sigma) for weights, zeros for
// biases, ones for layer-norm gains. Deterministic per seed.
ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

Index param_count(const ModelConfig& cfg);

// Returns the subset of `params` that survives into downstream fine-tuning:
// embeddings and encoder layers. Heads and the pooler are discarded.
ParamSet encoder_subset(const ParamSet& params);

// Fresh pooler + task head entries for fine-tuning (see finetune module).
void add_pooler_params(ParamSet& params, const ModelConfig& cfg, RngStream& rng);

EncoderOutput encode(const ParamSet& params, const ModelConfig& cfg, const TokenMatrix& tokens,
                     const TokenMatrix& segments, const TokenMatrix& attention_mask,
                     RngStream* dropout_rng = nullptr, EncodeTrace* trace = nullptr);

// Mean cross-entropy over masked positions only. Positions are flat b*T + t
// indices; targets hold the original token ids.
Tensor mlm_loss(const ParamSet& params, const EncoderOutput& output, std::span<const Index> mask_positions,
                std::span<const Index> mask_targets);

// 2-class next-sentence cross-entropy on the pooled state.
Tensor nsp_loss(const ParamSet& params, const EncoderOutput& output, std::span<const Index> labels);

// 2-class pair-matching cross-entropy through the head selected by `tag`
// (QA_MATCH or QQ_MATCH); other tags are an error.
Tensor pair_loss(const ParamSet& params, const EncoderOutput& output, std::span<const Index> labels, TaskTag tag);

}  // namespace metaprep::nn
