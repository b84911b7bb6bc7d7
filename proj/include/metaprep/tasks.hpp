#pragma once

#include "metaprep/common.hpp"
#include "metaprep/rng.hpp"
#include "metaprep/tensor.hpp"

#include <array>
#include <iosfwd>
#include <vector>

namespace metaprep::tasks {

// Reserved token ids; content ids start at kFirstContent.
constexpr Index kPad = 0;
constexpr Index kCls = 1;
constexpr Index kSep = 2;
constexpr Index kMask = 3;
constexpr Index kFirstContent = 4;

// Seeded grammar: an order-2 chain over content tokens mixed with
// per-document topic bands, so masked tokens are predictable from context and
// true-next sentence pairs are distinguishable from random ones.
struct GeneratorSpec {
  std::uint64_t seed{0};
  Index vocab_size{64};
  int n_topics{4};
  int min_sentence_len{6};
  int max_sentence_len{10};
  int min_doc_sentences{4};
  int max_doc_sentences{8};
  double chain_prob{0.5};
  double topic_prob{0.8};

  Index n_content() const { return vocab_size - kFirstContent; }
  std::uint64_t chain_key() const { return mix64(seed ^ 0xC0FFEEull); }
  Index band_lo(int topic) const;
  Index band_width(int topic) const;
  int band_of(Index token) const;
};

struct Corpus {
  std::vector<std::vector<std::vector<Index>>> documents;  // doc -> sentence -> token ids
  Index vocab_size{0};
  GeneratorSpec spec;
  std::vector<int> doc_topics;

  Index n_documents() const { return static_cast<Index>(documents.size()); }
};

Corpus generate_corpus(std::uint64_t seed, Index n_docs, Index vocab_size);
Corpus generate_corpus(const GeneratorSpec& spec, Index n_docs);

// Line-delimited integer sequences: one sentence per line, blank line between
// documents. Import keeps documents only (generator metadata is not part of
// the format).
void save_corpus(const Corpus& corpus, std::ostream& out);
Corpus load_corpus(std::istream& in, Index vocab_size);

Index chain_successor(std::uint64_t chain_key, Index prev2, Index prev1, Index n_content);
std::vector<Index> generate_sentence(const GeneratorSpec& spec, int topic, int len, Index& prev2, Index& prev1,
                                     RngStream& rng);

// One pre-training or fine-tuning mini-batch. Only the fields demanded by
// `tag` are populated.
struct Batch {
  TokenMatrix tokens;
  TokenMatrix segments;
  TokenMatrix attention_mask;
  std::vector<Index> mask_positions;                  // flat b * T + t
  std::vector<Index> mask_targets;                    // original ids at masked positions
  std::vector<Index> labels;                          // per-example class labels
  std::vector<std::array<Index, 4>> cloze_candidates; // per-example answer ids
  TaskTag tag{TaskTag::kMlm};

  Index batch_size() const { return tokens.rows; }
  Index seq_len() const { return tokens.cols; }
};

struct MaskOptions {
  double select_prob{0.15};
  double mask_prob{0.8};
  double random_prob{0.1};
  // keep-original probability is the remainder
};

// BERT-style masking over already-packed rows. Every maskable (content) token
// is selected independently; selected positions get MASK / random content /
// kept-original by the configured mix. At least one position per example is
// always selected.
Batch mask_batch(const std::vector<std::vector<Index>>& rows, Index vocab_size, RngStream& rng,
                 const MaskOptions& opts = {});

struct NspPair {
  std::vector<Index> first;
  std::vector<Index> second;
  Index label{0};  // 1 when `second` actually follows `first`
};

NspPair make_nsp_pair(const Corpus& corpus, RngStream& rng);

std::vector<Index> pack_single(const std::vector<Index>& sentence, Index seq_len);
void pack_pair(const std::vector<Index>& a, const std::vector<Index>& b, Index seq_len, std::vector<Index>& tokens,
               std::vector<Index>& segments);

Batch make_mlm_batch(const Corpus& corpus, Index batch_size, Index seq_len, RngStream& rng,
                     const MaskOptions& opts = {});
Batch make_nsp_batch(const Corpus& corpus, Index batch_size, Index seq_len, RngStream& rng);
// Synthetic QA/QQ matching: label 1 iff both sides come from the same topic.
Batch make_pair_task_batch(const Corpus& corpus, TaskTag tag, Index batch_size, Index seq_len, RngStream& rng);

struct TaskMix {
  std::vector<std::pair<TaskTag, double>> entries;
  void validate() const;
};

// k+1 i.i.d. draws from the mix; the last batch is the meta-test batch.
std::vector<Batch> sample_pretrain_batches(const Corpus& corpus, const TaskMix& mix, Index k_plus_1,
                                           Index batch_size, Index seq_len, RngStream& rng);

// Closed-form analytic family: L(theta) = 1/2 (theta - c)^T A (theta - c)
// with positive diagonal A.
struct QuadraticTask {
  Eigen::ArrayXd curvature;  // diagonal of A, entries > 0
  Eigen::ArrayXd center;

  static QuadraticTask random(Index dim, RngStream& rng);
  void validate() const;
};

// (I - alpha A)^k A (theta_k - c) with theta_k = c + (I - alpha A)^k (theta0 - c),
// evaluated in closed form. Requires alpha * max(A) < 2.
Eigen::ArrayXd quadratic_meta_gradient_oracle(const QuadraticTask& task, const Eigen::ArrayXd& theta0,
                                              double alpha, int k);

// The same loss built from differentiable primitives (the implementation path
// the oracle cross-checks).
ad::Tensor quadratic_loss(const QuadraticTask& task, const ad::Tensor& theta);

}  // namespace metaprep::tasks
