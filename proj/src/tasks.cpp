#include "metaprep/tasks.hpp"

#include "metaprep/ops.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

namespace metaprep::tasks {

Index GeneratorSpec::band_lo(int topic) const {
  return kFirstContent + (n_content() / n_topics) * topic;
}

Index GeneratorSpec::band_width(int topic) const {
  Index base = n_content() / n_topics;
  return topic == n_topics - 1 ? n_content() - base * (n_topics - 1) : base;
}

int GeneratorSpec::band_of(Index token) const {
  if (token < kFirstContent) return -1;
  Index base = n_content() / n_topics;
  int band = static_cast<int>((token - kFirstContent) / std::max<Index>(base, 1));
  return std::min(band, n_topics - 1);
}

Index chain_successor(std::uint64_t chain_key, Index prev2, Index prev1, Index n_content) {
  std::uint64_t h = mix64(chain_key ^ (static_cast<std::uint64_t>(prev2) * 1000003ull +
                                       static_cast<std::uint64_t>(prev1)));
  return kFirstContent + static_cast<Index>(h % static_cast<std::uint64_t>(n_content));
}

std::vector<Index> generate_sentence(const GeneratorSpec& spec, int topic, int len, Index& prev2, Index& prev1,
                                     RngStream& rng) {
  std::vector<Index> out;
  out.reserve(static_cast<size_t>(len));
  for (int i = 0; i < len; ++i) {
    Index tok;
    if (rng.bernoulli(spec.chain_prob)) {
      tok = chain_successor(spec.chain_key(), prev2, prev1, spec.n_content());
    } else if (rng.bernoulli(spec.topic_prob)) {
      tok = spec.band_lo(topic) + static_cast<Index>(rng.below(static_cast<std::uint64_t>(spec.band_width(topic))));
    } else {
      tok = kFirstContent + static_cast<Index>(rng.below(static_cast<std::uint64_t>(spec.n_content())));
    }
    out.push_back(tok);
    prev2 = prev1;
    prev1 = tok;
  }
  return out;
}

Corpus generate_corpus(std::uint64_t seed, Index n_docs, Index vocab_size) {
  GeneratorSpec spec;
  spec.seed = seed;
  spec.vocab_size = vocab_size;
  return generate_corpus(spec, n_docs);
}

Corpus generate_corpus(const GeneratorSpec& spec, Index n_docs) {
  if (spec.vocab_size < 8) {
    throw ValueError("generate_corpus: vocab too small, need >= 8 (4 reserved ids)");
  }
  if (spec.min_doc_sentences < 2) {
    throw ValueError("generate_corpus: documents need >= 2 sentences");
  }
  Corpus corpus;
  corpus.vocab_size = spec.vocab_size;
  corpus.spec = spec;
  RngStream rng = RngStream::from_seed(spec.seed).split("corpus");
  for (Index d = 0; d < n_docs; ++d) {
    int topic = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_topics)));
    int n_sent = spec.min_doc_sentences +
                 static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_doc_sentences - spec.min_doc_sentences + 1)));
    Index prev2 = kFirstContent + static_cast<Index>(rng.below(static_cast<std::uint64_t>(spec.n_content())));
    Index prev1 = kFirstContent + static_cast<Index>(rng.below(static_cast<std::uint64_t>(spec.n_content())));
    std::vector<std::vector<Index>> doc;
    for (int s = 0; s < n_sent; ++s) {
      int len = spec.min_sentence_len +
                static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_sentence_len - spec.min_sentence_len + 1)));
      doc.push_back(generate_sentence(spec, topic, len, prev2, prev1, rng));
    }
    corpus.documents.push_back(std::move(doc));
    corpus.doc_topics.push_back(topic);
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, std::ostream& out) {
  for (size_t d = 0; d < corpus.documents.size(); ++d) {
    if (d) out << "\n";
    for (const auto& sentence : corpus.documents[d]) {
      for (size_t i = 0; i < sentence.size(); ++i) {
        if (i) out << ' ';
        out << sentence[i];
      }
      out << "\n";
    }
  }
}

Corpus load_corpus(std::istream& in, Index vocab_size) {
  Corpus corpus;
  corpus.vocab_size = vocab_size;
  corpus.spec.vocab_size = vocab_size;
  std::vector<std::vector<Index>> doc;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      if (!doc.empty()) corpus.documents.push_back(std::move(doc));
      doc.clear();
      continue;
    }
    std::istringstream ls(line);
    std::vector<Index> sentence;
    long long tok;
    while (ls >> tok) {
      if (tok < 0 || tok >= vocab_size) {
        throw IoError("load_corpus: token " + std::to_string(tok) + " out of range for vocab " +
                      std::to_string(vocab_size));
      }
      sentence.push_back(static_cast<Index>(tok));
    }
    doc.push_back(std::move(sentence));
  }
  if (!doc.empty()) corpus.documents.push_back(std::move(doc));
  corpus.doc_topics.assign(corpus.documents.size(), -1);
  return corpus;
}

Batch mask_batch(const std::vector<std::vector<Index>>& rows, Index vocab_size, RngStream& rng,
                 const MaskOptions& opts) {
  if (rows.empty()) throw ValueError("mask_batch: no examples");
  Index n_content = vocab_size - kFirstContent;
  Index seq_len = 0;
  for (const auto& row : rows) seq_len = std::max(seq_len, static_cast<Index>(row.size()));

  Batch batch;
  batch.tag = TaskTag::kMlm;
  batch.tokens = TokenMatrix(static_cast<Index>(rows.size()), seq_len, kPad);
  batch.segments = TokenMatrix(static_cast<Index>(rows.size()), seq_len, 0);
  batch.attention_mask = TokenMatrix(static_cast<Index>(rows.size()), seq_len, 0);

  for (Index b = 0; b < static_cast<Index>(rows.size()); ++b) {
    const auto& row = rows[static_cast<size_t>(b)];
    std::vector<Index> maskable;
    for (size_t t = 0; t < row.size(); ++t) {
      batch.tokens.at(b, static_cast<Index>(t)) = row[t];
      batch.attention_mask.at(b, static_cast<Index>(t)) = 1;
      if (row[t] >= kFirstContent) maskable.push_back(static_cast<Index>(t));
    }
    if (maskable.empty()) {
      throw ValueError("mask_batch: example " + std::to_string(b) + " has no maskable tokens");
    }
    size_t selected_before = batch.mask_positions.size();
    auto apply = [&](Index t) {
      Index original = row[static_cast<size_t>(t)];
      batch.mask_positions.push_back(b * seq_len + t);
      batch.mask_targets.push_back(original);
      double u = rng.uniform();
      if (u < opts.mask_prob) {
        batch.tokens.at(b, t) = kMask;
      } else if (u < opts.mask_prob + opts.random_prob) {
        batch.tokens.at(b, t) = kFirstContent + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n_content)));
      }  // else keep the original token
    };
    for (Index t : maskable) {
      if (rng.bernoulli(opts.select_prob)) apply(t);
    }
    if (batch.mask_positions.size() == selected_before) {
      // Degenerate draws would make the loss undefined; force one position.
      Index t = maskable[rng.below(maskable.size())];
      apply(t);
    }
  }
  return batch;
}

NspPair make_nsp_pair(const Corpus& corpus, RngStream& rng) {
  if (corpus.documents.empty()) throw ValueError("make_nsp_pair: empty corpus");
  NspPair pair;
  pair.label = rng.bernoulli(0.5) ? 1 : 0;
  Index d = static_cast<Index>(rng.below(static_cast<std::uint64_t>(corpus.documents.size())));
  const auto& doc = corpus.documents[static_cast<size_t>(d)];
  if (doc.size() < 2) throw ValueError("make_nsp_pair: document has fewer than 2 sentences");
  Index i = static_cast<Index>(rng.below(doc.size() - 1));
  pair.first = doc[static_cast<size_t>(i)];
  if (pair.label == 1) {
    pair.second = doc[static_cast<size_t>(i) + 1];
  } else {
    Index d2 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(corpus.documents.size())));
    const auto& doc2 = corpus.documents[static_cast<size_t>(d2)];
    Index j = static_cast<Index>(rng.below(doc2.size()));
    pair.second = doc2[static_cast<size_t>(j)];
  }
  return pair;
}

std::vector<Index> pack_single(const std::vector<Index>& sentence, Index seq_len) {
  std::vector<Index> row;
  row.reserve(static_cast<size_t>(seq_len));
  row.push_back(kCls);
  Index budget = seq_len - 2;
  for (Index i = 0; i < std::min<Index>(budget, static_cast<Index>(sentence.size())); ++i) {
    row.push_back(sentence[static_cast<size_t>(i)]);
  }
  row.push_back(kSep);
  return row;
}

void pack_pair(const std::vector<Index>& a, const std::vector<Index>& b, Index seq_len, std::vector<Index>& tokens,
               std::vector<Index>& segments) {
  tokens.clear();
  segments.clear();
  Index budget = seq_len - 3;  // CLS + 2x SEP
  Index len_a = std::min<Index>(static_cast<Index>(a.size()), budget / 2 + budget % 2);
  Index len_b = std::min<Index>(static_cast<Index>(b.size()), budget - len_a);
  len_a = std::min<Index>(static_cast<Index>(a.size()), budget - len_b);
  tokens.push_back(kCls);
  segments.push_back(0);
  for (Index i = 0; i < len_a; ++i) {
    tokens.push_back(a[static_cast<size_t>(i)]);
    segments.push_back(0);
  }
  tokens.push_back(kSep);
  segments.push_back(0);
  for (Index i = 0; i < len_b; ++i) {
    tokens.push_back(b[static_cast<size_t>(i)]);
    segments.push_back(1);
  }
  tokens.push_back(kSep);
  segments.push_back(1);
}

namespace {

Batch packed_pair_batch(std::vector<std::pair<NspPair, Index>> pairs, Index seq_len, TaskTag tag) {
  Batch batch;
  batch.tag = tag;
  Index n = static_cast<Index>(pairs.size());
  batch.tokens = TokenMatrix(n, seq_len, kPad);
  batch.segments = TokenMatrix(n, seq_len, 0);
  batch.attention_mask = TokenMatrix(n, seq_len, 0);
  std::vector<Index> tokens, segments;
  for (Index b = 0; b < n; ++b) {
    pack_pair(pairs[static_cast<size_t>(b)].first.first, pairs[static_cast<size_t>(b)].first.second, seq_len,
              tokens, segments);
    for (size_t t = 0; t < tokens.size(); ++t) {
      batch.tokens.at(b, static_cast<Index>(t)) = tokens[t];
      batch.segments.at(b, static_cast<Index>(t)) = segments[t];
      batch.attention_mask.at(b, static_cast<Index>(t)) = 1;
    }
    batch.labels.push_back(pairs[static_cast<size_t>(b)].second);
  }
  return batch;
}

}  // namespace

Batch make_mlm_batch(const Corpus& corpus, Index batch_size, Index seq_len, RngStream& rng,
                     const MaskOptions& opts) {
  std::vector<std::vector<Index>> rows;
  rows.reserve(static_cast<size_t>(batch_size));
  for (Index b = 0; b < batch_size; ++b) {
    Index d = static_cast<Index>(rng.below(static_cast<std::uint64_t>(corpus.documents.size())));
    const auto& doc = corpus.documents[static_cast<size_t>(d)];
    Index s = static_cast<Index>(rng.below(doc.size()));
    rows.push_back(pack_single(doc[static_cast<size_t>(s)], seq_len));
  }
  Batch batch = mask_batch(rows, corpus.vocab_size, rng, opts);
  // Keep the row width fixed for the whole run.
  if (batch.seq_len() != seq_len) {
    Batch padded;
    padded.tag = batch.tag;
    padded.tokens = TokenMatrix(batch_size, seq_len, kPad);
    padded.segments = TokenMatrix(batch_size, seq_len, 0);
    padded.attention_mask = TokenMatrix(batch_size, seq_len, 0);
    for (Index b = 0; b < batch_size; ++b) {
      for (Index t = 0; t < batch.seq_len(); ++t) {
        padded.tokens.at(b, t) = batch.tokens.at(b, t);
        padded.segments.at(b, t) = batch.segments.at(b, t);
        padded.attention_mask.at(b, t) = batch.attention_mask.at(b, t);
      }
    }
    for (size_t i = 0; i < batch.mask_positions.size(); ++i) {
      Index flat = batch.mask_positions[i];
      Index b = flat / batch.seq_len(), t = flat % batch.seq_len();
      padded.mask_positions.push_back(b * seq_len + t);
    }
    padded.mask_targets = batch.mask_targets;
    return padded;
  }
  return batch;
}

Batch make_nsp_batch(const Corpus& corpus, Index batch_size, Index seq_len, RngStream& rng) {
  std::vector<std::pair<NspPair, Index>> pairs;
  pairs.reserve(static_cast<size_t>(batch_size));
  for (Index b = 0; b < batch_size; ++b) {
    NspPair p = make_nsp_pair(corpus, rng);
    Index label = p.label;
    pairs.emplace_back(std::move(p), label);
  }
  return packed_pair_batch(std::move(pairs), seq_len, TaskTag::kNsp);
}

Batch make_pair_task_batch(const Corpus& corpus, TaskTag tag, Index batch_size, Index seq_len, RngStream& rng) {
  if (tag != TaskTag::kQaMatch && tag != TaskTag::kQqMatch) {
    throw ValueError("make_pair_task_batch: tag must be qa_match or qq_match, got '" + task_tag_name(tag) + "'");
  }
  const GeneratorSpec& spec = corpus.spec;
  std::vector<std::pair<NspPair, Index>> pairs;
  for (Index b = 0; b < batch_size; ++b) {
    Index label = rng.bernoulli(0.5) ? 1 : 0;
    int topic_a = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_topics)));
    int topic_b = topic_a;
    if (label == 0) {
      topic_b = (topic_a + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_topics - 1)))) %
                spec.n_topics;
    }
    // QA pairs are asymmetric in length (short question, longer answer).
    int len_a = tag == TaskTag::kQaMatch ? 4 + static_cast<int>(rng.below(3)) : 5 + static_cast<int>(rng.below(4));
    int len_b = tag == TaskTag::kQaMatch ? 8 + static_cast<int>(rng.below(5)) : 5 + static_cast<int>(rng.below(4));
    Index prev2 = spec.band_lo(topic_a), prev1 = spec.band_lo(topic_a) + 1;
    NspPair p;
    p.first = generate_sentence(spec, topic_a, len_a, prev2, prev1, rng);
    prev2 = spec.band_lo(topic_b);
    prev1 = spec.band_lo(topic_b) + 1;
    p.second = generate_sentence(spec, topic_b, len_b, prev2, prev1, rng);
    p.label = label;
    pairs.emplace_back(std::move(p), label);
  }
  return packed_pair_batch(std::move(pairs), seq_len, tag);
}

void TaskMix::validate() const {
  if (entries.empty()) throw ValueError("task mix: empty");
  double total = 0;
  for (const auto& [tag, p] : entries) {
    if (p < 0) throw ValueError("task mix: negative probability for " + task_tag_name(tag));
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValueError("task mix: probabilities sum to " + std::to_string(total) + ", expected 1");
  }
}

std::vector<Batch> sample_pretrain_batches(const Corpus& corpus, const TaskMix& mix, Index k_plus_1,
                                           Index batch_size, Index seq_len, RngStream& rng) {
  mix.validate();
  std::vector<Batch> batches;
  batches.reserve(static_cast<size_t>(k_plus_1));
  for (Index i = 0; i < k_plus_1; ++i) {
    double u = rng.uniform();
    double acc = 0;
    TaskTag tag = mix.entries.back().first;
    for (const auto& [candidate, p] : mix.entries) {
      acc += p;
      if (u < acc) {
        tag = candidate;
        break;
      }
    }
    switch (tag) {
      case TaskTag::kMlm:
        batches.push_back(make_mlm_batch(corpus, batch_size, seq_len, rng));
        break;
      case TaskTag::kNsp:
        batches.push_back(make_nsp_batch(corpus, batch_size, seq_len, rng));
        break;
      case TaskTag::kQaMatch:
      case TaskTag::kQqMatch:
        batches.push_back(make_pair_task_batch(corpus, tag, batch_size, seq_len, rng));
        break;
      case TaskTag::kQuadratic: {
        Batch b;
        b.tag = TaskTag::kQuadratic;
        batches.push_back(std::move(b));
        break;
      }
      default:
        throw ValueError("sample_pretrain_batches: '" + task_tag_name(tag) + "' is not a pre-training task");
    }
  }
  return batches;
}

QuadraticTask QuadraticTask::random(Index dim, RngStream& rng) {
  QuadraticTask task;
  task.curvature = Eigen::ArrayXd(dim);
  task.center = Eigen::ArrayXd(dim);
  for (Index i = 0; i < dim; ++i) {
    task.curvature(i) = rng.uniform(0.3, 1.5);
    task.center(i) = rng.uniform(-1.0, 1.0);
  }
  return task;
}

void QuadraticTask::validate() const {
  if (curvature.size() != center.size()) throw ShapeError("quadratic task: curvature/center size mismatch");
  if ((curvature <= 0).any()) throw ValueError("quadratic task: curvature entries must be positive");
}

Eigen::ArrayXd quadratic_meta_gradient_oracle(const QuadraticTask& task, const Eigen::ArrayXd& theta0,
                                              double alpha, int k) {
  task.validate();
  if (theta0.size() != task.center.size()) {
    throw ShapeError("quadratic oracle: theta size " + std::to_string(theta0.size()) + " vs task dim " +
                     std::to_string(task.center.size()));
  }
  if (k < 0) throw ValueError("quadratic oracle: k must be >= 0");
  if (alpha * task.curvature.maxCoeff() >= 2.0) {
    throw NumericError("quadratic oracle: alpha * max curvature >= 2, descent unstable");
  }
  Eigen::ArrayXd decay = (1.0 - alpha * task.curvature).pow(k);
  Eigen::ArrayXd dk = decay * (theta0 - task.center);  // theta_k - c
  return decay * (task.curvature * dk);
}

ad::Tensor quadratic_loss(const QuadraticTask& task, const ad::Tensor& theta) {
  task.validate();
  Index n = task.center.size();
  if (theta.shape() != Shape{n}) {
    throw ShapeError("quadratic loss: theta shape " + shape_str(theta.shape()) + " vs task dim " +
                     std::to_string(n));
  }
  ad::Tensor c(Shape{n}, task.center);
  ad::Tensor a(Shape{n}, task.curvature);
  ad::Tensor d = ad::sub(theta, c);
  return ad::scale(ad::sum(ad::mul(ad::mul(d, d), a)), 0.5);
}

}  // namespace metaprep::tasks
