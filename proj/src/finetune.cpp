#include "metaprep/finetune.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <ostream>
#include <thread>

namespace metaprep::ft {

namespace {

using tasks::Batch;
using tasks::GeneratorSpec;

constexpr Index kClozeCandidates = 4;

struct Example {
  std::vector<Index> tokens;
  std::vector<Index> segments;
  Index label{0};
  Index blank_pos{0};                         // cloze only
  std::array<Index, 4> candidates{0, 0, 0, 0};  // cloze only
};

Example make_example(TaskKind kind, int n_classes, const GeneratorSpec& spec, Index seq_len, Index ordinal,
                     RngStream& rng) {
  Example ex;
  switch (kind) {
    case TaskKind::kSingleSentenceCls: {
      // Exactly balanced labels; 2 classes read topic halves, 4 read the topic.
      ex.label = ordinal % n_classes;
      int topic = n_classes == 4 ? static_cast<int>(ex.label)
                                 : static_cast<int>(ex.label) * 2 + static_cast<int>(rng.below(2));
      Index prev2 = spec.band_lo(topic), prev1 = spec.band_lo(topic) + 1;
      int len = 6 + static_cast<int>(rng.below(5));
      auto sentence = tasks::generate_sentence(spec, topic, len, prev2, prev1, rng);
      ex.tokens = tasks::pack_single(sentence, seq_len);
      ex.segments.assign(ex.tokens.size(), 0);
      return ex;
    }
    case TaskKind::kPairCls: {
      ex.label = ordinal % 2;
      int topic_a = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_topics)));
      int topic_b = topic_a;
      if (ex.label == 0) {
        topic_b = (topic_a + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_topics - 1)))) %
                  spec.n_topics;
      }
      Index prev2 = spec.band_lo(topic_a), prev1 = spec.band_lo(topic_a) + 1;
      auto a = tasks::generate_sentence(spec, topic_a, 5 + static_cast<int>(rng.below(3)), prev2, prev1, rng);
      prev2 = spec.band_lo(topic_b);
      prev1 = spec.band_lo(topic_b) + 1;
      auto b = tasks::generate_sentence(spec, topic_b, 5 + static_cast<int>(rng.below(3)), prev2, prev1, rng);
      tasks::pack_pair(a, b, seq_len, ex.tokens, ex.segments);
      return ex;
    }
    case TaskKind::kCloze: {
      int topic = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_topics)));
      Index prev2 = spec.band_lo(topic), prev1 = spec.band_lo(topic) + 1;
      int len = 8 + static_cast<int>(rng.below(4));
      auto sentence = tasks::generate_sentence(spec, topic, len, prev2, prev1, rng);
      ex.tokens = tasks::pack_single(sentence, seq_len);
      ex.segments.assign(ex.tokens.size(), 0);
      // Blank one content position, offer four candidate answers.
      std::vector<Index> content_positions;
      for (size_t t = 0; t < ex.tokens.size(); ++t) {
        if (ex.tokens[t] >= tasks::kFirstContent) content_positions.push_back(static_cast<Index>(t));
      }
      ex.blank_pos = content_positions[rng.below(content_positions.size())];
      Index truth = ex.tokens[static_cast<size_t>(ex.blank_pos)];
      ex.tokens[static_cast<size_t>(ex.blank_pos)] = tasks::kMask;
      ex.label = static_cast<Index>(rng.below(kClozeCandidates));
      std::vector<Index> used{truth};
      for (Index c = 0; c < kClozeCandidates; ++c) {
        if (c == ex.label) {
          ex.candidates[static_cast<size_t>(c)] = truth;
          continue;
        }
        Index distractor;
        do {
          distractor = tasks::kFirstContent + static_cast<Index>(rng.below(static_cast<std::uint64_t>(spec.n_content())));
        } while (std::find(used.begin(), used.end(), distractor) != used.end());
        used.push_back(distractor);
        ex.candidates[static_cast<size_t>(c)] = distractor;
      }
      return ex;
    }
  }
  throw ValueError("synth_downstream: unknown task kind");
}

std::vector<Batch> batch_examples(const std::vector<Example>& examples, TaskKind kind, Index seq_len,
                                  Index batch_size) {
  TaskTag tag = kind == TaskKind::kSingleSentenceCls ? TaskTag::kDownstreamSingle
                : kind == TaskKind::kPairCls         ? TaskTag::kDownstreamPair
                                                     : TaskTag::kDownstreamCloze;
  std::vector<Batch> batches;
  for (size_t at = 0; at < examples.size(); at += static_cast<size_t>(batch_size)) {
    size_t n = std::min(static_cast<size_t>(batch_size), examples.size() - at);
    Batch b;
    b.tag = tag;
    b.tokens = TokenMatrix(static_cast<Index>(n), seq_len, tasks::kPad);
    b.segments = TokenMatrix(static_cast<Index>(n), seq_len, 0);
    b.attention_mask = TokenMatrix(static_cast<Index>(n), seq_len, 0);
    for (size_t e = 0; e < n; ++e) {
      const Example& ex = examples[at + e];
      for (size_t t = 0; t < ex.tokens.size(); ++t) {
        b.tokens.at(static_cast<Index>(e), static_cast<Index>(t)) = ex.tokens[t];
        b.segments.at(static_cast<Index>(e), static_cast<Index>(t)) = ex.segments[t];
        b.attention_mask.at(static_cast<Index>(e), static_cast<Index>(t)) = 1;
      }
      b.labels.push_back(ex.label);
      if (kind == TaskKind::kCloze) {
        b.mask_positions.push_back(static_cast<Index>(e) * seq_len + ex.blank_pos);
        b.cloze_candidates.push_back(ex.candidates);
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

double majority_baseline(const std::vector<Batch>& train, const std::vector<Batch>& test, int n_classes) {
  std::vector<Index> counts(static_cast<size_t>(n_classes), 0);
  for (const Batch& b : train) {
    for (Index l : b.labels) counts[static_cast<size_t>(l)] += 1;
  }
  Index majority = static_cast<Index>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  Index hits = 0, total = 0;
  for (const Batch& b : test) {
    for (Index l : b.labels) {
      hits += l == majority ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

int env_thread_cap() {
  const char* env = std::getenv("METAPREP_THREADS");
  if (env == nullptr) return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  int v = std::atoi(env);
  return v > 0 ? v : 1;
}

}  // namespace

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kSingleSentenceCls: return "single_sentence";
    case TaskKind::kPairCls: return "pair";
    case TaskKind::kCloze: return "cloze";
  }
  return "?";
}

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "single_sentence") return TaskKind::kSingleSentenceCls;
  if (name == "pair") return TaskKind::kPairCls;
  if (name == "cloze") return TaskKind::kCloze;
  throw ConfigError("unknown downstream task kind '" + name + "' (expected single_sentence|pair|cloze)");
}

DownstreamTask synth_downstream(TaskKind kind, std::uint64_t seed, const SplitSizes& sizes, Index vocab_size,
                                Index seq_len, Index batch_size, int n_classes) {
  if (sizes.train < 32 || sizes.dev < 32 || sizes.test < 32) {
    throw ValueError("synth_downstream: every split needs at least 32 examples");
  }
  if (n_classes == 0) n_classes = kind == TaskKind::kCloze ? 4 : 2;
  if (kind == TaskKind::kSingleSentenceCls && n_classes != 2 && n_classes != 4) {
    throw ValueError("synth_downstream: single-sentence tasks support 2 or 4 classes");
  }
  if (kind == TaskKind::kPairCls && n_classes != 2) throw ValueError("synth_downstream: pair tasks are 2-class");
  if (kind == TaskKind::kCloze && n_classes != 4) throw ValueError("synth_downstream: cloze offers 4 candidates");
  for (int attempt = 0; attempt < 10; ++attempt) {
    std::uint64_t attempt_seed = seed + static_cast<std::uint64_t>(attempt);
    GeneratorSpec spec;
    spec.seed = attempt_seed;
    spec.vocab_size = vocab_size;

    DownstreamTask task;
    task.kind = kind;
    task.n_classes = n_classes;
    task.seed = attempt_seed;
    task.seq_len = seq_len;
    task.name = std::string(task_kind_name(kind)) +
                (kind == TaskKind::kSingleSentenceCls && n_classes == 4 ? "4" : "") + "-" +
                std::to_string(attempt_seed);

    RngStream root = RngStream::from_seed(attempt_seed).split("downstream");
    auto make_split = [&](const char* label, Index count) {
      RngStream rng = root.split(label);
      std::vector<Example> examples;
      examples.reserve(static_cast<size_t>(count));
      for (Index i = 0; i < count; ++i) examples.push_back(make_example(kind, n_classes, spec, seq_len, i, rng));
      return batch_examples(examples, kind, seq_len, batch_size);
    };
    task.train = make_split("train", sizes.train);
    task.dev = make_split("dev", sizes.dev);
    task.test = make_split("test", sizes.test);

    if (majority_baseline(task.train, task.test, task.n_classes) <= 0.55) return task;
  }
  throw ValueError("synth_downstream: generator degenerate for 10 consecutive seeds starting at " +
                   std::to_string(seed));
}

Tensor downstream_loss(const ParamSet& params, const nn::ModelConfig& cfg, const DownstreamTask& task,
                       const tasks::Batch& batch) {
  nn::EncoderOutput out = nn::encode(params, cfg, batch.tokens, batch.segments, batch.attention_mask);
  switch (task.kind) {
    case TaskKind::kSingleSentenceCls:
    case TaskKind::kPairCls: {
      Tensor logits = ad::linear(out.pooled, params.at("head.w"), params.at("head.b"));
      return ad::cross_entropy_with_logits(logits, batch.labels);
    }
    case TaskKind::kCloze: {
      Index n = batch.batch_size(), d = cfg.d_model;
      Tensor flat = ad::reshape(out.token_states, {n * batch.seq_len(), d});
      Tensor blanks = ad::embedding_gather(flat, batch.mask_positions, {n});
      Tensor probe = ad::linear(blanks, params.at("cloze.w"), params.at("cloze.b"));  // [N, D]
      std::vector<Index> flat_candidates;
      for (const auto& c : batch.cloze_candidates) flat_candidates.insert(flat_candidates.end(), c.begin(), c.end());
      Tensor cand = ad::embedding_gather(params.at("emb.tok"), flat_candidates, {n, kClozeCandidates});
      Tensor scores = ad::reshape(ad::matmul(cand, ad::reshape(probe, {n, d, 1})), {n, kClozeCandidates});
      return ad::cross_entropy_with_logits(scores, batch.labels);
    }
  }
  throw ValueError("downstream_loss: unknown task kind");
}

namespace {

std::vector<Index> predict(const ParamSet& params, const nn::ModelConfig& cfg, const DownstreamTask& task,
                           const tasks::Batch& batch) {
  nn::EncoderOutput out = nn::encode(params, cfg, batch.tokens, batch.segments, batch.attention_mask);
  Tensor logits;
  if (task.kind == TaskKind::kCloze) {
    Index n = batch.batch_size(), d = cfg.d_model;
    Tensor flat = ad::reshape(out.token_states, {n * batch.seq_len(), d});
    Tensor blanks = ad::embedding_gather(flat, batch.mask_positions, {n});
    Tensor probe = ad::linear(blanks, params.at("cloze.w"), params.at("cloze.b"));
    std::vector<Index> flat_candidates;
    for (const auto& c : batch.cloze_candidates) flat_candidates.insert(flat_candidates.end(), c.begin(), c.end());
    Tensor cand = ad::embedding_gather(params.at("emb.tok"), flat_candidates, {n, kClozeCandidates});
    logits = ad::reshape(ad::matmul(cand, ad::reshape(probe, {n, d, 1})), {n, kClozeCandidates});
  } else {
    logits = ad::linear(out.pooled, params.at("head.w"), params.at("head.b"));
  }
  Index n = logits.dim(0), c = logits.dim(1);
  std::vector<Index> preds(static_cast<size_t>(n));
  for (Index r = 0; r < n; ++r) {
    Index best = 0;
    for (Index j = 1; j < c; ++j) {
      if (logits[r * c + j] > logits[r * c + best]) best = j;
    }
    preds[static_cast<size_t>(r)] = best;
  }
  return preds;
}

}  // namespace

double evaluate_accuracy(const ParamSet& params, const nn::ModelConfig& cfg, const DownstreamTask& task,
                         const std::vector<tasks::Batch>& split) {
  Index hits = 0, total = 0;
  for (const tasks::Batch& batch : split) {
    std::vector<Index> preds = predict(params, cfg, task, batch);
    for (size_t i = 0; i < preds.size(); ++i) {
      hits += preds[i] == batch.labels[i] ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<EpochRecord> finetune(const ParamSet& init, const nn::ModelConfig& cfg, const DownstreamTask& task,
                                  const FinetuneOptions& opts) {
  cfg.validate();
  // Only the encoder survives; the pooler and head are fresh and seeded
  // independently of the encoder so initialization comparisons isolate it.
  ParamSet params = nn::encoder_subset(init);
  ParamSet reference = nn::encoder_subset(nn::init_params(cfg, 0));
  if (!params.compatible_with(reference)) {
    throw ConfigError("finetune: checkpoint does not match the model config (missing or misshapen encoder entries)");
  }
  RngStream head_rng = RngStream::from_seed(opts.seed).split("head");
  nn::add_pooler_params(params, cfg, head_rng);
  if (task.kind == TaskKind::kCloze) {
    // Near-identity bilinear probe: candidate scores start as plain
    // state-embedding dot products, so encoder quality is visible at epoch 0.
    params.insert("cloze.w", ad::Tensor(Shape{cfg.d_model, cfg.d_model}, [&] {
                    Storage v(cfg.d_model * cfg.d_model);
                    for (Index i = 0; i < v.size(); ++i) v(i) = head_rng.truncated_normal(0.02, 2.0);
                    for (Index i = 0; i < cfg.d_model; ++i) v(i * cfg.d_model + i) += 1.0;
                    return v;
                  }()));
    params.insert("cloze.b", Tensor::zeros({cfg.d_model}));
  } else {
    params.insert("head.w", ad::Tensor(Shape{cfg.d_model, static_cast<Index>(task.n_classes)}, [&] {
                    Storage v(cfg.d_model * task.n_classes);
                    for (Index i = 0; i < v.size(); ++i) v(i) = head_rng.truncated_normal(0.02, 2.0);
                    return v;
                  }()));
    params.insert("head.b", Tensor::zeros({static_cast<Index>(task.n_classes)}));
  }

  meta::MetaConfig opt_cfg;
  opt_cfg.beta = opts.lr > 0 ? opts.lr : 1.0;  // beta must validate; lr = 0 skips updates below
  opt_cfg.outer_optimizer = meta::OuterOpt::kAdam;
  opt_cfg.adam_beta1 = opts.adam_beta1;
  opt_cfg.adam_beta2 = opts.adam_beta2;
  opt_cfg.adam_eps = opts.adam_eps;
  meta::OptimizerState opt_state;

  std::vector<EpochRecord> records;
  EpochRecord first;
  first.epoch = 0;
  first.train_loss = 0.0;
  first.dev_accuracy = evaluate_accuracy(params, cfg, task, task.dev);
  first.test_accuracy = evaluate_accuracy(params, cfg, task, task.test);
  records.push_back(first);

  RngStream order_rng = RngStream::from_seed(opts.seed).split("order");
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::vector<size_t> order(task.train.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = order_rng.below(i);
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0;
    for (size_t idx : order) {
      ad::Graph g;
      ParamSet live = params.attached_leaves(g);
      Tensor loss = downstream_loss(live, cfg, task, task.train[idx]);
      if (!std::isfinite(loss.value())) {
        throw NumericError("finetune: non-finite loss in epoch " + std::to_string(epoch));
      }
      loss_sum += loss.value();
      ParamSet grads = ad::grad(loss, live);
      if (opts.lr > 0) meta::outer_update(params, grads, opt_cfg, opt_state);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(task.train.size());
    rec.dev_accuracy = evaluate_accuracy(params, cfg, task, task.dev);
    rec.test_accuracy = evaluate_accuracy(params, cfg, task, task.test);
    records.push_back(rec);
  }
  return records;
}

StudyResult init_quality_study(const std::map<int, StudyCheckpoint>& checkpoints,
                               const std::vector<DownstreamTask>& task_list,
                               const std::vector<std::uint64_t>& seeds, const nn::ModelConfig& cfg,
                               const FinetuneOptions& opts) {
  if (checkpoints.empty() || task_list.empty() || seeds.empty()) {
    throw ValueError("init_quality_study: need at least one checkpoint, task and seed");
  }
  std::int64_t budget = checkpoints.begin()->second.budget_steps;
  for (const auto& [k, ckpt] : checkpoints) {
    if (ckpt.budget_steps != budget) {
      throw ConfigError("init_quality_study: meta-test budget mismatch (k=" + std::to_string(k) + " trained for " +
                        std::to_string(ckpt.budget_steps) + " steps, expected " + std::to_string(budget) + ")");
    }
  }

  struct Unit {
    int k;
    const StudyCheckpoint* ckpt;
    const DownstreamTask* task;
    std::uint64_t seed;
  };
  std::vector<Unit> units;
  for (const auto& [k, ckpt] : checkpoints) {
    for (const DownstreamTask& task : task_list) {
      for (std::uint64_t seed : seeds) units.push_back({k, &ckpt, &task, seed});
    }
  }

  std::vector<std::vector<EpochRecord>> outcomes(units.size());
  int workers = std::min<int>(env_thread_cap(), static_cast<int>(units.size()));
  if (workers <= 1) {
    for (size_t i = 0; i < units.size(); ++i) {
      FinetuneOptions run = opts;
      run.seed = units[i].seed;
      outcomes[i] = finetune(units[i].ckpt->params, cfg, *units[i].task, run);
    }
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&] {
      for (size_t i = next.fetch_add(1); i < units.size(); i = next.fetch_add(1)) {
        FinetuneOptions run = opts;
        run.seed = units[i].seed;
        outcomes[i] = finetune(units[i].ckpt->params, cfg, *units[i].task, run);
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  StudyResult result;
  for (size_t i = 0; i < units.size(); ++i) {
    for (const EpochRecord& rec : outcomes[i]) {
      result.rows.push_back({units[i].k, units[i].task->name, units[i].seed, rec.epoch, rec.dev_accuracy,
                             rec.test_accuracy});
    }
  }

  auto aggregate = [&](int k, const std::string& label, auto&& filter) {
    std::vector<double> epoch1, final_acc;
    for (size_t i = 0; i < units.size(); ++i) {
      if (units[i].k != k || !filter(units[i])) continue;
      const auto& recs = outcomes[i];
      const EpochRecord& e1 = recs.size() > 1 ? recs[1] : recs[0];
      epoch1.push_back(e1.test_accuracy);
      final_acc.push_back(recs.back().test_accuracy);
    }
    StudyAggregate agg;
    agg.k = k;
    agg.task = label;
    agg.n = static_cast<int>(epoch1.size());
    auto mean_of = [](const std::vector<double>& xs) {
      return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    };
    auto stderr_of = [&](const std::vector<double>& xs, double mean) -> std::optional<double> {
      if (xs.size() < 2) return std::nullopt;
      double ss = 0;
      for (double x : xs) ss += (x - mean) * (x - mean);
      return std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
    };
    agg.epoch1_mean = mean_of(epoch1);
    agg.epoch1_stderr = stderr_of(epoch1, agg.epoch1_mean);
    agg.final_mean = mean_of(final_acc);
    agg.final_stderr = stderr_of(final_acc, agg.final_mean);
    return agg;
  };

  for (const auto& [k, ckpt] : checkpoints) {
    for (const DownstreamTask& task : task_list) {
      result.aggregates.push_back(
          aggregate(k, task.name, [&](const Unit& u) { return u.task->name == task.name; }));
    }
    result.aggregates.push_back(aggregate(k, "ALL", [](const Unit&) { return true; }));
  }
  return result;
}

void write_study_tsv(const StudyResult& study, std::ostream& out) {
  out << "k\ttask\tseed\tepoch\tdev_acc\ttest_acc\n";
  for (const StudyRow& row : study.rows) {
    out << row.k << '\t' << row.task << '\t' << row.seed << '\t' << row.epoch << '\t' << row.dev_acc << '\t'
        << row.test_acc << "\n";
  }
  out << "\n# aggregates: k\ttask\tn\tepoch1_mean\tepoch1_stderr\tfinal_mean\tfinal_stderr\n";
  for (const StudyAggregate& agg : study.aggregates) {
    out << "# " << agg.k << '\t' << agg.task << '\t' << agg.n << '\t' << agg.epoch1_mean << '\t';
    if (agg.epoch1_stderr) {
      out << *agg.epoch1_stderr;
    } else {
      out << "-";
    }
    out << '\t' << agg.final_mean << '\t';
    if (agg.final_stderr) {
      out << *agg.final_stderr;
    } else {
      out << "-";
    }
    out << "\n";
  }
}

}  // namespace metaprep::ft
