#pragma once

#include "metaprep/metatrain.hpp"

#include <map>
#include <optional>
#include <string>

namespace metaprep::ft {

using ad::ParamSet;
using ad::Tensor;

enum class TaskKind { kSingleSentenceCls, kPairCls, kCloze };

const char* task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct SplitSizes {
  Index train{128};
  Index dev{64};
  Index test{64};
};

// Synthetic downstream task with pre-batched splits. Splits are disjoint by
// construction seed.
struct DownstreamTask {
  TaskKind kind{TaskKind::kSingleSentenceCls};
  int n_classes{2};
  std::string name;
  std::uint64_t seed{0};
  Index seq_len{16};
  std::vector<tasks::Batch> train;
  std::vector<tasks::Batch> dev;
  std::vector<tasks::Batch> test;
};

// Deterministic per seed. Regenerates with the next seed (up to 10 attempts)
// if a majority-class baseline would score above 0.55. Single-sentence tasks
// support 2 classes (topic halves) or 4 (the topic itself); pair tasks are
// 2-class and cloze is always 4 candidates.
DownstreamTask synth_downstream(TaskKind kind, std::uint64_t seed, const SplitSizes& sizes, Index vocab_size,
                                Index seq_len, Index batch_size = 16, int n_classes = 0);

struct EpochRecord {
  int epoch{0};
  double train_loss{0.0};
  double dev_accuracy{0.0};
  double test_accuracy{0.0};
};

struct FinetuneOptions {
  int epochs{4};
  double lr{5e-3};
  std::uint64_t seed{0};
  double adam_beta1{0.9};
  double adam_beta2{0.999};
  double adam_eps{1e-8};
};

// Initializes the encoder from `init` (heads and pooler are discarded; a
// fresh pooler and task head come from the run seed), then fine-tunes the
// whole model with Adam. Record 0 holds the untouched initialization quality;
// records 1..epochs follow training. The input checkpoint is never mutated.
std::vector<EpochRecord> finetune(const ParamSet& init, const nn::ModelConfig& cfg, const DownstreamTask& task,
                                  const FinetuneOptions& opts);

// Downstream loss/accuracy for one batch given full run params; shared by the
// trainer and the evaluators.
Tensor downstream_loss(const ParamSet& params, const nn::ModelConfig& cfg, const DownstreamTask& task,
                       const tasks::Batch& batch);
double evaluate_accuracy(const ParamSet& params, const nn::ModelConfig& cfg, const DownstreamTask& task,
                         const std::vector<tasks::Batch>& split);

struct StudyCheckpoint {
  ParamSet params;
  std::int64_t budget_steps{0};  // meta-test steps the checkpoint was trained for
};

struct StudyRow {
  int k{0};
  std::string task;
  std::uint64_t seed{0};
  int epoch{0};
  double dev_acc{0.0};
  double test_acc{0.0};
};

struct StudyAggregate {
  int k{0};
  std::string task;  // "ALL" aggregates across tasks
  int n{0};
  double epoch1_mean{0.0};
  std::optional<double> epoch1_stderr;
  double final_mean{0.0};
  std::optional<double> final_stderr;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  std::vector<StudyAggregate> aggregates;
};

// Fine-tunes every (checkpoint, task, seed) combination and aggregates
// epoch-1 and final accuracies. Refuses checkpoints trained under different
// meta-test budgets. Runs fan out across worker threads (METAPREP_THREADS
// caps the pool) with per-run isolated streams, so results do not depend on
// the thread count.
StudyResult init_quality_study(const std::map<int, StudyCheckpoint>& checkpoints,
                               const std::vector<DownstreamTask>& task_list,
                               const std::vector<std::uint64_t>& seeds, const nn::ModelConfig& cfg,
                               const FinetuneOptions& opts);

void write_study_tsv(const StudyResult& study, std::ostream& out);

}  // namespace metaprep::ft
