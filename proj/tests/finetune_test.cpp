#include "metaprep/finetune.hpp"

#include "metaprep/checkpoint.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>

using namespace metaprep;
using namespace metaprep::ft;
using ad::ParamSet;

namespace {

nn::ModelConfig study_model() {
  nn::ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.max_len = 16;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 16;
  return cfg;
}

SplitSizes small_sizes() { return SplitSizes{32, 32, 32}; }

}  // namespace

TEST_SUITE_BEGIN("finetune");

TEST_CASE("synth_downstream: deterministic per seed, balanced labels, non-trivial baseline") {
  for (TaskKind kind : {TaskKind::kSingleSentenceCls, TaskKind::kPairCls, TaskKind::kCloze}) {
    DownstreamTask a = synth_downstream(kind, 11, small_sizes(), 32, 16);
    DownstreamTask b = synth_downstream(kind, 11, small_sizes(), 32, 16);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
      CHECK(a.train[i].tokens.ids == b.train[i].tokens.ids);
      CHECK(a.train[i].labels == b.train[i].labels);
    }

    Index counts[4] = {0, 0, 0, 0};
    Index total = 0;
    for (const auto& batch : a.train) {
      for (Index l : batch.labels) {
        ++counts[l];
        ++total;
      }
    }
    double top = 0;
    for (int c = 0; c < a.n_classes; ++c) top = std::max(top, static_cast<double>(counts[c]) / total);
    if (a.n_classes == 2) {
      CHECK(top == doctest::Approx(0.5).epsilon(0.05 / 0.5));  // balance within 0.05
    } else {
      CHECK(top <= 0.5);  // 4 candidate classes, roughly uniform
    }
  }
}

TEST_CASE("synth_downstream: cloze offers 4 candidates containing the blanked token") {
  DownstreamTask t = synth_downstream(TaskKind::kCloze, 5, small_sizes(), 32, 16);
  CHECK(t.n_classes == 4);
  for (const auto& batch : t.train) {
    REQUIRE(batch.cloze_candidates.size() == static_cast<size_t>(batch.batch_size()));
    REQUIRE(batch.mask_positions.size() == static_cast<size_t>(batch.batch_size()));
    for (Index e = 0; e < batch.batch_size(); ++e) {
      Index pos = batch.mask_positions[static_cast<size_t>(e)];
      CHECK(batch.tokens.ids[static_cast<size_t>(pos)] == tasks::kMask);
      const auto& cands = batch.cloze_candidates[static_cast<size_t>(e)];
      Index label = batch.labels[static_cast<size_t>(e)];
      CHECK(label >= 0);
      CHECK(label < 4);
      for (Index c : cands) CHECK(c >= tasks::kFirstContent);
      // Candidates are distinct, so chance accuracy is exactly 1/4.
      for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) CHECK(cands[static_cast<size_t>(i)] != cands[static_cast<size_t>(j)]);
      }
    }
  }
}

TEST_CASE("finetune: epoch records, lr = 0 freeze, and checkpoint immutability") {
  nn::ModelConfig cfg = study_model();
  ParamSet init = nn::init_params(cfg, 21);
  Eigen::VectorXd before = init.flatten();
  DownstreamTask task = synth_downstream(TaskKind::kSingleSentenceCls, 3, small_sizes(), cfg.vocab_size, 16);

  FinetuneOptions opts;
  opts.epochs = 0;
  opts.seed = 9;
  auto records0 = finetune(init, cfg, task, opts);
  REQUIRE(records0.size() == 1);  // initialization-quality metrics only
  CHECK(records0[0].epoch == 0);
  CHECK(records0[0].train_loss == 0.0);

  opts.epochs = 2;
  opts.lr = 0.0;
  auto frozen = finetune(init, cfg, task, opts);
  REQUIRE(frozen.size() == 3);
  CHECK(frozen[1].dev_accuracy == frozen[0].dev_accuracy);
  CHECK(frozen[2].test_accuracy == frozen[0].test_accuracy);

  opts.lr = 5e-3;
  auto trained_a = finetune(init, cfg, task, opts);
  auto trained_b = finetune(init, cfg, task, opts);
  REQUIRE(trained_a.size() == trained_b.size());
  for (size_t i = 0; i < trained_a.size(); ++i) {
    CHECK(trained_a[i].train_loss == trained_b[i].train_loss);
    CHECK(trained_a[i].test_accuracy == trained_b[i].test_accuracy);
  }
  // The input checkpoint is untouched by the runs above.
  CHECK((init.flatten() - before).cwiseAbs().maxCoeff() == 0.0);

  // Accuracies are exact ratios over the split size.
  double total = 0;
  for (const auto& b : task.test) total += static_cast<double>(b.labels.size());
  double scaled = trained_a[1].test_accuracy * total;
  CHECK(scaled == doctest::Approx(std::round(scaled)).epsilon(1e-12));
}

TEST_CASE("finetune: frozen regression trajectory for a fixed task and seed") {
  // Recorded once from the seeded run; guards the whole pipeline against
  // silent behavior changes. Bit-level determinism is asserted separately by
  // the same-process rerun checks; this comparison leaves room for floating
  // point reassociation across compiler versions.
  nn::ModelConfig cfg = study_model();
  ParamSet init = nn::init_params(cfg, 21);
  DownstreamTask task = synth_downstream(TaskKind::kSingleSentenceCls, 3, small_sizes(), cfg.vocab_size, 16);
  FinetuneOptions opts;
  opts.epochs = 3;
  opts.lr = 5e-3;
  opts.seed = 9;
  auto records = finetune(init, cfg, task, opts);
  struct Expected {
    int epoch;
    double train_loss, dev, test;
  };
  const Expected frozen[] = {
      {0, 0.0, 0.5, 0.5},
      {1, 0.6932275574890816, 0.5, 0.5},
      {2, 0.69315040849469134, 0.5, 0.5},
      {3, 0.69306658539452792, 0.5625, 0.5625},
  };
  REQUIRE(records.size() == 4);
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].epoch == frozen[i].epoch);
    CHECK(records[i].train_loss == doctest::Approx(frozen[i].train_loss).epsilon(1e-9));
    CHECK(records[i].dev_accuracy == doctest::Approx(frozen[i].dev).epsilon(1e-12));
    CHECK(records[i].test_accuracy == doctest::Approx(frozen[i].test).epsilon(1e-12));
  }
}

TEST_CASE("finetune: training on a learnable task reduces loss and beats chance") {
  nn::ModelConfig cfg = study_model();
  ParamSet init = nn::init_params(cfg, 4);
  DownstreamTask task = synth_downstream(TaskKind::kSingleSentenceCls, 8, SplitSizes{128, 64, 64},
                                         cfg.vocab_size, 16);
  FinetuneOptions opts;
  opts.epochs = 4;
  opts.lr = 5e-3;
  opts.seed = 2;
  auto records = finetune(init, cfg, task, opts);
  CHECK(records.back().train_loss < records[1].train_loss);
  CHECK(records.back().test_accuracy > 0.55);
}

TEST_CASE("finetune: config/checkpoint mismatch is rejected") {
  nn::ModelConfig cfg = study_model();
  nn::ModelConfig other = cfg;
  other.d_model = 8;
  other.n_heads = 2;
  ParamSet wrong = nn::init_params(other, 1);
  DownstreamTask task = synth_downstream(TaskKind::kSingleSentenceCls, 3, small_sizes(), cfg.vocab_size, 16);
  CHECK_THROWS_AS(finetune(wrong, cfg, task, FinetuneOptions{}), ConfigError);
}

TEST_CASE("init_quality_study: self-comparison is a zero difference, budgets must match") {
  nn::ModelConfig cfg = study_model();
  ParamSet init = nn::init_params(cfg, 33);
  std::map<int, StudyCheckpoint> ckpts;
  ckpts[0] = StudyCheckpoint{init.detached(), 100};
  ckpts[5] = StudyCheckpoint{init.detached(), 100};

  std::vector<DownstreamTask> task_list{
      synth_downstream(TaskKind::kSingleSentenceCls, 3, small_sizes(), cfg.vocab_size, 16)};
  std::vector<std::uint64_t> seeds{1, 2};
  FinetuneOptions opts;
  opts.epochs = 1;
  opts.lr = 2e-3;

  StudyResult study = init_quality_study(ckpts, task_list, seeds, cfg, opts);
  // Identical checkpoints fine-tuned with identical seeds land identically.
  const StudyAggregate *k0 = nullptr, *k5 = nullptr;
  for (const auto& agg : study.aggregates) {
    if (agg.task != "ALL") continue;
    if (agg.k == 0) k0 = &agg;
    if (agg.k == 5) k5 = &agg;
  }
  REQUIRE(k0 != nullptr);
  REQUIRE(k5 != nullptr);
  CHECK(k0->epoch1_mean == k5->epoch1_mean);
  CHECK(k0->final_mean == k5->final_mean);
  CHECK(k0->n == 2);
  CHECK(k0->epoch1_stderr.has_value());

  // Rows: (2 checkpoints) x (1 task) x (2 seeds) x (epochs 0..1)
  CHECK(study.rows.size() == 2 * 1 * 2 * 2);

  ckpts[5].budget_steps = 200;
  CHECK_THROWS_WITH_AS(init_quality_study(ckpts, task_list, seeds, cfg, opts), doctest::Contains("budget"),
                       ConfigError);

  // Single (checkpoint, task, seed): rows present, stderr absent.
  std::map<int, StudyCheckpoint> solo;
  solo[0] = StudyCheckpoint{init.detached(), 100};
  StudyResult single = init_quality_study(solo, task_list, {7}, cfg, opts);
  CHECK(single.rows.size() == 2);
  for (const auto& agg : single.aggregates) CHECK(!agg.epoch1_stderr.has_value());
}

TEST_CASE("init_quality_study: results do not depend on the worker thread count") {
  nn::ModelConfig cfg = study_model();
  ParamSet init = nn::init_params(cfg, 12);
  std::map<int, StudyCheckpoint> ckpts;
  ckpts[0] = StudyCheckpoint{init.detached(), 50};
  std::vector<DownstreamTask> task_list{
      synth_downstream(TaskKind::kSingleSentenceCls, 6, small_sizes(), cfg.vocab_size, 16)};
  FinetuneOptions opts;
  opts.epochs = 1;
  opts.lr = 2e-3;

  setenv("METAPREP_THREADS", "1", 1);
  StudyResult solo = init_quality_study(ckpts, task_list, {1, 2, 3}, cfg, opts);
  setenv("METAPREP_THREADS", "3", 1);
  StudyResult pooled = init_quality_study(ckpts, task_list, {1, 2, 3}, cfg, opts);
  unsetenv("METAPREP_THREADS");

  REQUIRE(solo.rows.size() == pooled.rows.size());
  for (size_t i = 0; i < solo.rows.size(); ++i) {
    CHECK(solo.rows[i].test_acc == pooled.rows[i].test_acc);
    CHECK(solo.rows[i].dev_acc == pooled.rows[i].dev_acc);
    CHECK(solo.rows[i].seed == pooled.rows[i].seed);
  }
}

TEST_CASE("checkpoint: bit-exact round trip with and without training state") {
  nn::ModelConfig cfg = study_model();
  ParamSet params = nn::init_params(cfg, 5);
  const std::string path = "/tmp/metaprep_ckpt_test.bin";

  save_checkpoint(path, params);
  LoadedCheckpoint plain = load_checkpoint(path);
  CHECK(!plain.state.has_value());
  CHECK(plain.params.compatible_with(params));
  CHECK((plain.params.flatten() - params.flatten()).cwiseAbs().maxCoeff() == 0.0);

  TrainState state;
  state.step = 42;
  state.budget_steps = 100;
  state.k = 5;
  state.data_rng_key = 0xDEADBEEFCAFEBABEull;
  state.data_rng_pos = 123456789ull;
  state.opt_step = 42;
  state.adam_m = params.scaled(0.5);
  state.adam_v = params.scaled(0.25);
  save_checkpoint(path, params, &state);
  LoadedCheckpoint full = load_checkpoint(path);
  REQUIRE(full.state.has_value());
  CHECK(full.state->step == 42);
  CHECK(full.state->budget_steps == 100);
  CHECK(full.state->k == 5);
  CHECK(full.state->data_rng_key == 0xDEADBEEFCAFEBABEull);
  CHECK(full.state->data_rng_pos == 123456789ull);
  CHECK((full.state->adam_m.flatten() - state.adam_m.flatten()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((full.params.flatten() - params.flatten()).cwiseAbs().maxCoeff() == 0.0);

  // Corruption is caught by the trailing length checksum.
  {
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    data.resize(data.size() - 3);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << data;
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  std::remove(path.c_str());
}

TEST_SUITE_END();
