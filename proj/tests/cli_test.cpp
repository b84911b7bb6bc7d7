#include "metaprep/experiment.hpp"

#include "metaprep/checkpoint.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace metaprep;
using namespace metaprep::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("/tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path);
  out << contents;
}

std::string pretrain_config(const std::string& out_dir, int steps, int k = 1) {
  std::ostringstream os;
  os << "run.id=cli-test\nrun.seed=42\nrun.out=" << out_dir << "\n"
     << "model.vocab_size=32\nmodel.max_len=16\nmodel.d_model=8\nmodel.n_heads=2\n"
     << "model.n_layers=1\nmodel.d_ff=8\nmodel.n_segments=2\nmodel.dropout=0\n"
     << "meta.k=" << k << "\nmeta.alpha=0.02\nmeta.beta=0.002\nmeta.grad_mode=full\n"
     << "meta.optimizer=adam\nmeta.steps=" << steps << "\nmeta.checkpoint_interval=5\n"
     << "tasks.mix=mlm:0.6,nsp:0.4\ntasks.batch_size=2\ntasks.seq_len=12\n"
     << "tasks.corpus_docs=16\ntasks.corpus_seed=7\n";
  return os.str();
}

std::string finetune_config(const std::string& out_dir) {
  std::ostringstream os;
  os << "run.id=cli-ft\nrun.seed=42\nrun.out=" << out_dir << "\n"
     << "model.vocab_size=32\nmodel.max_len=16\nmodel.d_model=8\nmodel.n_heads=2\n"
     << "model.n_layers=1\nmodel.d_ff=8\nmodel.n_segments=2\nmodel.dropout=0\n"
     << "finetune.tasks=single_sentence\nfinetune.task_seed=5\nfinetune.epochs=2\n"
     << "finetune.lr=0.003\nfinetune.seeds=1,2\nfinetune.train_size=32\nfinetune.dev_size=32\n"
     << "finetune.test_size=32\nfinetune.batch_size=16\nfinetune.seq_len=16\nfinetune.label_k=1\n";
  return os.str();
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("config: parse, typed errors, serialize round trip") {
  std::istringstream in(
      "# comment\n"
      "model.d_model=32\n"
      "run.id = demo \n"
      "meta.alpha=0.01\n");
  KeyValueConfig kv = KeyValueConfig::parse(in, "test.cfg");
  CHECK(kv.get_int("model.d_model") == 32);
  CHECK(kv.get_string("run.id") == "demo");
  CHECK(kv.get_double("meta.alpha") == 0.01);
  CHECK(kv.get_int("missing.key", 7) == 7);
  CHECK_THROWS_WITH_AS(kv.get_string("meta.k"), doctest::Contains("meta.k"), ConfigError);
  CHECK_THROWS_WITH_AS(kv.get_int("run.id"), doctest::Contains("run.id"), ConfigError);

  std::istringstream again(kv.serialize());
  KeyValueConfig back = KeyValueConfig::parse(again, "round");
  CHECK(back == kv);

  std::istringstream dup("a=1\na=2\n");
  CHECK_THROWS_WITH_AS(KeyValueConfig::parse(dup, "dup"), doctest::Contains("duplicate"), ConfigError);
  std::istringstream noeq("a and b\n");
  CHECK_THROWS_AS(KeyValueConfig::parse(noeq, "bad"), ConfigError);
}

TEST_CASE("config: experiment round trip preserves every field") {
  std::istringstream in(pretrain_config("/tmp/x", 10, 3));
  KeyValueConfig kv = KeyValueConfig::parse(in, "pre.cfg");
  ExperimentConfig cfg = ExperimentConfig::from_config(kv, true, false);
  CHECK(cfg.meta.k == 3);
  CHECK(cfg.mix.entries.size() == 2);

  KeyValueConfig serialized = cfg.to_config();
  std::istringstream again(serialized.serialize());
  ExperimentConfig back = ExperimentConfig::from_config(KeyValueConfig::parse(again, "again"), true, false);
  CHECK(back.meta.k == cfg.meta.k);
  CHECK(back.meta.alpha == cfg.meta.alpha);
  CHECK(back.seq_len == cfg.seq_len);
  CHECK(format_task_mix(back.mix) == format_task_mix(cfg.mix));
}

TEST_CASE("run records: encode/decode round trip and corrupt input") {
  RunRecord rec;
  rec.run_id = "demo|cloze-5|k=3|seed=2";
  rec.step = 4;
  rec.phase = Phase::kFinetune;
  rec.metrics = {{"dev_acc", 0.75}, {"test_acc", 0.5}};
  rec.timestamp = 1234;
  RunRecord back = decode_record(encode_record(rec));
  CHECK(back.run_id == rec.run_id);
  CHECK(back.step == rec.step);
  CHECK(back.phase == rec.phase);
  CHECK(back.metrics == rec.metrics);
  CHECK(back.timestamp == rec.timestamp);
  CHECK_THROWS_AS(decode_record("{not json"), IoError);
  CHECK_THROWS_AS(decode_record("{\"run_id\":\"x\"}"), IoError);
}

TEST_CASE("cmd_pretrain: missing required field names it and exits 1") {
  TempDir dir("metaprep_cli_missing");
  std::string cfg = pretrain_config(dir.file("out"), 3);
  // Drop the meta.k line entirely.
  std::string without;
  std::istringstream lines(cfg);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("meta.k=", 0) != 0) without += line + "\n";
  }
  write_file(dir.file("bad.cfg"), without);
  std::ostringstream log;
  PretrainArgs args;
  args.config_path = dir.file("bad.cfg");
  args.log = &log;
  CHECK(cmd_pretrain(args) == kExitConfig);
  CHECK(log.str().find("meta.k") != std::string::npos);

  PretrainArgs noexist;
  noexist.config_path = dir.file("nope.cfg");
  noexist.log = &log;
  CHECK(cmd_pretrain(noexist) == kExitConfig);
}

TEST_CASE("cmd_pretrain: a 10-step toy run emits 10 PRETRAIN records; resume replays the tail") {
  TempDir dir("metaprep_cli_pretrain");
  write_file(dir.file("pre10.cfg"), pretrain_config(dir.file("full"), 10));
  std::ostringstream log;
  PretrainArgs args;
  args.config_path = dir.file("pre10.cfg");
  args.log = &log;
  REQUIRE(cmd_pretrain(args) == kExitOk);
  std::vector<RunRecord> full = read_records(dir.file("full") + "/pretrain.jsonl");
  REQUIRE(full.size() == 10);
  for (const RunRecord& rec : full) {
    CHECK(rec.phase == Phase::kPretrain);
    CHECK(rec.metrics.count("test_loss") == 1);
    CHECK(rec.metrics.count("meta_grad_norm") == 1);
  }

  // Interrupt after step 5, then resume to 10: records 6..10 identical.
  write_file(dir.file("pre5.cfg"), pretrain_config(dir.file("resumed"), 5));
  PretrainArgs first;
  first.config_path = dir.file("pre5.cfg");
  first.log = &log;
  REQUIRE(cmd_pretrain(first) == kExitOk);
  write_file(dir.file("pre10b.cfg"), pretrain_config(dir.file("resumed"), 10));
  PretrainArgs second;
  second.config_path = dir.file("pre10b.cfg");
  second.resume = true;
  second.log = &log;
  REQUIRE(cmd_pretrain(second) == kExitOk);
  std::vector<RunRecord> resumed = read_records(dir.file("resumed") + "/pretrain.jsonl");
  REQUIRE(resumed.size() == 10);
  for (size_t i = 0; i < 10; ++i) {
    CHECK(resumed[i].step == full[i].step);
    for (const auto& [name, value] : full[i].metrics) {
      if (name == "wallclock_s") continue;
      CHECK(resumed[i].metrics.at(name) == value);
    }
  }

  // Resume without a checkpoint is a config error.
  write_file(dir.file("fresh.cfg"), pretrain_config(dir.file("fresh"), 5));
  PretrainArgs fresh;
  fresh.config_path = dir.file("fresh.cfg");
  fresh.resume = true;
  fresh.log = &log;
  CHECK(cmd_pretrain(fresh) == kExitConfig);
}

TEST_CASE("cmd_finetune and cmd_report: summary, series counts, error exits") {
  TempDir dir("metaprep_cli_ft");
  write_file(dir.file("pre.cfg"), pretrain_config(dir.file("pre"), 5));
  std::ostringstream log;
  PretrainArgs pre;
  pre.config_path = dir.file("pre.cfg");
  pre.log = &log;
  REQUIRE(cmd_pretrain(pre) == kExitOk);

  write_file(dir.file("ft.cfg"), finetune_config(dir.file("ft")));
  FinetuneArgs ft;
  ft.config_path = dir.file("ft.cfg");
  ft.checkpoint_path = dir.file("pre") + "/checkpoint.bin";
  ft.log = &log;
  REQUIRE(cmd_finetune(ft) == kExitOk);
  CHECK(fs::exists(dir.file("ft") + "/summary.tsv"));
  // Epoch rows: 1 checkpoint x 1 task x 2 seeds x epochs {0,1,2}.
  std::vector<RunRecord> records = read_records(dir.file("ft") + "/finetune.jsonl");
  CHECK(records.size() == 6);

  // Missing or incompatible checkpoints exit 1.
  FinetuneArgs missing = ft;
  missing.checkpoint_path = dir.file("nope.bin");
  CHECK(cmd_finetune(missing) == kExitConfig);
  ad::ParamSet odd;
  odd.insert("whatever", ad::Tensor::zeros({3}));
  save_checkpoint(dir.file("odd.bin"), odd);
  FinetuneArgs incompatible = ft;
  incompatible.checkpoint_path = dir.file("odd.bin");
  incompatible.out_dir = dir.file("ft2");
  CHECK(cmd_finetune(incompatible) == kExitConfig);

  // Report: series length = trained epochs x seeds.
  ReportArgs rep;
  rep.log_dir = dir.file("ft");
  rep.out_dir = dir.file("report");
  rep.log = &log;
  REQUIRE(cmd_report(rep) == kExitOk);
  std::ifstream series(dir.file("report") + "/series_k1_single_sentence-5.tsv");
  REQUIRE(series.good());
  std::string line;
  int rows = 0;
  std::getline(series, line);  // header
  while (std::getline(series, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2 * 2);  // 2 epochs x 2 seeds

  // Empty log directory exits 1.
  fs::create_directories(dir.file("empty"));
  ReportArgs bad;
  bad.log_dir = dir.file("empty");
  bad.out_dir = dir.file("report2");
  bad.log = &log;
  CHECK(cmd_report(bad) == kExitConfig);
}

TEST_CASE("cmd_pretrain: numeric divergence exits 2") {
  TempDir dir("metaprep_cli_diverge");
  std::string cfg = pretrain_config(dir.file("out"), 40);
  // Exploding SGD steps drive the loss to non-finite values within the run.
  cfg += "\n";
  size_t beta = cfg.find("meta.beta=0.002");
  cfg.replace(beta, std::string("meta.beta=0.002").size(), "meta.beta=1e6");
  size_t opt = cfg.find("meta.optimizer=adam");
  cfg.replace(opt, std::string("meta.optimizer=adam").size(), "meta.optimizer=sgd");
  size_t alpha = cfg.find("meta.alpha=0.02");
  cfg.replace(alpha, std::string("meta.alpha=0.02").size(), "meta.alpha=1e6");
  write_file(dir.file("explode.cfg"), cfg);
  std::ostringstream log;
  PretrainArgs args;
  args.config_path = dir.file("explode.cfg");
  args.log = &log;
  CHECK(cmd_pretrain(args) == kExitDiverged);
  CHECK(log.str().find("divergence") != std::string::npos);
}

TEST_CASE("cmd_gradcheck: quick scale passes; the corruption hook trips exit 3") {
  std::ostringstream log;
  GradcheckArgs ok;
  ok.scale = "quick";
  ok.log = &log;
  CHECK(cmd_gradcheck(ok) == kExitOk);
  // Every advertised invariant family shows up in the table.
  for (const char* name :
       {"autodiff.model_loss_fd", "autodiff.double_backward_hvp", "autodiff.linearity", "autodiff.determinism",
        "metatrain.eq4_unrolled_fd", "metatrain.quadratic_oracle", "metatrain.depth0_degeneracy",
        "metatrain.fo_alpha_limit", "metatrain.budget_accounting"}) {
    CHECK(log.str().find(name) != std::string::npos);
  }

  std::ostringstream log2;
  GradcheckArgs corrupt;
  corrupt.scale = "quick";
  corrupt.inject_grad_error = true;
  corrupt.log = &log2;
  CHECK(cmd_gradcheck(corrupt) == kExitCheck);
  CHECK(log2.str().find("FAILED: metatrain.eq4_unrolled_fd") != std::string::npos);

  GradcheckArgs bad;
  bad.scale = "nonsense";
  bad.log = &log2;
  CHECK(cmd_gradcheck(bad) == kExitConfig);
}

TEST_SUITE_END();
