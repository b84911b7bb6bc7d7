#pragma once

#include "metaprep/config.hpp"
#include "metaprep/runlog.hpp"

#include <iostream>
#include <optional>
#include <string>

namespace metaprep::cli {

// Subcommand exit codes.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;    // validation / IO problems
constexpr int kExitDiverged = 2;  // numeric divergence during training
constexpr int kExitCheck = 3;     // a gradient/invariant check failed

struct PretrainArgs {
  std::string config_path;
  std::string out_dir;                  // overrides run.out
  std::optional<std::uint64_t> seed;    // overrides run.seed
  std::string warm_start_checkpoint;    // initialize from an existing checkpoint
  bool resume{false};
  std::ostream* log{&std::cout};
};

struct FinetuneArgs {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;  // overrides the fine-tuning seed list with a single seed
  std::ostream* log{&std::cout};
};

struct GradcheckArgs {
  std::string scale{"default"};  // default | quick
  bool inject_grad_error{false};  // negative-control hook: corrupts one gradient
  std::ostream* log{&std::cout};
};

struct ReportArgs {
  std::string log_dir;
  std::string out_dir;
  std::ostream* log{&std::cout};
};

int cmd_pretrain(const PretrainArgs& args);
int cmd_finetune(const FinetuneArgs& args);
int cmd_gradcheck(const GradcheckArgs& args);
int cmd_report(const ReportArgs& args);

// run_id convention for fine-tuning records: "<base>|<task>|k=<k>|seed=<s>".
std::string finetune_run_id(const std::string& base, const std::string& task, int k, std::uint64_t seed);

}  // namespace metaprep::cli
