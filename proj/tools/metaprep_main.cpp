#include "metaprep/experiment.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv) {
  CLI::App app{"metaprep: meta-learning multi-task pre-training experiments"};
  app.require_subcommand(1);

  metaprep::cli::PretrainArgs pretrain_args;
  CLI::App* pretrain = app.add_subcommand("pretrain", "run meta pre-training from a config file");
  pretrain->add_option("--config", pretrain_args.config_path, "config file (key=value)")->required();
  pretrain->add_option("--out", pretrain_args.out_dir, "output directory (overrides run.out)");
  pretrain->add_option("--seed", pretrain_args.seed, "seed override");
  pretrain->add_option("--checkpoint", pretrain_args.warm_start_checkpoint,
                       "warm-start from an existing checkpoint");
  pretrain->add_flag("--resume", pretrain_args.resume, "continue from the latest checkpoint in the output dir");

  metaprep::cli::FinetuneArgs finetune_args;
  CLI::App* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint on synthetic downstream tasks");
  finetune->add_option("--config", finetune_args.config_path, "config file (key=value)")->required();
  finetune->add_option("--checkpoint", finetune_args.checkpoint_path, "pre-trained checkpoint")->required();
  finetune->add_option("--out", finetune_args.out_dir, "output directory (overrides run.out)");
  finetune->add_option("--seed", finetune_args.seed, "single fine-tuning seed (overrides finetune.seeds)");

  metaprep::cli::GradcheckArgs gradcheck_args;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "run the gradient and invariant check suite");
  gradcheck->add_option("--scale", gradcheck_args.scale, "default|quick");
  gradcheck->add_flag("--inject-grad-error", gradcheck_args.inject_grad_error)->group("");  // test hook

  metaprep::cli::ReportArgs report_args;
  CLI::App* report = app.add_subcommand("report", "aggregate run logs into plot-ready epoch series");
  report->add_option("--logs", report_args.log_dir, "directory holding *.jsonl run logs")->required();
  report->add_option("--out", report_args.out_dir, "output directory for series files")->required();

  CLI11_PARSE(app, argc, argv);

  if (pretrain->parsed()) return metaprep::cli::cmd_pretrain(pretrain_args);
  if (finetune->parsed()) return metaprep::cli::cmd_finetune(finetune_args);
  if (gradcheck->parsed()) return metaprep::cli::cmd_gradcheck(gradcheck_args);
  if (report->parsed()) return metaprep::cli::cmd_report(report_args);
  return metaprep::cli::kExitConfig;
}
