#include "metaprep/experiment.hpp"

#include "metaprep/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace metaprep::cli {

namespace fs = std::filesystem;

namespace {

meta::PretrainHooks make_hooks(const ExperimentConfig& cfg, std::ofstream& log_stream,
                               const std::string& ckpt_path) {
  meta::PretrainHooks hooks;
  hooks.on_report = [&log_stream, run_id = cfg.run_id](std::int64_t step, const meta::MetaStepReport& rep) {
    RunRecord rec;
    rec.run_id = run_id;
    rec.step = step;
    rec.phase = Phase::kPretrain;
    rec.timestamp = now_seconds();
    rec.metrics["test_loss"] = rep.test_loss;
    rec.metrics["loss." + task_tag_name(rep.test_tag)] = rep.test_loss;
    rec.metrics["meta_grad_norm"] = rep.meta_grad_norm;
    rec.metrics["wallclock_s"] = rep.wallclock_s;
    if (!rep.inner_losses.empty()) {
      rec.metrics["inner_loss_first"] = rep.inner_losses.front();
      rec.metrics["inner_loss_last"] = rep.inner_losses.back();
    }
    log_stream << encode_record(rec) << "\n";
    log_stream.flush();
  };
  hooks.on_checkpoint = [ckpt_path, &cfg](std::int64_t step, const ad::ParamSet& params,
                                          const meta::OptimizerState& opt, const RngStream& data_rng) {
    TrainState state;
    state.step = step;
    state.budget_steps = cfg.meta.total_meta_test_steps;
    state.k = cfg.meta.k;
    state.data_rng_key = data_rng.key();
    state.data_rng_pos = data_rng.position();
    state.opt_step = opt.step;
    state.adam_m = opt.m.detached();
    state.adam_v = opt.v.detached();
    save_checkpoint(ckpt_path, params, &state);
  };
  return hooks;
}

std::vector<ft::DownstreamTask> build_downstream_tasks(const ExperimentConfig& cfg) {
  std::vector<ft::DownstreamTask> out;
  std::uint64_t lane = 0;
  for (ft::TaskKind kind : cfg.finetune.kinds) {
    out.push_back(ft::synth_downstream(kind, cfg.finetune.task_seed + 1000 * lane, cfg.finetune.sizes,
                                       cfg.model.vocab_size, cfg.finetune.seq_len, cfg.finetune.batch_size));
    ++lane;
  }
  return out;
}

}  // namespace

std::string finetune_run_id(const std::string& base, const std::string& task, int k, std::uint64_t seed) {
  return base + "|" + task + "|k=" + std::to_string(k) + "|seed=" + std::to_string(seed);
}

int cmd_pretrain(const PretrainArgs& args) {
  std::ostream& log = *args.log;
  ExperimentConfig cfg;
  try {
    KeyValueConfig kv = KeyValueConfig::parse_file(args.config_path);
    cfg = ExperimentConfig::from_config(kv, /*need_meta=*/true, /*need_finetune=*/false);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.seed.has_value()) {
      cfg.seed = *args.seed;
      cfg.meta.seed = *args.seed;
    }
    if (cfg.out_dir.empty()) throw ConfigError("no output directory (set run.out or pass --out)");
  } catch (const std::exception& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    fs::create_directories(cfg.out_dir);
    tasks::Corpus corpus = tasks::generate_corpus(cfg.corpus_seed, cfg.corpus_docs, cfg.model.vocab_size);
    meta::MixSampler sampler(std::move(corpus), cfg.mix, cfg.batch_size, cfg.seq_len);
    RngStream dropout_rng = RngStream::from_seed(cfg.seed).split("dropout");
    meta::ModelObjective objective(cfg.model, cfg.model.dropout_rate > 0 ? &dropout_rng : nullptr);

    ad::ParamSet reference = nn::init_params(cfg.model, 0);
    ad::ParamSet init;
    if (!args.warm_start_checkpoint.empty()) {
      LoadedCheckpoint warm = load_checkpoint(args.warm_start_checkpoint);
      if (!warm.params.compatible_with(reference)) {
        log << "config error: warm-start checkpoint '" << args.warm_start_checkpoint
            << "' does not match the model config\n";
        return kExitConfig;
      }
      init = std::move(warm.params);
    } else {
      init = nn::init_params(cfg.model, cfg.seed);
    }

    const std::string ckpt_path = (fs::path(cfg.out_dir) / "checkpoint.bin").string();
    meta::PretrainStart resume_state;
    const meta::PretrainStart* resume = nullptr;
    if (args.resume) {
      if (!fs::exists(ckpt_path)) {
        log << "config error: --resume requested but no checkpoint at " << ckpt_path << "\n";
        return kExitConfig;
      }
      LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
      if (!loaded.state.has_value()) {
        log << "config error: checkpoint at " << ckpt_path << " carries no training state\n";
        return kExitConfig;
      }
      if (loaded.state->k != cfg.meta.k) {
        log << "config error: checkpoint was trained with k=" << loaded.state->k << ", config says k="
            << cfg.meta.k << "\n";
        return kExitConfig;
      }
      resume_state.params = std::move(loaded.params);
      resume_state.start_step = loaded.state->step;
      resume_state.opt.step = loaded.state->opt_step;
      resume_state.opt.m = std::move(loaded.state->adam_m);
      resume_state.opt.v = std::move(loaded.state->adam_v);
      resume_state.data_rng = RngStream(loaded.state->data_rng_key, loaded.state->data_rng_pos);
      resume = &resume_state;
    }

    std::ofstream log_stream(fs::path(cfg.out_dir) / "pretrain.jsonl", std::ios::app);
    if (!log_stream) throw IoError("cannot open pretrain.jsonl under " + cfg.out_dir);
    meta::PretrainHooks hooks = make_hooks(cfg, log_stream, ckpt_path);

    meta::PretrainResult result = meta::pretrain(cfg.meta, objective, sampler, init, hooks, resume);

    // Persist the exact configuration the run used.
    std::ofstream cfg_out(fs::path(cfg.out_dir) / "config.run");
    cfg_out << cfg.to_config().serialize();

    log << "pretrain done: " << result.reports.size() << " meta-test steps this invocation, "
        << result.grad_evals << " gradient evaluations, final checkpoint at " << ckpt_path << "\n";
    return kExitOk;
  } catch (const NumericError& e) {
    log << "numeric divergence: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_finetune(const FinetuneArgs& args) {
  std::ostream& log = *args.log;
  ExperimentConfig cfg;
  try {
    KeyValueConfig kv = KeyValueConfig::parse_file(args.config_path);
    cfg = ExperimentConfig::from_config(kv, /*need_meta=*/false, /*need_finetune=*/true);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (cfg.out_dir.empty()) throw ConfigError("no output directory (set run.out or pass --out)");
    if (args.checkpoint_path.empty()) throw ConfigError("finetune requires --checkpoint");
    if (args.seed.has_value()) cfg.finetune.seeds = {*args.seed};
  } catch (const std::exception& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    fs::create_directories(cfg.out_dir);
    LoadedCheckpoint ckpt = load_checkpoint(args.checkpoint_path);

    std::map<int, ft::StudyCheckpoint> checkpoints;
    std::int64_t budget = ckpt.state.has_value() ? ckpt.state->budget_steps : 0;
    checkpoints[cfg.finetune.label_k] = ft::StudyCheckpoint{std::move(ckpt.params), budget};

    std::vector<ft::DownstreamTask> task_list = build_downstream_tasks(cfg);

    ft::FinetuneOptions opts;
    opts.epochs = cfg.finetune.epochs;
    opts.lr = cfg.finetune.lr;
    ft::StudyResult study = ft::init_quality_study(checkpoints, task_list, cfg.finetune.seeds, cfg.model, opts);

    std::ofstream tsv(fs::path(cfg.out_dir) / "summary.tsv");
    ft::write_study_tsv(study, tsv);

    std::vector<RunRecord> records;
    for (const ft::StudyRow& row : study.rows) {
      RunRecord rec;
      rec.run_id = finetune_run_id(cfg.run_id, row.task, row.k, row.seed);
      rec.step = row.epoch;
      rec.phase = Phase::kFinetune;
      rec.timestamp = now_seconds();
      rec.metrics["dev_acc"] = row.dev_acc;
      rec.metrics["test_acc"] = row.test_acc;
      rec.metrics["k"] = static_cast<double>(row.k);
      rec.metrics["seed"] = static_cast<double>(row.seed);
      records.push_back(std::move(rec));
    }
    append_records((fs::path(cfg.out_dir) / "finetune.jsonl").string(), records);

    log << "finetune done: " << study.rows.size() << " epoch records across " << task_list.size()
        << " tasks, summary at " << (fs::path(cfg.out_dir) / "summary.tsv").string() << "\n";
    return kExitOk;
  } catch (const NumericError& e) {
    log << "numeric divergence: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

namespace {

struct CheckRow {
  std::string name;
  double max_err{0.0};
  double tolerance{0.0};
  bool pass{false};
  std::string note;
};

double param_rel_err(const ad::ParamSet& a, const ad::ParamSet& b) {
  double diff = 0, ref = 0;
  size_t i = 0;
  for (const auto& [name, t] : a) {
    const auto& other = b.entries()[i++].second;
    diff = std::max(diff, (t.values() - other.values()).abs().maxCoeff());
    ref = std::max(ref, other.values().abs().maxCoeff());
  }
  return diff / std::max(1.0, ref);
}

nn::ModelConfig check_model_config() {
  nn::ModelConfig cfg;
  cfg.vocab_size = 10;
  cfg.max_len = 6;
  cfg.d_model = 6;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 6;
  return cfg;
}

tasks::Batch check_mlm_batch(const tasks::Corpus& corpus, std::uint64_t lane) {
  RngStream rng = RngStream::from_seed(7100).split(lane);
  return tasks::make_mlm_batch(corpus, 2, 6, rng);
}

}  // namespace

int cmd_gradcheck(const GradcheckArgs& args) {
  std::ostream& log = *args.log;
  const bool quick = args.scale == "quick";
  if (!quick && args.scale != "default") {
    log << "config error: unknown scale '" << args.scale << "' (expected default|quick)\n";
    return kExitConfig;
  }
  std::vector<CheckRow> rows;
  auto add = [&rows](const std::string& name, double err, double tol, const std::string& note = "") {
    rows.push_back({name, err, tol, err <= tol, note});
  };

  nn::ModelConfig mcfg = check_model_config();
  tasks::Corpus corpus = tasks::generate_corpus(7100, 12, mcfg.vocab_size);
  meta::ModelObjective objective(mcfg);
  ad::ParamSet theta0 = nn::init_params(mcfg, 7100);

  // autodiff: model losses against central finite differences.
  {
    tasks::Batch batch = check_mlm_batch(corpus, 1);
    auto loss_of = [&](const ad::ParamSet& p) { return objective.loss(p, batch); };
    ad::Graph g;
    ad::ParamSet live = theta0.attached_leaves(g);
    ad::ParamSet analytic = ad::grad(loss_of(live), live);
    ad::ParamSet numeric = ad::finite_difference_grad(
        [&](const ad::ParamSet& p) { return loss_of(p).value(); }, theta0, 1e-5);
    add("autodiff.model_loss_fd", param_rel_err(analytic, numeric), 1e-6);
  }

  // autodiff: Hessian-vector product of a dense quadratic, double backward.
  {
    const Index n = 6;
    RngStream rng = RngStream::from_seed(17);
    Storage av(n * n), vv(n), tv(n);
    for (Index i = 0; i < n * n; ++i) av(i) = rng.uniform(-1, 1);
    for (Index i = 0; i < n; ++i) vv(i) = rng.uniform(-1, 1);
    for (Index i = 0; i < n; ++i) tv(i) = rng.uniform(-1, 1);
    ad::Tensor a({n, n}, av), v({n}, vv);
    ad::Graph g;
    ad::Tensor theta = g.leaf(ad::Tensor({n}, tv));
    ad::Tensor col = ad::reshape(theta, {n, 1});
    ad::Tensor loss = ad::scale(ad::sum(ad::mul(col, ad::matmul(a, col))), 0.5);
    std::vector<ad::Tensor> wrt{theta};
    auto grads = ad::grad(loss, wrt, true);
    auto hvp = ad::grad(ad::sum(ad::mul(grads[0], v)), wrt);
    using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const MatRM> ma(av.data(), n, n);
    Eigen::Map<const Eigen::VectorXd> mv(vv.data(), n);
    Eigen::VectorXd expected = 0.5 * (ma + ma.transpose()) * mv;
    double err = 0;
    for (Index i = 0; i < n; ++i) err = std::max(err, std::abs(hvp[0][i] - expected(i)));
    add("autodiff.double_backward_hvp", err / std::max(1.0, expected.cwiseAbs().maxCoeff()), 1e-10);
  }

  // autodiff: linearity of the gradient operator.
  {
    tasks::Batch b1 = check_mlm_batch(corpus, 2);
    tasks::Batch b2 = check_mlm_batch(corpus, 3);
    const double ca = 1.3, cb = -0.7;
    ad::Graph g1;
    ad::ParamSet l1 = theta0.attached_leaves(g1);
    ad::ParamSet combined =
        ad::grad(ad::add(ad::scale(objective.loss(l1, b1), ca), ad::scale(objective.loss(l1, b2), cb)), l1);
    ad::Graph g2;
    ad::ParamSet l2 = theta0.attached_leaves(g2);
    ad::ParamSet ga = ad::grad(objective.loss(l2, b1), l2);
    ad::Graph g3;
    ad::ParamSet l3 = theta0.attached_leaves(g3);
    ad::ParamSet gb = ad::grad(objective.loss(l3, b2), l3);
    add("autodiff.linearity", combined.max_abs_diff(ga.scaled(ca).axpy(cb, gb)), 1e-12);
  }

  // autodiff: bit determinism of repeated evaluation.
  {
    tasks::Batch batch = check_mlm_batch(corpus, 4);
    auto run = [&] {
      ad::Graph g;
      ad::ParamSet live = theta0.attached_leaves(g);
      return ad::grad(objective.loss(live, batch), live).flatten();
    };
    add("autodiff.determinism", (run() - run()).cwiseAbs().maxCoeff(), 0.0);
  }

  // Eq. 4: full meta-gradient against finite differences of the unrolled map.
  {
    double worst = 0;
    for (int k : (quick ? std::vector<int>{1, 2} : std::vector<int>{1, 2, 3})) {
      std::vector<tasks::Batch> train;
      for (int j = 0; j < k; ++j) train.push_back(check_mlm_batch(corpus, 10 + static_cast<std::uint64_t>(j)));
      tasks::Batch test = check_mlm_batch(corpus, 20);
      const double alpha = 0.05;
      ad::ParamSet analytic = meta::meta_gradient_full(objective, theta0, train, test, alpha, k);
      if (args.inject_grad_error) {
        // Negative-control hook: corrupt one coordinate before comparing.
        Eigen::VectorXd flat = analytic.flatten();
        flat(0) += 1e-3;
        analytic = analytic.unflatten(flat);
      }
      auto unrolled = [&](const ad::ParamSet& p) {
        auto inner = meta::inner_loop(objective, p, train, alpha, false);
        ad::Graph g;
        ad::ParamSet live = inner.theta_k.attached_leaves(g);
        return objective.loss(live, test).value();
      };
      ad::ParamSet numeric = ad::finite_difference_grad(unrolled, theta0, 1e-5);
      worst = std::max(worst, param_rel_err(analytic, numeric));
    }
    add("metatrain.eq4_unrolled_fd", worst, 1e-5);
  }

  // Quadratic oracle: closed form vs the autodiff meta-gradient.
  {
    RngStream rng = RngStream::from_seed(404);
    double worst = 0;
    const int n_tasks = quick ? 3 : 10;
    for (int rep = 0; rep < n_tasks; ++rep) {
      tasks::QuadraticTask task = tasks::QuadraticTask::random(8, rng);
      meta::QuadraticObjective qobj(task);
      Eigen::ArrayXd t0(8);
      for (Index i = 0; i < 8; ++i) t0(i) = rng.uniform(-2, 2);
      ad::ParamSet params = meta::QuadraticObjective::make_params(t0);
      for (int k : {0, 1, 2, 5, 10}) {
        std::vector<tasks::Batch> train(static_cast<size_t>(k));
        for (auto& b : train) b.tag = TaskTag::kQuadratic;
        tasks::Batch test;
        test.tag = TaskTag::kQuadratic;
        ad::ParamSet g = meta::meta_gradient_full(qobj, params, train, test, 0.15, k);
        Eigen::ArrayXd oracle = tasks::quadratic_meta_gradient_oracle(task, t0, 0.15, k);
        double err = (g.at("theta").values() - oracle).abs().maxCoeff() / std::max(1.0, oracle.abs().maxCoeff());
        worst = std::max(worst, err);
      }
    }
    add("metatrain.quadratic_oracle", worst, 1e-10);
  }

  // Depth-0 degeneracy: FULL vs FIRST_ORDER updates and the baseline loop.
  {
    tasks::TaskMix mix{{{TaskTag::kMlm, 0.7}, {TaskTag::kNsp, 0.3}}};
    meta::MixSampler sampler(corpus, mix, 2, 6);
    meta::MetaConfig c;
    c.k = 0;
    c.alpha = 0.05;
    c.beta = 0.05;
    c.outer_optimizer = meta::OuterOpt::kSgd;
    c.total_meta_test_steps = quick ? 5 : 20;
    c.seed = 99;
    c.grad_mode = meta::GradMode::kFull;
    meta::PretrainResult full = meta::pretrain(c, objective, sampler, theta0);
    c.grad_mode = meta::GradMode::kFirstOrder;
    meta::PretrainResult fo = meta::pretrain(c, objective, sampler, theta0);
    meta::PretrainResult base = meta::train_multitask_baseline(c, objective, sampler, theta0);
    double err = std::max(full.params.max_abs_diff(fo.params), full.params.max_abs_diff(base.params));
    add("metatrain.depth0_degeneracy", err, 1e-12);
  }

  // Eq. 5 limit: first-order error shrinks monotonically as alpha -> 0.
  {
    std::vector<tasks::Batch> train{check_mlm_batch(corpus, 31), check_mlm_batch(corpus, 32)};
    tasks::Batch test = check_mlm_batch(corpus, 33);
    double prev = std::numeric_limits<double>::infinity();
    bool monotone = true;
    std::ostringstream gaps;
    gaps << "gaps over alpha {1e-1,1e-2,1e-3}:";
    for (double alpha : {1e-1, 1e-2, 1e-3}) {
      ad::ParamSet full = meta::meta_gradient_full(objective, theta0, train, test, alpha, 2);
      ad::ParamSet fo = meta::meta_gradient_first_order(objective, theta0, train, test, alpha, 2);
      double rel = (fo.flatten() - full.flatten()).norm() / full.flatten().norm();
      if (rel >= prev) monotone = false;
      prev = rel;
      gaps << " " << std::scientific << std::setprecision(2) << rel;
    }
    add("metatrain.fo_alpha_limit", monotone ? 0.0 : 1.0, 0.0, gaps.str());
  }

  // Budget accounting: (k+1) gradient evaluations per meta-test step.
  {
    tasks::TaskMix mix{{{TaskTag::kMlm, 1.0}}};
    meta::MixSampler sampler(corpus, mix, 2, 6);
    meta::MetaConfig c;
    c.k = 3;
    c.alpha = 0.05;
    c.beta = 0.05;
    c.outer_optimizer = meta::OuterOpt::kSgd;
    c.total_meta_test_steps = 5;
    c.seed = 7;
    meta::PretrainResult r = meta::pretrain(c, objective, sampler, theta0);
    add("metatrain.budget_accounting", std::abs(static_cast<double>(r.grad_evals - (c.k + 1) * 5)), 0.0);
  }

  // Informational: measured first-order vs full wallclock.
  {
    std::vector<tasks::Batch> train;
    for (int j = 0; j < 3; ++j) train.push_back(check_mlm_batch(corpus, 40 + static_cast<std::uint64_t>(j)));
    tasks::Batch test = check_mlm_batch(corpus, 44);
    auto time_mode = [&](meta::GradMode mode) {
      auto t0 = std::chrono::steady_clock::now();
      for (int rep = 0; rep < 20; ++rep) {
        meta::meta_gradient(objective, theta0, train, test, 0.05, 3, mode);
      }
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    double t_full = time_mode(meta::GradMode::kFull);
    double t_fo = time_mode(meta::GradMode::kFirstOrder);
    std::ostringstream note;
    note << "first-order/full wallclock = " << std::fixed << std::setprecision(2) << t_fo / t_full
         << " (reported, not gated)";
    rows.push_back({"metatrain.fo_compute_ratio", t_fo / t_full, std::numeric_limits<double>::infinity(), true,
                    note.str()});
  }

  log << "gradient and invariant checks (" << (quick ? "quick" : "default") << " scale)\n";
  std::string first_fail;
  for (const CheckRow& row : rows) {
    log << (row.pass ? "[PASS] " : "[FAIL] ") << std::left << std::setw(34) << row.name << " max_err="
        << std::scientific << std::setprecision(3) << row.max_err;
    if (std::isfinite(row.tolerance)) log << "  tol=" << row.tolerance;
    if (!row.note.empty()) log << "  (" << row.note << ")";
    log << "\n";
    if (!row.pass && first_fail.empty()) first_fail = row.name;
  }
  if (!first_fail.empty()) {
    log << "FAILED: " << first_fail << "\n";
    return kExitCheck;
  }
  log << "all checks passed\n";
  return kExitOk;
}

int cmd_report(const ReportArgs& args) {
  std::ostream& log = *args.log;
  try {
    if (!fs::is_directory(args.log_dir)) throw IoError("log directory '" + args.log_dir + "' does not exist");
    std::vector<RunRecord> records;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(args.log_dir)) {
      if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
      std::vector<RunRecord> part = read_records(file.string());
      records.insert(records.end(), part.begin(), part.end());
    }
    if (records.empty()) throw IoError("no run records found under '" + args.log_dir + "'");

    // Group fine-tuning records into per-(k, task) epoch series.
    struct SeriesRow {
      std::uint64_t seed;
      std::int64_t epoch;
      double dev;
      double test;
    };
    std::map<std::pair<int, std::string>, std::vector<SeriesRow>> series;
    for (const RunRecord& rec : records) {
      if (rec.phase != Phase::kFinetune || rec.step < 1) continue;
      auto kit = rec.metrics.find("k");
      auto sit = rec.metrics.find("seed");
      auto dit = rec.metrics.find("dev_acc");
      auto tit = rec.metrics.find("test_acc");
      if (kit == rec.metrics.end() || sit == rec.metrics.end() || dit == rec.metrics.end() ||
          tit == rec.metrics.end()) {
        continue;
      }
      std::string task = "unknown";
      size_t bar = rec.run_id.find('|');
      if (bar != std::string::npos) {
        size_t bar2 = rec.run_id.find('|', bar + 1);
        task = rec.run_id.substr(bar + 1, bar2 == std::string::npos ? std::string::npos : bar2 - bar - 1);
      }
      series[{static_cast<int>(kit->second), task}].push_back(
          {static_cast<std::uint64_t>(sit->second), rec.step, dit->second, tit->second});
    }
    if (series.empty()) throw IoError("no fine-tuning epoch records under '" + args.log_dir + "'");

    fs::create_directories(args.out_dir);
    std::ofstream means(fs::path(args.out_dir) / "series_means.tsv");
    means << "k\ttask\tepoch\tmean_dev_acc\tmean_test_acc\tn\n";
    for (auto& [key, rows] : series) {
      std::sort(rows.begin(), rows.end(), [](const SeriesRow& a, const SeriesRow& b) {
        return std::tie(a.seed, a.epoch) < std::tie(b.seed, b.epoch);
      });
      std::string name = "series_k" + std::to_string(key.first) + "_" + key.second + ".tsv";
      std::ofstream out(fs::path(args.out_dir) / name);
      out << "seed\tepoch\tdev_acc\ttest_acc\n";
      std::map<std::int64_t, std::pair<Eigen::Array2d, int>> per_epoch;
      for (const SeriesRow& row : rows) {
        out << row.seed << '\t' << row.epoch << '\t' << row.dev << '\t' << row.test << "\n";
        auto& slot = per_epoch[row.epoch];
        slot.first(0) += row.dev;
        slot.first(1) += row.test;
        slot.second += 1;
      }
      for (const auto& [epoch, acc] : per_epoch) {
        means << key.first << '\t' << key.second << '\t' << epoch << '\t' << acc.first(0) / acc.second << '\t'
              << acc.first(1) / acc.second << '\t' << acc.second << "\n";
      }
      log << "wrote " << name << " (" << rows.size() << " rows)\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace metaprep::cli
