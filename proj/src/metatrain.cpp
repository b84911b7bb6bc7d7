#include "metaprep/metatrain.hpp"

#include <chrono>
#include <cmath>

namespace metaprep::meta {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void bump(std::int64_t* counter) {
  if (counter != nullptr) ++*counter;
}

}  // namespace

const char* grad_mode_name(GradMode mode) { return mode == GradMode::kFull ? "full" : "first_order"; }
const char* outer_opt_name(OuterOpt opt) { return opt == OuterOpt::kSgd ? "sgd" : "adam"; }

GradMode grad_mode_from_name(const std::string& name) {
  if (name == "full") return GradMode::kFull;
  if (name == "first_order") return GradMode::kFirstOrder;
  throw ConfigError("unknown grad mode '" + name + "' (expected full|first_order)");
}

OuterOpt outer_opt_from_name(const std::string& name) {
  if (name == "sgd") return OuterOpt::kSgd;
  if (name == "adam") return OuterOpt::kAdam;
  throw ConfigError("unknown outer optimizer '" + name + "' (expected sgd|adam)");
}

void MetaConfig::validate() const {
  if (k < 0) throw ConfigError("meta: k must be >= 0");
  if (k > 32) throw ConfigError("meta: k capped at 32 (unrolled memory grows with k)");
  if (alpha <= 0) throw ConfigError("meta: alpha must be > 0");
  if (beta <= 0) throw ConfigError("meta: beta must be > 0");
  if (total_meta_test_steps < 0) throw ConfigError("meta: total_meta_test_steps must be >= 0");
}

Tensor ModelObjective::loss(const ParamSet& params, const tasks::Batch& batch) const {
  switch (batch.tag) {
    case TaskTag::kMlm: {
      nn::EncoderOutput out = nn::encode(params, cfg_, batch.tokens, batch.segments, batch.attention_mask,
                                         dropout_rng_);
      return nn::mlm_loss(params, out, batch.mask_positions, batch.mask_targets);
    }
    case TaskTag::kNsp: {
      nn::EncoderOutput out = nn::encode(params, cfg_, batch.tokens, batch.segments, batch.attention_mask,
                                         dropout_rng_);
      return nn::nsp_loss(params, out, batch.labels);
    }
    case TaskTag::kQaMatch:
    case TaskTag::kQqMatch: {
      nn::EncoderOutput out = nn::encode(params, cfg_, batch.tokens, batch.segments, batch.attention_mask,
                                         dropout_rng_);
      return nn::pair_loss(params, out, batch.labels, batch.tag);
    }
    default:
      throw ValueError("model objective: batch tag '" + task_tag_name(batch.tag) +
                       "' is not a pre-training task");
  }
}

Tensor QuadraticObjective::loss(const ParamSet& params, const tasks::Batch&) const {
  return tasks::quadratic_loss(task_, params.at("theta"));
}

ParamSet QuadraticObjective::make_params(const Eigen::ArrayXd& theta0) {
  ParamSet p;
  p.insert("theta", Tensor(Shape{theta0.size()}, theta0));
  return p;
}

InnerLoopResult inner_loop(const Objective& objective, const ParamSet& theta0,
                           std::span<const tasks::Batch> batches, double alpha, bool differentiable,
                           std::int64_t* grad_evals) {
  InnerLoopResult result;
  result.trajectory.push_back(theta0.detached());

  if (differentiable) {
    ParamSet theta = theta0;
    int j = 0;
    for (const tasks::Batch& batch : batches) {
      ++j;
      Tensor loss = objective.loss(theta, batch);
      bump(grad_evals);
      if (!std::isfinite(loss.value())) {
        throw NumericError("inner loop: non-finite loss at step " + std::to_string(j));
      }
      result.losses.push_back(loss.value());
      ParamSet grads = ad::grad(loss, theta, /*create_graph=*/true);
      if (!grads.all_finite()) {
        throw NumericError("inner loop: non-finite gradient at step " + std::to_string(j));
      }
      ParamSet next;
      size_t i = 0;
      for (const auto& [name, value] : theta) {
        next.insert(name, ad::add(value, ad::scale(grads.entries()[i++].second, -alpha)));
      }
      theta = std::move(next);
      result.trajectory.push_back(theta.detached());
    }
    result.theta_k = std::move(theta);
    return result;
  }

  ParamSet theta = theta0.detached();
  int j = 0;
  for (const tasks::Batch& batch : batches) {
    ++j;
    ad::Graph g;
    ParamSet live = theta.attached_leaves(g);
    Tensor loss = objective.loss(live, batch);
    bump(grad_evals);
    if (!std::isfinite(loss.value())) {
      throw NumericError("inner loop: non-finite loss at step " + std::to_string(j));
    }
    result.losses.push_back(loss.value());
    ParamSet grads = ad::grad(loss, live);
    if (!grads.all_finite()) {
      throw NumericError("inner loop: non-finite gradient at step " + std::to_string(j));
    }
    theta = theta.axpy(-alpha, grads);
    result.trajectory.push_back(theta.detached());
  }
  result.theta_k = std::move(theta);
  return result;
}

MetaGradResult meta_gradient(const Objective& objective, const ParamSet& theta0,
                             std::span<const tasks::Batch> train_batches, const tasks::Batch& test_batch,
                             double alpha, int k, GradMode mode, std::int64_t* grad_evals) {
  if (static_cast<int>(train_batches.size()) != k) {
    throw ValueError("meta gradient: expected " + std::to_string(k) + " train batches, got " +
                     std::to_string(train_batches.size()));
  }
  MetaGradResult result;
  if (mode == GradMode::kFull) {
    ad::Graph g;
    ParamSet leaves = theta0.attached_leaves(g);
    InnerLoopResult inner = inner_loop(objective, leaves, train_batches, alpha, /*differentiable=*/true,
                                       grad_evals);
    Tensor test_loss = objective.loss(inner.theta_k, test_batch);
    bump(grad_evals);
    if (!std::isfinite(test_loss.value())) throw NumericError("meta gradient: non-finite test loss");
    result.grad = ad::grad(test_loss, leaves).detached();
    result.test_loss = test_loss.value();
    result.inner_losses = std::move(inner.losses);
    return result;
  }

  InnerLoopResult inner = inner_loop(objective, theta0, train_batches, alpha, /*differentiable=*/false,
                                     grad_evals);
  ad::Graph g;
  ParamSet live = inner.theta_k.attached_leaves(g);
  Tensor test_loss = objective.loss(live, test_batch);
  bump(grad_evals);
  if (!std::isfinite(test_loss.value())) throw NumericError("meta gradient: non-finite test loss");
  result.grad = ad::grad(test_loss, live).detached();
  result.test_loss = test_loss.value();
  result.inner_losses = std::move(inner.losses);
  return result;
}

ParamSet meta_gradient_full(const Objective& objective, const ParamSet& theta0,
                            std::span<const tasks::Batch> train_batches, const tasks::Batch& test_batch,
                            double alpha, int k, std::int64_t* grad_evals) {
  return meta_gradient(objective, theta0, train_batches, test_batch, alpha, k, GradMode::kFull, grad_evals).grad;
}

ParamSet meta_gradient_first_order(const Objective& objective, const ParamSet& theta0,
                                   std::span<const tasks::Batch> train_batches, const tasks::Batch& test_batch,
                                   double alpha, int k, std::int64_t* grad_evals) {
  return meta_gradient(objective, theta0, train_batches, test_batch, alpha, k, GradMode::kFirstOrder, grad_evals)
      .grad;
}

void outer_update(ParamSet& theta0, const ParamSet& meta_grad, const MetaConfig& cfg, OptimizerState& state) {
  if (!theta0.compatible_with(meta_grad)) {
    throw ShapeError("outer update: gradient shapes do not match parameters");
  }
  if (cfg.outer_optimizer == OuterOpt::kSgd) {
    theta0 = theta0.axpy(-cfg.beta, meta_grad);
    state.step += 1;
    return;
  }
  if (state.m.empty()) {
    state.m = meta_grad.scaled(0.0);
    state.v = meta_grad.scaled(0.0);
  }
  state.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  ParamSet next;
  ParamSet next_m;
  ParamSet next_v;
  for (size_t i = 0; i < theta0.size(); ++i) {
    const auto& [name, p] = theta0.entries()[i];
    const Storage& g = meta_grad.entries()[i].second.values();
    Storage m = b1 * state.m.entries()[i].second.values() + (1.0 - b1) * g;
    Storage v = b2 * state.v.entries()[i].second.values() + (1.0 - b2) * g.square();
    Storage update = (m / bc1) / ((v / bc2).sqrt() + cfg.adam_eps);
    next.insert(name, Tensor(p.shape(), p.values() - cfg.beta * update));
    next_m.insert(name, Tensor(p.shape(), std::move(m)));
    next_v.insert(name, Tensor(p.shape(), std::move(v)));
  }
  theta0 = std::move(next);
  state.m = std::move(next_m);
  state.v = std::move(next_v);
}

std::vector<tasks::Batch> QuadraticSampler::sample(Index k_plus_1, RngStream&) const {
  std::vector<tasks::Batch> batches(static_cast<size_t>(k_plus_1));
  for (auto& b : batches) b.tag = TaskTag::kQuadratic;
  return batches;
}

PretrainResult pretrain(const MetaConfig& cfg, const Objective& objective, const BatchSampler& sampler,
                        const ParamSet& init, const PretrainHooks& hooks, const PretrainStart* resume) {
  cfg.validate();
  PretrainResult result;
  result.params = resume != nullptr ? resume->params.detached() : init.detached();
  result.opt = resume != nullptr ? resume->opt : OptimizerState{};
  result.data_rng = resume != nullptr && resume->data_rng.has_value()
                        ? *resume->data_rng
                        : RngStream::from_seed(cfg.seed).split("data");
  std::int64_t start = resume != nullptr ? resume->start_step : 0;

  for (std::int64_t step = start; step < cfg.total_meta_test_steps; ++step) {
    auto t0 = Clock::now();
    std::vector<tasks::Batch> batches = sampler.sample(cfg.k + 1, result.data_rng);
    if (static_cast<int>(batches.size()) != cfg.k + 1) {
      throw ValueError("pretrain: sampler returned " + std::to_string(batches.size()) + " batches, expected " +
                       std::to_string(cfg.k + 1));
    }
    std::span<const tasks::Batch> train(batches.data(), static_cast<size_t>(cfg.k));
    const tasks::Batch& test = batches.back();

    MetaGradResult mg;
    try {
      mg = meta_gradient(objective, result.params, train, test, cfg.alpha, cfg.k, cfg.grad_mode,
                         &result.grad_evals);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (meta-test step " + std::to_string(step) + ")");
    }
    if (!mg.grad.all_finite()) {
      throw NumericError("pretrain: non-finite meta gradient at meta-test step " + std::to_string(step));
    }
    outer_update(result.params, mg.grad, cfg, result.opt);

    MetaStepReport report;
    report.inner_losses = std::move(mg.inner_losses);
    report.test_loss = mg.test_loss;
    report.meta_grad_norm = mg.grad.l2_norm();
    report.wallclock_s = seconds_since(t0);
    report.test_tag = test.tag;
    if (hooks.on_report) hooks.on_report(step, report);
    result.reports.push_back(std::move(report));

    bool checkpoint_due = cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0;
    if (hooks.on_checkpoint && (checkpoint_due || step + 1 == cfg.total_meta_test_steps)) {
      hooks.on_checkpoint(step + 1, result.params, result.opt, result.data_rng);
    }
  }
  return result;
}

PretrainResult train_multitask_baseline(const MetaConfig& cfg, const Objective& objective,
                                        const BatchSampler& sampler, const ParamSet& init,
                                        const PretrainHooks& hooks) {
  // Deliberately the textbook loop: one batch, one gradient, one update.
  PretrainResult result;
  result.params = init.detached();
  result.data_rng = RngStream::from_seed(cfg.seed).split("data");
  for (std::int64_t step = 0; step < cfg.total_meta_test_steps; ++step) {
    auto t0 = Clock::now();
    std::vector<tasks::Batch> batches = sampler.sample(1, result.data_rng);
    ad::Graph g;
    ParamSet live = result.params.attached_leaves(g);
    Tensor loss = objective.loss(live, batches[0]);
    ++result.grad_evals;
    if (!std::isfinite(loss.value())) {
      throw NumericError("baseline: non-finite loss at step " + std::to_string(step));
    }
    ParamSet grads = ad::grad(loss, live);
    outer_update(result.params, grads, cfg, result.opt);

    MetaStepReport report;
    report.test_loss = loss.value();
    report.meta_grad_norm = grads.l2_norm();
    report.wallclock_s = seconds_since(t0);
    report.test_tag = batches[0].tag;
    if (hooks.on_report) hooks.on_report(step, report);
    if (hooks.on_checkpoint) hooks.on_checkpoint(step + 1, result.params, result.opt, result.data_rng);
    result.reports.push_back(std::move(report));
  }
  return result;
}

}  // namespace metaprep::meta
