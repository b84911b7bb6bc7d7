#pragma once

#include "metaprep/autodiff.hpp"
#include "metaprep/model.hpp"
#include "metaprep/tasks.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>

namespace metaprep::meta {

using ad::ParamSet;
using ad::Tensor;

enum class GradMode { kFull, kFirstOrder };
enum class OuterOpt { kSgd, kAdam };

const char* grad_mode_name(GradMode mode);
const char* outer_opt_name(OuterOpt opt);
GradMode grad_mode_from_name(const std::string& name);
OuterOpt outer_opt_from_name(const std::string& name);

struct MetaConfig {
  int k{0};                       // meta-train depth
  double alpha{2e-3};             // inner step size
  double beta{2e-3};              // outer step size
  GradMode grad_mode{GradMode::kFull};
  OuterOpt outer_optimizer{OuterOpt::kAdam};
  std::int64_t total_meta_test_steps{0};
  std::uint64_t seed{0};
  std::int64_t checkpoint_interval{0};  // 0: checkpoint only when the driver decides
  double adam_beta1{0.9};
  double adam_beta2{0.999};
  double adam_eps{1e-8};

  void validate() const;
};

struct MetaStepReport {
  std::vector<double> inner_losses;  // length k
  double test_loss{0.0};
  double meta_grad_norm{0.0};
  double wallclock_s{0.0};
  TaskTag test_tag{TaskTag::kMlm};
};

// A loss family over (params, batch). Implementations build the loss on
// whatever graph the incoming params live on.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual Tensor loss(const ParamSet& params, const tasks::Batch& batch) const = 0;
};

// Transformer pre-training losses, dispatched on the batch tag.
class ModelObjective : public Objective {
 public:
  explicit ModelObjective(nn::ModelConfig cfg, RngStream* dropout_rng = nullptr)
      : cfg_(std::move(cfg)), dropout_rng_(dropout_rng) {}
  Tensor loss(const ParamSet& params, const tasks::Batch& batch) const override;
  const nn::ModelConfig& config() const { return cfg_; }

 private:
  nn::ModelConfig cfg_;
  RngStream* dropout_rng_;
};

// Analytic diagonal quadratic; parameters live under the single entry "theta".
class QuadraticObjective : public Objective {
 public:
  explicit QuadraticObjective(tasks::QuadraticTask task) : task_(std::move(task)) {}
  Tensor loss(const ParamSet& params, const tasks::Batch& batch) const override;
  const tasks::QuadraticTask& task() const { return task_; }

  static ParamSet make_params(const Eigen::ArrayXd& theta0);

 private:
  tasks::QuadraticTask task_;
};

struct InnerLoopResult {
  ParamSet theta_k;                   // graph-connected in differentiable mode
  std::vector<ParamSet> trajectory;   // detached theta_0 .. theta_k
  std::vector<double> losses;         // k inner losses
};

// Plain SGD descent steps theta_j = theta_{j-1} - alpha * grad. In
// differentiable mode theta0 must be graph-attached and theta_k stays
// connected to it; otherwise each step runs on its own throwaway graph.
InnerLoopResult inner_loop(const Objective& objective, const ParamSet& theta0,
                           std::span<const tasks::Batch> batches, double alpha, bool differentiable,
                           std::int64_t* grad_evals = nullptr);

struct MetaGradResult {
  ParamSet grad;
  double test_loss{0.0};
  std::vector<double> inner_losses;
};

MetaGradResult meta_gradient(const Objective& objective, const ParamSet& theta0,
                             std::span<const tasks::Batch> train_batches, const tasks::Batch& test_batch,
                             double alpha, int k, GradMode mode, std::int64_t* grad_evals = nullptr);

// Exact gradient of L(theta_k(theta0); test) w.r.t. theta0: one backward pass
// through the unrolled inner loop. Hessians are never materialized.
ParamSet meta_gradient_full(const Objective& objective, const ParamSet& theta0,
                            std::span<const tasks::Batch> train_batches, const tasks::Batch& test_batch,
                            double alpha, int k, std::int64_t* grad_evals = nullptr);

// First-order approximation: grad of the test loss at theta_k, applied as if
// it were the gradient at theta0. Exact at k = 0 and in the alpha -> 0 limit.
ParamSet meta_gradient_first_order(const Objective& objective, const ParamSet& theta0,
                                   std::span<const tasks::Batch> train_batches, const tasks::Batch& test_batch,
                                   double alpha, int k, std::int64_t* grad_evals = nullptr);

struct OptimizerState {
  std::int64_t step{0};
  ParamSet m;  // Adam first moments (empty until the first Adam step)
  ParamSet v;  // Adam second moments
};

void outer_update(ParamSet& theta0, const ParamSet& meta_grad, const MetaConfig& cfg, OptimizerState& state);

class BatchSampler {
 public:
  virtual ~BatchSampler() = default;
  virtual std::vector<tasks::Batch> sample(Index k_plus_1, RngStream& rng) const = 0;
};

class MixSampler : public BatchSampler {
 public:
  MixSampler(tasks::Corpus corpus, tasks::TaskMix mix, Index batch_size, Index seq_len)
      : corpus_(std::move(corpus)), mix_(std::move(mix)), batch_size_(batch_size), seq_len_(seq_len) {}
  std::vector<tasks::Batch> sample(Index k_plus_1, RngStream& rng) const override {
    return tasks::sample_pretrain_batches(corpus_, mix_, k_plus_1, batch_size_, seq_len_, rng);
  }
  const tasks::Corpus& corpus() const { return corpus_; }

 private:
  tasks::Corpus corpus_;
  tasks::TaskMix mix_;
  Index batch_size_;
  Index seq_len_;
};

// Tag-only batches for objectives that ignore batch contents.
class QuadraticSampler : public BatchSampler {
 public:
  std::vector<tasks::Batch> sample(Index k_plus_1, RngStream& rng) const override;
};

struct PretrainHooks {
  std::function<void(std::int64_t step, const MetaStepReport&)> on_report;
  std::function<void(std::int64_t step, const ParamSet&, const OptimizerState&, const RngStream& data_rng)>
      on_checkpoint;
};

struct PretrainStart {
  ParamSet params;
  OptimizerState opt;
  std::int64_t start_step{0};
  std::optional<RngStream> data_rng;
};

struct PretrainResult {
  ParamSet params;
  OptimizerState opt;
  std::vector<MetaStepReport> reports;
  std::int64_t grad_evals{0};  // pre-training loss-gradient evaluations, (k+1) per step
  RngStream data_rng;
};

// Algorithm: per meta-test step, sample k+1 batches, run the inner loop on the
// first k, take the meta-gradient on the last, update theta0.
PretrainResult pretrain(const MetaConfig& cfg, const Objective& objective, const BatchSampler& sampler,
                        const ParamSet& init, const PretrainHooks& hooks = {},
                        const PretrainStart* resume = nullptr);

// The standard multi-task training loop, written independently of pretrain:
// the k = 0 equivalence check compares against this.
PretrainResult train_multitask_baseline(const MetaConfig& cfg, const Objective& objective,
                                        const BatchSampler& sampler, const ParamSet& init,
                                        const PretrainHooks& hooks = {});

}  // namespace metaprep::meta
