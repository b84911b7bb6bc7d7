#include "metaprep/autodiff.hpp"

#include <optional>
#include <unordered_set>

namespace metaprep::ad {

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool create_graph) {
  if (output.size() != 1 || output.rank() != 0) {
    throw ShapeError("grad: output must be a scalar, got " + shape_str(output.shape()));
  }
  if (!output.on_graph()) {
    // Constant output: nothing reaches any input.
    std::vector<Tensor> zeros;
    zeros.reserve(wrt.size());
    for (const Tensor& t : wrt) zeros.push_back(Tensor::zeros(t.shape()));
    return zeros;
  }
  Graph* g = output.graph();
  if (g->consumed()) {
    throw ValueError("grad: graph already consumed by a previous backward pass");
  }
  std::optional<Graph::PauseRecording> pause;
  if (!create_graph) pause.emplace(*g);

  const std::int64_t root = output.node();
  std::unordered_set<std::int64_t> keep;  // wrt entries may be non-leaf nodes
  for (const Tensor& t : wrt) {
    if (t.on_graph()) keep.insert(t.node());
  }
  std::vector<Tensor> adjoint(static_cast<size_t>(root) + 1);
  adjoint[static_cast<size_t>(root)] = Tensor::scalar(1.0);

  for (std::int64_t id = root; id >= 0; --id) {
    Tensor& adj = adjoint[static_cast<size_t>(id)];
    if (!adj.defined()) continue;
    const Node& node = g->node(id);
    if (node.op == Op::kLeaf) continue;
    Tensor out = Tensor::with_node(node.shape, node.values, g, id);
    std::vector<Tensor> contribs = backward_rule(node, out, adj);
    for (size_t i = 0; i < contribs.size(); ++i) {
      const Tensor& input = node.inputs[i];
      if (!input.on_graph()) continue;  // constants take no gradient
      std::int64_t in_id = input.node();
      Tensor& slot = adjoint[static_cast<size_t>(in_id)];
      // Accumulation order is fixed by the reverse node walk, which keeps
      // results bit-reproducible.
      slot = slot.defined() ? add(slot, contribs[i]) : contribs[i];
    }
    if (id != root && keep.count(id) == 0) adj = Tensor();  // release intermediate adjoints early
  }

  std::vector<Tensor> grads;
  grads.reserve(wrt.size());
  for (const Tensor& t : wrt) {
    if (t.on_graph() && t.graph() != g) {
      throw ValueError("grad: wrt tensor belongs to a different graph");
    }
    if (t.on_graph() && t.node() <= root && adjoint[static_cast<size_t>(t.node())].defined()) {
      grads.push_back(adjoint[static_cast<size_t>(t.node())]);
    } else {
      grads.push_back(Tensor::zeros(t.shape()));
    }
  }
  if (!create_graph) g->mark_consumed();
  return grads;
}

ParamSet grad(const Tensor& output, const ParamSet& wrt, bool create_graph) {
  std::vector<Tensor> tensors;
  tensors.reserve(wrt.size());
  for (const auto& [name, value] : wrt) tensors.push_back(value);
  std::vector<Tensor> grads = grad(output, tensors, create_graph);
  ParamSet result;
  size_t i = 0;
  for (const auto& [name, value] : wrt) result.insert(name, grads[i++]);
  return result;
}

ParamSet finite_difference_grad(const LossFn& loss_fn, const ParamSet& at, double h) {
  if (h <= 0) throw ValueError("finite_difference_grad: h must be positive");
  Eigen::VectorXd flat = at.flatten();
  Eigen::VectorXd g(flat.size());
  for (Index i = 0; i < flat.size(); ++i) {
    Eigen::VectorXd probe = flat;
    probe(i) = flat(i) + h;
    double up = loss_fn(at.unflatten(probe));
    probe(i) = flat(i) - h;
    double down = loss_fn(at.unflatten(probe));
    g(i) = (up - down) / (2.0 * h);
  }
  return at.unflatten(g);
}

}  // namespace metaprep::ad
