#pragma once

#include "metaprep/ops.hpp"
#include "metaprep/param_set.hpp"

#include <functional>
#include <span>

namespace metaprep::ad {

// Reverse-mode gradients of a scalar output with respect to each tensor in
// `wrt` (entries unreachable from the output get zeros). With create_graph the
// backward arithmetic is recorded too, so gradients of these gradients can be
// taken; without it the pass is off-tape and consumes the graph.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool create_graph = false);
ParamSet grad(const Tensor& output, const ParamSet& wrt, bool create_graph = false);

using LossFn = std::function<double(const ParamSet&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate. The
// independent oracle the gradient checks compare against.
ParamSet finite_difference_grad(const LossFn& loss_fn, const ParamSet& at, double h);

}  // namespace metaprep::ad
