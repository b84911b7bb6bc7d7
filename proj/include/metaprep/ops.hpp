#pragma once

#include "metaprep/graph.hpp"
#include "metaprep/rng.hpp"

#include <span>

namespace metaprep::ad {

// Primitive operations. Every primitive's backward rule is itself expressed
// through these functions, so the set is closed under differentiation and
// gradients of gradients come out of the same machinery. Results are recorded
// on a graph whenever any input carries one (mixing graphs is an error);
// otherwise they are plain constants.

Tensor add(const Tensor& a, const Tensor& b);                // equal shapes
Tensor mul(const Tensor& a, const Tensor& b);                // equal shapes
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor pow_scalar(const Tensor& x, double p);
Tensor matmul(const Tensor& a, const Tensor& b);             // [*,m,k]@[*,k,n]; rank-2 b broadcasts
Tensor swap_axes(const Tensor& x, int axis_a, int axis_b);
Tensor transpose(const Tensor& x);                           // swap last two axes
Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor sum_to_shape(const Tensor& x, const Shape& shape);
Tensor slice(const Tensor& x, int axis, Index start, Index extent);
Tensor pad_axis(const Tensor& x, int axis, Index before, Index full_extent);
Tensor concat(std::span<const Tensor> xs, int axis);
Tensor sum(const Tensor& x);                                 // full reduction to a scalar
Tensor sum_last(const Tensor& x);                            // last axis, kept as size 1
Tensor softmax(const Tensor& x);                             // last axis
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor embedding_gather(const Tensor& table, std::span<const Index> ids, const Shape& id_shape);
Tensor embedding_scatter(const Tensor& grads, std::span<const Index> ids, Index num_rows);
// Mean cross-entropy of rows of [N, C] logits against integer targets.
Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const Index> targets);

// Composites built from the primitives above.
Tensor neg(const Tensor& x);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mean(const Tensor& x);
Tensor mean_last(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh form
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// Inverted dropout; identity when rate == 0. Draws one decision per element.
Tensor dropout(const Tensor& x, double rate, RngStream* rng);

// Adjoint contributions per input for one recorded node. `out` is the node's
// output as a graph tensor; `adj` is the accumulated output adjoint.
std::vector<Tensor> backward_rule(const Node& node, const Tensor& out, const Tensor& adj);

}  // namespace metaprep::ad
