#include "metaprep/tensor.hpp"

#include "metaprep/graph.hpp"

#include <cmath>

namespace metaprep::ad {

Tensor::Tensor(Shape shape, Storage values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  shape_ = std::move(shape);
  values_ = std::make_shared<const Storage>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
  Index n = numel(shape);
  return Tensor(std::move(shape), Storage::Zero(n));
}

Tensor Tensor::full(Shape shape, double value) {
  Index n = numel(shape);
  return Tensor(std::move(shape), Storage::Constant(n, value));
}

Tensor Tensor::from_span(Shape shape, std::span<const double> values) {
  Storage s(static_cast<Index>(values.size()));
  for (size_t i = 0; i < values.size(); ++i) s(static_cast<Index>(i)) = values[i];
  return Tensor(std::move(shape), std::move(s));
}

Tensor Tensor::from_vector(std::span<const double> values) {
  return from_span(Shape{static_cast<Index>(values.size())}, values);
}

Tensor Tensor::with_node(Shape shape, std::shared_ptr<const Storage> values, Graph* graph, std::int64_t node) {
  Tensor t(std::move(shape), std::move(values));
  t.graph_ = graph;
  t.node_ = node;
  return t;
}

double Tensor::value() const {
  if (size() != 1) {
    throw ShapeError("tensor: value() requires a single element, shape is " + shape_str(shape_));
  }
  return (*values_)(0);
}

bool Tensor::all_finite() const {
  if (!values_) return true;
  return values_->isFinite().all();
}

}  // namespace metaprep::ad
