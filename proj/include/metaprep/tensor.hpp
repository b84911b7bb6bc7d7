#pragma once

#include "metaprep/common.hpp"

#include <memory>
#include <span>

namespace metaprep::ad {

class Graph;

// Dense multi-dimensional value. Values are an immutable shared snapshot, so
// copies are cheap and detached tensors are safe to move between threads. A
// tensor without a node reference behaves as a constant: no gradient flows
// into it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Storage values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor(Shape{}, Storage::Constant(1, value)); }
  static Tensor from_span(Shape shape, std::span<const double> values);
  static Tensor from_vector(std::span<const double> values);

  // Internal: wrap stored node output as a graph-linked tensor.
  static Tensor with_node(Shape shape, std::shared_ptr<const Storage> values, Graph* graph, std::int64_t node);

  bool defined() const { return values_ != nullptr; }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_[static_cast<size_t>(axis)]; }
  Index size() const { return values_ ? values_->size() : 0; }

  const Storage& values() const { return *values_; }
  std::shared_ptr<const Storage> values_ptr() const { return values_; }
  const double* data() const { return values_->data(); }
  double operator[](Index i) const { return (*values_)(i); }

  // The single element of a scalar (or one-element) tensor.
  double value() const;

  bool on_graph() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  std::int64_t node() const { return node_; }

  // Same values, no graph reference.
  Tensor detached() const { return Tensor(shape_, values_); }

  bool all_finite() const;

 private:
  Tensor(Shape shape, std::shared_ptr<const Storage> values)
      : shape_(std::move(shape)), values_(std::move(values)) {}

  Shape shape_;
  std::shared_ptr<const Storage> values_;
  Graph* graph_{nullptr};
  std::int64_t node_{-1};
};

}  // namespace metaprep::ad
