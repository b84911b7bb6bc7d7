#pragma once

#include "metaprep/tensor.hpp"

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace metaprep::ad {

class Graph;

// Named, insertion-ordered collection of parameters. Two sets with equal
// names and shapes are arithmetically compatible; flatten/unflatten round-trip
// exactly in entry order.
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  ParamSet() = default;

  void insert(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& at(const std::string& name) const;
  void set(const std::string& name, Tensor value);  // existing entry, same shape

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::uint64_t version() const { return version_; }

  Index total_size() const;
  bool compatible_with(const ParamSet& other) const;

  // Detached copy with a bumped snapshot counter.
  ParamSet snapshot() const;
  ParamSet detached() const;
  // Every entry re-placed as a differentiable leaf of `g`.
  ParamSet attached_leaves(Graph& g) const;

  Eigen::VectorXd flatten() const;
  // New set with this set's names/shapes and values taken from `flat`.
  ParamSet unflatten(const Eigen::VectorXd& flat) const;

  // this + a * other, detached element-wise arithmetic.
  ParamSet axpy(double a, const ParamSet& other) const;
  ParamSet scaled(double a) const;
  double l2_norm() const;
  double max_abs_diff(const ParamSet& other) const;
  bool all_finite() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
  std::uint64_t version_{0};
};

}  // namespace metaprep::ad
