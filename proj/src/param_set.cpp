#include "metaprep/param_set.hpp"

#include "metaprep/graph.hpp"

#include <cmath>

namespace metaprep::ad {

void ParamSet::insert(std::string name, Tensor value) {
  if (index_.count(name) > 0) throw ValueError("param set: duplicate name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("param set: no entry '" + name + "'");
  return entries_[it->second].second;
}

void ParamSet::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("param set: no entry '" + name + "'");
  if (value.shape() != entries_[it->second].second.shape()) {
    throw ShapeError("param set: entry '" + name + "' has shape " +
                     shape_str(entries_[it->second].second.shape()) + ", got " + shape_str(value.shape()));
  }
  entries_[it->second].second = std::move(value);
}

Index ParamSet::total_size() const {
  Index n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

bool ParamSet::compatible_with(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second.shape() != other.entries_[i].second.shape()) return false;
  }
  return true;
}

ParamSet ParamSet::snapshot() const {
  ParamSet copy = detached();
  copy.version_ = version_ + 1;
  return copy;
}

ParamSet ParamSet::detached() const {
  ParamSet copy;
  for (const auto& [name, t] : entries_) copy.insert(name, t.detached());
  copy.version_ = version_;
  return copy;
}

ParamSet ParamSet::attached_leaves(Graph& g) const {
  ParamSet copy;
  for (const auto& [name, t] : entries_) copy.insert(name, g.leaf(t));
  copy.version_ = version_;
  return copy;
}

Eigen::VectorXd ParamSet::flatten() const {
  Eigen::VectorXd flat(total_size());
  Index at = 0;
  for (const auto& [name, t] : entries_) {
    flat.segment(at, t.size()) = t.values().matrix();
    at += t.size();
  }
  return flat;
}

ParamSet ParamSet::unflatten(const Eigen::VectorXd& flat) const {
  if (flat.size() != total_size()) {
    throw ShapeError("param set: cannot unflatten " + std::to_string(flat.size()) + " values into " +
                     std::to_string(total_size()));
  }
  ParamSet out;
  Index at = 0;
  for (const auto& [name, t] : entries_) {
    out.insert(name, Tensor(t.shape(), flat.segment(at, t.size()).array()));
    at += t.size();
  }
  out.version_ = version_;
  return out;
}

ParamSet ParamSet::axpy(double a, const ParamSet& other) const {
  if (!compatible_with(other)) throw ShapeError("param set: axpy on incompatible sets");
  ParamSet out;
  size_t i = 0;
  for (const auto& [name, t] : entries_) {
    out.insert(name, Tensor(t.shape(), t.values() + a * other.entries_[i].second.values()));
    ++i;
  }
  out.version_ = version_;
  return out;
}

ParamSet ParamSet::scaled(double a) const {
  ParamSet out;
  for (const auto& [name, t] : entries_) out.insert(name, Tensor(t.shape(), t.values() * a));
  out.version_ = version_;
  return out;
}

double ParamSet::l2_norm() const {
  double acc = 0;
  for (const auto& [name, t] : entries_) acc += t.values().square().sum();
  return std::sqrt(acc);
}

double ParamSet::max_abs_diff(const ParamSet& other) const {
  if (!compatible_with(other)) throw ShapeError("param set: diff on incompatible sets");
  double m = 0;
  for (size_t i = 0; i < entries_.size(); ++i) {
    double d = (entries_[i].second.values() - other.entries_[i].second.values()).abs().maxCoeff();
    m = std::max(m, d);
  }
  return m;
}

bool ParamSet::all_finite() const {
  for (const auto& [name, t] : entries_) {
    if (!t.all_finite()) return false;
  }
  return true;
}

}  // namespace metaprep::ad
