#pragma once

#include "metaprep/autodiff.hpp"
#include "metaprep/rng.hpp"

#include <algorithm>
#include <cmath>

namespace metaprep::testutil {

// max |a - b| scaled by max(1, ||b||_inf)
inline double max_rel_err(const ad::ParamSet& a, const ad::ParamSet& b) {
  double diff = 0, ref = 0;
  size_t i = 0;
  for (const auto& [name, t] : a) {
    const auto& other = b.entries()[i++].second;
    diff = std::max(diff, (t.values() - other.values()).abs().maxCoeff());
    ref = std::max(ref, other.values().abs().maxCoeff());
  }
  return diff / std::max(1.0, ref);
}

inline double max_rel_err(const ad::Tensor& a, const ad::Tensor& b) {
  double diff = (a.values() - b.values()).abs().maxCoeff();
  double ref = b.values().abs().maxCoeff();
  return diff / std::max(1.0, ref);
}

inline ad::Tensor random_tensor(Shape shape, RngStream& rng, double lo = -2.0, double hi = 2.0) {
  Storage v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(lo, hi);
  return ad::Tensor(std::move(shape), std::move(v));
}

inline ad::ParamSet random_params(const std::vector<std::pair<std::string, Shape>>& shapes, RngStream& rng,
                                  double lo = -2.0, double hi = 2.0) {
  ad::ParamSet p;
  for (const auto& [name, shape] : shapes) p.insert(name, random_tensor(shape, rng, lo, hi));
  return p;
}

}  // namespace metaprep::testutil
