#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "eeseg/rng.hpp"
#include "eeseg/tensor.hpp"

namespace testutil {

template <typename S>
eeseg::TensorT<S> random_tensor(eeseg::Rng& rng, std::vector<int> dims, double scale = 1.0) {
  eeseg::TensorT<S> t(std::move(dims));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.normal() * scale);
  return t;
}

template <typename S>
eeseg::VecT<S> random_vec(eeseg::Rng& rng, int n, double scale = 1.0) {
  eeseg::VecT<S> v(n);
  for (int i = 0; i < n; ++i) v[i] = static_cast<S>(rng.normal() * scale);
  return v;
}

inline eeseg::LabelMap random_labels(eeseg::Rng& rng, int h, int w, int classes) {
  eeseg::LabelMap m(h, w);
  for (auto& v : m.v) v = static_cast<std::uint8_t>(rng.uniform_int(static_cast<std::uint64_t>(classes)));
  return m;
}

// Central difference of a scalar functional with respect to one slot.
inline double central_diff(double& slot, const std::function<double()>& eval, double h = 1e-3) {
  const double orig = slot;
  slot = orig + h;
  const double fp = eval();
  slot = orig - h;
  const double fm = eval();
  slot = orig;
  return (fp - fm) / (2.0 * h);
}

// Relative error with a small floor so that near-zero pairs compare
// absolutely at 1e-6 per unit of floor.
inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testutil
