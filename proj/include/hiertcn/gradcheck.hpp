// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference gradient oracle.  Compares an analytic gradient
// against central differences coordinate by coordinate, in double
// precision, with deterministic subsampling for large parameter sets.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "hiertcn/rng.hpp"

namespace hiertcn {

struct FdView {
  double* data = nullptr;
  std::size_t n = 0;
  const double* analytic = nullptr;  // gradient entries, parallel to data
};

struct FdResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

// loss() must be a pure function of the values behind the views.  Each
// checked coordinate is perturbed by +/-eps and restored.  When the total
// coordinate count exceeds max_coords, a random subsample of at least
// max_coords coordinates is checked instead.
inline FdResult finite_difference_check(const std::function<double()>& loss,
                                        const std::vector<FdView>& views, double eps = 1e-5,
                                        std::size_t max_coords = 200, Rng* rng = nullptr) {
  std::vector<std::pair<std::size_t, std::size_t>> coords;  // (view, index)
  for (std::size_t vi = 0; vi < views.size(); ++vi)
    for (std::size_t i = 0; i < views[vi].n; ++i) coords.emplace_back(vi, i);

  if (coords.size() > max_coords && rng != nullptr) {
    std::shuffle(coords.begin(), coords.end(), rng->engine());
    coords.resize(max_coords);
  }

  FdResult res;
  for (const auto& [vi, i] : coords) {
    double* p = views[vi].data + i;
    const double saved = *p;
    *p = saved + eps;
    const double fp = loss();
    *p = saved - eps;
    const double fm = loss();
    *p = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double analytic = views[vi].analytic[i];
    const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
    res.max_rel_err = std::max(res.max_rel_err, std::abs(numeric - analytic) / denom);
    res.coords_checked += 1;
  }
  return res;
}

}  // namespace hiertcn
