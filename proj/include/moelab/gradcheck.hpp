// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient oracle.  Deliberately knows nothing about the
// tape: it only nudges values and re-runs the supplied function, so it can
// vouch for backward() instead of agreeing with it by construction.
#pragma once

#include <vector>

#include "moelab/errors.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

// f re-evaluates the scalar objective from x's current values.
// Returns d f / d x_i as (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
template <class F>
Tensor finite_diff_grad(F&& f, Tensor& x, double eps = 1e-5) {
  if (!(eps > 0.0)) throw DomainError("finite_diff_grad: eps must be positive");
  if (!x.defined()) throw ContractError("finite_diff_grad: undefined tensor");
  auto vals = x.data();
  std::vector<double> g(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) {
    const double keep = vals[i];
    vals[i] = keep + eps;
    const double up = f();
    vals[i] = keep - eps;
    const double down = f();
    vals[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return Tensor::from(std::move(g), x.shape());
}

}  // namespace moelab
