// Finite-difference helpers shared by the unit and acceptance suites. These
// stay independent of the tape's backward pass: they only re-evaluate a
// scalar function with perturbed inputs.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fcgan/tensor.hpp"

namespace fdtest {

// Relative agreement with an absolute floor, so exactly-zero gradients on
// both routes compare equal instead of dividing zero by zero.
inline bool close_grad(double analytic, double numeric, double rel_tol,
                       double abs_tol) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_tol) return true;
  return diff <= rel_tol * std::max(std::abs(analytic), std::abs(numeric));
}

// Central differences of f() w.r.t. every entry of x, mutating x in place
// and restoring it.
inline std::vector<double> central_diff(fcgan::Tensor& x,
                                        const std::function<double()>& f,
                                        double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f();
    x[i] = x0 - h;
    const double fm = f();
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Largest pairwise disagreement under close_grad, as a count of offenders.
inline std::size_t count_mismatches(const std::vector<double>& analytic,
                                    const std::vector<double>& numeric,
                                    double rel_tol, double abs_tol) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    if (!close_grad(analytic[i], numeric[i], rel_tol, abs_tol)) ++bad;
  return bad;
}

// Random values in [-2, 2] kept away from zero so piecewise-linear
// activations are differentiable at every sampled point.
inline double away_from_kink(double u) {
  const double v = u * 3.8 - 1.9;  // u in [0,1) -> [-1.9, 1.9)
  return v >= 0.0 ? v + 0.1 : v - 0.1;
}

}  // namespace fdtest
