#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "pwscatter/model.hpp"

namespace pwscatter {

// Sum in a fixed binary tree; the result depends only on the order of the input.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t mid = xs.size() / 2;
  return pairwise_sum(xs.subspan(0, mid)) + pairwise_sum(xs.subspan(mid));
}

struct QuadResult {
  double value = 0;
  double error = 0;
  int panels = 0;
};

struct QuadOptions {
  double abs_tol = 1e-12;
  int max_panels = 20000;
  int max_depth = 40;
};

// Adaptive Gauss-Kronrod over consecutive panels [b0,b1], [b1,b2], ... Each panel is
// bisected until its error estimate fits its share of abs_tol.
template <class F>
QuadResult integrate_panels(const F& f, std::span<const double> breaks, const QuadOptions& opt) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 21>;
  QuadResult r;
  if (breaks.size() < 2) return r;
  const double total = std::abs(breaks.back() - breaks.front());
  if (total == 0) return r;
  std::vector<double> vals, errs;
  struct Item {
    double a, b;
    int depth;
  };
  std::vector<Item> stack;
  for (std::size_t p = breaks.size() - 1; p-- > 0;)
    if (breaks[p + 1] != breaks[p]) stack.push_back({breaks[p], breaks[p + 1], 0});
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    double err = 0, l1 = 0;
    double v = GK::integrate(f, it.a, it.b, 0, 0.0, &err, &l1);
    err *= 0.5 * std::abs(it.b - it.a);  // reported on the reference interval
    const double share = opt.abs_tol * std::abs(it.b - it.a) / total;
    // rounding floor: abscissae near |t| carry an error of eps |t|, which moves the integrand of an O(1)-scale
    // oscillation by the same relative amount
    const double floor =
        64 * std::numeric_limits<double>::epsilon() * l1 * (1 + std::max(std::abs(it.a), std::abs(it.b)));
    // a panel at the resolution of its abscissae cannot be split further; its error is rounding
    const bool unresolved =
        std::abs(it.b - it.a) <= 1e3 * std::numeric_limits<double>::epsilon() * std::max(std::abs(it.a), std::abs(it.b));
    if (err <= std::max(share, floor) || unresolved || it.depth >= opt.max_depth) {
      if (err > std::max(share, floor) && !unresolved)
        throw ConvergenceError("quadrature: tolerance not reached at maximum depth");
      vals.push_back(v);
      errs.push_back(err);
      continue;
    }
    if (int(vals.size() + stack.size()) >= opt.max_panels)
      throw ConvergenceError("quadrature: panel budget exhausted");
    const double m = 0.5 * (it.a + it.b);
    stack.push_back({m, it.b, it.depth + 1});
    stack.push_back({it.a, m, it.depth + 1});
  }
  r.value = pairwise_sum(vals);
  r.error = pairwise_sum(errs);
  r.panels = int(vals.size());
  return r;
}

template <class F>
QuadResult integrate_panels(const F& f, const std::vector<double>& breaks, const QuadOptions& opt) {
  return integrate_panels(f, std::span<const double>(breaks.data(), breaks.size()), opt);
}

}  // namespace pwscatter
