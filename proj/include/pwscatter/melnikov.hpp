#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "pwscatter/model.hpp"
#include "pwscatter/orbits.hpp"
#include "pwscatter/parallel.hpp"
#include "pwscatter/quadrature.hpp"

namespace pwscatter {

// Point on the saddle cylinder: orbit phase theta in [0,1), orbit level v, forcing phase s.
struct ReferenceCoords {
  double theta = 0;
  double v = 0.5;
  double s = 0;
};

inline void check_coords(const SystemModel& m, const ReferenceCoords& c) {
  if (!(c.theta >= 0 && c.theta < 1)) throw DomainError("theta must lie in [0, 1)");
  if (!(c.v > 0) || c.v > m.v_max) throw DomainError("v must lie in (0, v_max]");
  if (!std::isfinite(c.s)) throw DomainError("s must be finite");
}

inline double min_decay(const SystemModel& m) { return std::min(m.lambda_plus, m.lambda_minus); }

// Symmetric cut-off T with K exp(-lambda T) <= tol for the tails of a saddle-decaying integrand.
inline double tail_cut(const SystemModel& m, double tol) {
  const double lam = min_decay(m);
  const double K = 2 * m.perturbation_bound * m.y_h / lam;
  if (!(K > tol)) return 30.0;
  return std::clamp(std::log(K / tol) / lam, 30.0, 200.0);
}

struct MelnikovValue {
  double value = 0;
  double error = 0;  // quadrature estimate plus tail bound
  double t_cut = 0;
  int panels = 0;
};

// M(zeta) = int {X,h}(phi_U(theta*alpha + zeta + t), sigma(t), s + zeta + t) dt
inline MelnikovValue melnikov_detail(const SystemModel& m, double zeta, const ReferenceCoords& c, double quad_tol,
                                     Branch b = Branch::up) {
  check_coords(m, c);
  if (!(quad_tol > 0)) throw DomainError("quad_tol must be positive");
  if (!std::isfinite(zeta)) throw DomainError("zeta must be finite");
  const double ap = alpha_plus(m, c.v), per = alpha(m, c.v);
  const double a0 = c.theta * per + zeta;
  const double T = tail_cut(m, quad_tol);
  auto f = [&](double t) {
    const Vec2 uv = phi_u(m, a0 + t, c.v);
    const Vec2 xy = sigma(m, b, t);
    const ExtendedState z{uv[0], uv[1], xy[0], xy[1], c.s + zeta + t};
    return poisson_bracket_Xh(m, z, t < 0 ? (b == Branch::up ? -1 : 1) : (b == Branch::up ? 1 : -1));
  };
  std::vector<double> br = u_crossing_times(ap, per, a0, -T, T);
  br.push_back(-T);
  br.push_back(0.0);
  br.push_back(T);
  std::sort(br.begin(), br.end());
  br.erase(std::unique(br.begin(), br.end()), br.end());
  QuadOptions o;
  o.abs_tol = quad_tol;
  const QuadResult q = integrate_panels(f, br, o);
  const double tail = 2 * m.perturbation_bound * m.y_h / min_decay(m) * std::exp(-min_decay(m) * T);
  return {q.value, q.error + tail, T, q.panels};
}

inline double melnikov(const SystemModel& m, double zeta, const ReferenceCoords& c, double quad_tol = 1e-10,
                       Branch b = Branch::up) {
  return melnikov_detail(m, zeta, c, quad_tol, b).value;
}

struct MelnikovProfile {
  ReferenceCoords coords;
  Branch branch = Branch::up;
  std::vector<double> zeta, value;
  double quad_tol = 0;
  double t_cut = 0;
};

inline std::vector<double> linspace(double a, double b, int n) {
  if (n < 1) throw DomainError("grid needs at least one point");
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = n == 1 ? a : a + (b - a) * double(i) / (n - 1);
  return g;
}

inline MelnikovProfile melnikov_profile(const SystemModel& m, const ReferenceCoords& c, const std::vector<double>& zetas,
                                        double quad_tol = 1e-10, Branch b = Branch::up,
                                        const WorkerPool& pool = WorkerPool(1)) {
  check_coords(m, c);
  MelnikovProfile p{c, b, zetas, std::vector<double>(zetas.size()), quad_tol, tail_cut(m, quad_tol)};
  pool.parallel_for(zetas.size(), [&](std::size_t i) { p.value[i] = melnikov(m, zetas[i], c, quad_tol, b); });
  return p;
}

struct ZeroRecord {
  int index = 0;  // 1, 2, ... for zeta > 0 in increasing order; 0, -1, ... for zeta <= 0 going down
  double zeta = 0;
  double slope = 0;
  double residual = 0;
};

struct ZeroOptions {
  double refine_tol = 1e-10;    // |M| at the root relative to max |M| on the profile
  double slope_factor = 1e-6;   // simple-zero certificate: |M'| >= slope_factor * max |M|
  double quad_tol = 0;          // 0: reuse the profile's tolerance
};

// Simple zeros from the sign changes of a profile, refined on the Melnikov function itself.
// Zeros failing the slope certificate are dropped; they are counted in *flagged when given.
inline std::vector<ZeroRecord> find_zeros(const SystemModel& m, const MelnikovProfile& p, const ZeroOptions& opt = {},
                                          int* flagged = nullptr) {
  std::vector<ZeroRecord> out;
  if (flagged) *flagged = 0;
  const std::size_t n = p.zeta.size();
  double scale = 0;
  for (double v : p.value) scale = std::max(scale, std::abs(v));
  if (n < 2 || scale == 0) return out;
  const double qt = opt.quad_tol > 0 ? opt.quad_tol : p.quad_tol;
  auto M = [&](double z) { return melnikov(m, z, p.coords, qt, p.branch); };
  const double target = opt.refine_tol * scale;
  std::vector<double> roots;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double fa = p.value[i], fb = p.value[i + 1];
    if (fa == 0) {
      roots.push_back(p.zeta[i]);
      continue;
    }
    if (fb == 0 || (fa < 0) == (fb < 0)) continue;
    double a = p.zeta[i], b = p.zeta[i + 1];
    boost::uintmax_t iters = 100;
    auto stop = [&](double lo, double hi) { return std::abs(hi - lo) <= 1e-14 * (1 + std::abs(lo)); };
    auto g = [&](double z) {
      const double v = M(z);
      return std::abs(v) <= target ? 0.0 : v;  // an exact zero ends the search
    };
    auto r = boost::math::tools::toms748_solve(g, a, b, fa, fb, stop, iters);
    roots.push_back(std::abs(g(r.first)) == 0 ? r.first : 0.5 * (r.first + r.second));
  }
  if (n >= 1 && p.value[n - 1] == 0) roots.push_back(p.zeta[n - 1]);
  for (double z : roots) {
    const double hd = 1e-4;
    const double slope = (M(z + hd) - M(z - hd)) / (2 * hd);
    if (!(std::abs(slope) >= opt.slope_factor * scale)) {
      if (flagged) ++*flagged;
      continue;
    }
    out.push_back({0, z, slope, std::abs(M(z))});
  }
  int pos = 0;
  for (auto& r : out)
    if (r.zeta > 0) r.index = ++pos;
  int neg = 0;
  for (auto it = out.rbegin(); it != out.rend(); ++it)
    if (it->zeta <= 0) it->index = neg--;
  return out;
}

inline const ZeroRecord* zero_with_index(const std::vector<ZeroRecord>& zs, int index) {
  for (auto& z : zs)
    if (z.index == index) return &z;
  return nullptr;
}

}  // namespace pwscatter
