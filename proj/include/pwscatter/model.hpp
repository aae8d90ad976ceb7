#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>

namespace pwscatter {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec2 = std::array<double, 2>;

// exact modular reduction into [0, period)
inline double wrap_phase(double s, double period) {
  double r = std::fmod(s, period);
  if (r < 0) r += period;
  if (r >= period) r = 0.0;
  return r;
}

inline int sign_of(double a) { return a < 0 ? -1 : 1; }

struct Region {
  int u = 1;
  int x = 1;
  bool operator==(const Region&) const = default;
};

struct RegionInfo {
  Region region;
  bool on_u = false;
  bool on_x = false;
};

struct ExtendedState {
  double u = 0, v = 0, x = 0, y = 0, s = 0;
  std::optional<double> time;

  RegionInfo region() const { return {{sign_of(u), sign_of(x)}, u == 0.0, x == 0.0}; }
};

struct Potential {
  std::function<double(double)> value, d1, d2;
};

// h(u, v, x, y, s) and its partials
struct Perturbation {
  using Fn = std::function<double(double, double, double, double, double)>;
  Fn h, h_u, h_v, h_x, h_y;
};

enum class Branch { up, down };

// Closed forms of unperturbed objects; any member may be left empty, numerics fill the gap.
struct ClosedForms {
  std::function<Vec2(double, double)> phi_u;  // (tau, v0) -> (u, v), orbit through (0, v0), v0 > 0
  std::function<double(double)> alpha_plus;   // time spent in u > 0 at level v^2/2
  std::function<double(double)> alpha_minus;  // time spent in u < 0
  std::function<Vec2(double)> sigma_up;
  std::function<Vec2(double)> sigma_down;
};

struct SystemModel {
  std::string name = "custom";
  Potential V_plus, V_minus, Y_plus, Y_minus;
  Perturbation h;
  double eps = 0.0;
  double period = 2 * std::numbers::pi;  // forcing period T
  double q_plus = 1.0, q_minus = -1.0;   // saddle abscissae
  double d_bar = 0.5;
  double y_h = 1.0;
  double lambda_plus = 1.0, lambda_minus = 1.0;
  double v_max = 0.999;
  double v_min = 1e-3;
  // bound on the first derivatives of h over the region of interest; drives quadrature cut-offs.
  // Values <= 0 are estimated by sampling in finalize_model.
  double perturbation_bound = 0.0;
  // splitting scale C used for the initial shooting bracket C*eps (<= 0: use perturbation_bound)
  double splitting_scale = 0.0;
  ClosedForms closed;

  double V(double u) const { return u < 0 ? V_minus.value(u) : V_plus.value(u); }
  double dV(double u, int side) const { return side < 0 ? V_minus.d1(u) : V_plus.d1(u); }
  double Y(double x) const { return x < 0 ? Y_minus.value(x) : Y_plus.value(x); }
  double dY(double x, int side) const { return side < 0 ? Y_minus.d1(x) : Y_plus.d1(x); }

  double U(double u, double v) const { return 0.5 * v * v + V(u); }
  double X(double x, double y) const { return 0.5 * y * y + Y(x); }

  SystemModel with_eps(double e) const {
    SystemModel m = *this;
    m.eps = e;
    return m;
  }
};

// Fills d_bar, y_h and decay rates from the potentials and checks the structural conditions.
inline void finalize_model(SystemModel& m, double tol = 1e-12) {
  auto fail = [&](const std::string& what) { throw DomainError("model " + m.name + ": " + what); };
  if (!m.V_plus.value || !m.V_minus.value || !m.Y_plus.value || !m.Y_minus.value)
    fail("missing potential");
  if (std::abs(m.V_plus.value(0)) > tol || std::abs(m.V_minus.value(0)) > tol ||
      std::abs(m.Y_plus.value(0)) > tol || std::abs(m.Y_minus.value(0)) > tol)
    fail("potentials must vanish at the switching manifold");
  if (!(m.V_plus.d1(0) > 0) || !(m.V_minus.d1(0) < 0)) fail("origin is not an invisible fold-fold");
  if (!(m.q_plus > 0) || !(m.q_minus < 0)) fail("saddles must lie on both sides of x = 0");
  if (std::abs(m.Y_plus.d1(m.q_plus)) > tol || std::abs(m.Y_minus.d1(m.q_minus)) > tol)
    fail("Q+ / Q- are not critical points");
  const double dp = m.Y_plus.value(m.q_plus), dm = m.Y_minus.value(m.q_minus);
  if (std::abs(dp - dm) > tol) fail("saddles sit on different energy levels");
  if (!(dp > 0)) fail("saddle energy must be positive");
  const double cp = -m.Y_plus.d2(m.q_plus), cm = -m.Y_minus.d2(m.q_minus);
  if (!(cp > 0) || !(cm > 0)) fail("saddles are not hyperbolic");
  m.d_bar = dp;
  m.y_h = std::sqrt(2 * dp);
  m.lambda_plus = std::sqrt(cp);
  m.lambda_minus = std::sqrt(cm);
  if (!(m.period > 0)) fail("forcing period must be positive");
  if (!(m.v_min > 0) || !(m.v_min < m.v_max)) fail("need 0 < v_min < v_max");
  if (!(m.perturbation_bound > 0)) {
    // sample |grad h| on the box spanned by the saddles and the homoclinic speed, over one period
    double b = 0;
    if (m.h.h_u && m.h.h_v && m.h.h_x && m.h.h_y) {
      constexpr int n = 9;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          for (int k = 0; k < n; ++k)
            for (int l = 0; l < n; ++l)
              for (int q = 0; q < 2 * n; ++q) {
                const double u = m.q_minus + (m.q_plus - m.q_minus) * i / (n - 1);
                const double x = m.q_minus + (m.q_plus - m.q_minus) * k / (n - 1);
                const double v = m.y_h * (2.0 * j / (n - 1) - 1), y = m.y_h * (2.0 * l / (n - 1) - 1);
                const double s = m.period * q / (2 * n);
                for (auto* f : {&m.h.h_u, &m.h.h_v, &m.h.h_x, &m.h.h_y}) b = std::max(b, std::abs((*f)(u, v, x, y, s)));
              }
    }
    m.perturbation_bound = 2 * b;  // margin for the coarse sampling
  }
  if (!(m.splitting_scale > 0)) m.splitting_scale = std::max(m.perturbation_bound, 1e-3);
}

namespace rocking_block {

// Time spent in u > 0 on the orbit through (0, v).
inline double alpha_plus(double v) {
  if (!(v > 0) || !(v < 1)) throw DomainError("alpha_plus: need 0 < v < 1");
  return std::log1p(v) - std::log1p(-v);
}

inline double alpha(double v) { return 2 * alpha_plus(std::abs(v)); }

inline Vec2 sigma_up(double xi) {
  if (xi >= 0) {
    const double e = std::exp(-xi);
    return {-std::expm1(-xi), e};
  }
  const double e = std::exp(xi);
  return {std::expm1(xi), e};
}

inline Vec2 sigma_down(double xi) {
  const Vec2 p = sigma_up(xi);
  return {-p[0], -p[1]};
}

// Orbit of U through (0, v0) at tau = 0; periodic with period alpha(v0).
inline Vec2 phi_u(double tau, double v0) {
  if (!(v0 > 0) || !(v0 < 1)) throw DomainError("phi_u: need 0 < v0 < 1");
  const double ap = alpha_plus(v0);
  const double per = 2 * ap;
  double t = wrap_phase(tau, per);
  double sgn = 1.0;
  if (t > ap) {
    t -= ap;
    sgn = -1.0;
  }
  // in u > 0: u = 1 + ((v0-1)/2) e^t - ((v0+1)/2) e^-t; evaluated via cosh/sinh
  const double ch = std::cosh(t), sh = std::sinh(t);
  const double u = v0 * sh - (ch - 1.0);
  const double v = v0 * ch - sh;
  return {sgn * u, sgn * v};
}

struct Params {
  double delta = 1.0;
  double k = 1.0;
  double omega = 3.0;
  double eps = 0.01;
  double v_max = 0.999;
};

}  // namespace rocking_block

inline SystemModel make_rocking_block(const rocking_block::Params& p) {
  if (!(p.delta >= 0) || !(p.k >= 0)) throw DomainError("rocking block: delta and k must be >= 0");
  if (!(p.omega > 0)) throw DomainError("rocking block: omega must be > 0");
  if (!(p.eps >= 0)) throw DomainError("rocking block: eps must be >= 0");
  if (!(p.v_max > 0) || !(p.v_max < 1)) throw DomainError("rocking block: need 0 < v_max < 1");

  SystemModel m;
  m.name = "rocking-block";
  m.V_plus = {[](double u) { return -0.5 * u * u + u; }, [](double u) { return 1.0 - u; },
              [](double) { return -1.0; }};
  m.V_minus = {[](double u) { return -0.5 * u * u - u; }, [](double u) { return -1.0 - u; },
               [](double) { return -1.0; }};
  m.Y_plus = m.V_plus;
  m.Y_minus = m.V_minus;

  const double d = p.delta, k = p.k, w = p.omega;
  m.h.h = [=](double u, double, double x, double, double s) {
    return d * (u + x) * std::cos(w * s) + k * (0.5 * u * u + 0.5 * x * x - u * x);
  };
  m.h.h_u = [=](double u, double, double x, double, double s) { return d * std::cos(w * s) + k * (u - x); };
  m.h.h_x = [=](double u, double, double x, double, double s) { return d * std::cos(w * s) + k * (x - u); };
  m.h.h_v = [](double, double, double, double, double) { return 0.0; };
  m.h.h_y = m.h.h_v;

  m.eps = p.eps;
  m.period = 2 * std::numbers::pi / w;
  m.q_plus = 1.0;
  m.q_minus = -1.0;
  m.v_max = p.v_max;
  m.perturbation_bound = d + 2 * k;
  m.splitting_scale = 10 * std::max(d, k) / (1 + w * w);

  m.closed.phi_u = rocking_block::phi_u;
  m.closed.alpha_plus = rocking_block::alpha_plus;
  m.closed.alpha_minus = rocking_block::alpha_plus;
  m.closed.sigma_up = rocking_block::sigma_up;
  m.closed.sigma_down = rocking_block::sigma_down;

  finalize_model(m);
  return m;
}

struct Energies {
  double U, X, H;
};

inline double perturbation_at(const SystemModel& m, const ExtendedState& z) {
  return m.h.h ? m.h.h(z.u, z.v, z.x, z.y, z.s) : 0.0;
}

inline Energies eval_energy(const SystemModel& m, const ExtendedState& z) {
  const double U = m.U(z.u, z.v), X = m.X(z.x, z.y);
  return {U, X, U + X + m.eps * perturbation_at(m, z)};
}

// Derivative of the coupled field (u', v', x', y', s') in the given region.
inline std::array<double, 5> vector_field(const SystemModel& m, const ExtendedState& z, Region r) {
  const auto info = z.region();
  if ((!info.on_u && info.region.u != r.u) || (!info.on_x && info.region.x != r.x))
    throw DomainError("vector_field: region does not match state");
  const double e = m.eps;
  const double hu = m.h.h_u(z.u, z.v, z.x, z.y, z.s), hv = m.h.h_v(z.u, z.v, z.x, z.y, z.s);
  const double hx = m.h.h_x(z.u, z.v, z.x, z.y, z.s), hy = m.h.h_y(z.u, z.v, z.x, z.y, z.s);
  return {z.v + e * hv, -m.dV(z.u, r.u) - e * hu, z.y + e * hy, -m.dY(z.x, r.x) - e * hx, 1.0};
}

// {X, h} = X_x h_y - X_y h_x on the side xs of x = 0
inline double poisson_bracket_Xh(const SystemModel& m, const ExtendedState& z, int xs) {
  return m.dY(z.x, xs) * m.h.h_y(z.u, z.v, z.x, z.y, z.s) - z.y * m.h.h_x(z.u, z.v, z.x, z.y, z.s);
}
inline double poisson_bracket_Xh(const SystemModel& m, const ExtendedState& z) {
  return poisson_bracket_Xh(m, z, sign_of(z.x));
}

inline double poisson_bracket_Uh(const SystemModel& m, const ExtendedState& z, int us) {
  return m.dV(z.u, us) * m.h.h_v(z.u, z.v, z.x, z.y, z.s) - z.v * m.h.h_u(z.u, z.v, z.x, z.y, z.s);
}
inline double poisson_bracket_Uh(const SystemModel& m, const ExtendedState& z) {
  return poisson_bracket_Uh(m, z, sign_of(z.u));
}

}  // namespace pwscatter
