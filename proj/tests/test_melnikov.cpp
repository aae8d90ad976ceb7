#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "pwscatter/melnikov.hpp"

using namespace pwscatter;

namespace {

SystemModel rb(double d = 1, double k = 1, double w = 3) {
  rocking_block::Params p;
  p.delta = d;
  p.k = k;
  p.omega = w;
  return make_rocking_block(p);
}

// Melnikov integral for the rocking block written out by hand: u-part from the closed orbit,
// x-part e^{-|t|} profile, panels split wherever u changes sign.
double brute_melnikov(double d, double k, double w, double zeta, double theta, double v, double s) {
  const double ap = std::log1p(v) - std::log1p(-v), per = 2 * ap;
  const double a0 = theta * per + zeta;
  auto u_of = [&](double tau) {
    double t = std::fmod(tau, per);
    if (t < 0) t += per;
    const double sg = t > ap ? -1.0 : 1.0;
    if (t > ap) t -= ap;
    return sg * (v * std::sinh(t) - (std::cosh(t) - 1));
  };
  auto f = [&](double t) {
    const double x = t < 0 ? std::expm1(t) : -std::expm1(-t);  // sign(t) (1 - e^{-|t|})
    const double y = std::exp(-std::abs(t));
    const double u = u_of(a0 + t);
    const double hx = d * std::cos(w * (s + zeta + t)) + k * (x - u);
    return -y * hx;
  };
  std::vector<double> br{-60, 0, 60};
  for (double off : {0.0, ap})
    for (int n = -200; n <= 200; ++n) {
      const double t = n * per + off - a0;
      if (t > -60 && t < 60) br.push_back(t);
    }
  std::sort(br.begin(), br.end());
  double sum = 0;
  for (std::size_t i = 0; i + 1 < br.size(); ++i)
    if (br[i + 1] > br[i])
      sum += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, br[i], br[i + 1], 15, 1e-14);
  return sum;
}

}  // namespace

TEST(Melnikov, PureForcingClosedForm) {
  const auto m = rb(1, 0, 3);
  for (double zeta : {-1.3, 0.0, 0.4, 2.2, 7.9})
    for (double s : {0.0, 0.5}) {
      const double want = -2 * std::cos(3 * (s + zeta)) / 10;
      const double got = melnikov(m, zeta, {0.3, 0.48, s}, 1e-12);
      EXPECT_NEAR(got, want, 1e-8 * std::abs(want) + 1e-12) << zeta << " " << s;
    }
}

TEST(Melnikov, AgreesWithHandWrittenIntegral) {
  const auto m = rb(1, 1, 3);
  for (double th : {0.0, 0.37, 0.9})
    for (double zeta : {0.2, 1.7, 4.4}) {
      const double want = brute_melnikov(1, 1, 3, zeta, th, 0.48, 0.1);
      EXPECT_NEAR(melnikov(m, zeta, {th, 0.48, 0.1}, 1e-12), want, 1e-9);
    }
}

TEST(Melnikov, VanishesWithoutPerturbation) {
  const auto m = rb(0, 0, 3);
  EXPECT_EQ(melnikov(m, 1.0, {0.2, 0.5, 0}, 1e-10), 0.0);
  const auto p = melnikov_profile(m, {0.2, 0.5, 0}, linspace(0, 8, 33));
  EXPECT_TRUE(find_zeros(m, p).empty());
}

TEST(Melnikov, ChangeOfVariables) {
  const auto m = rb();
  const double v = 0.6, al = rocking_block::alpha(v);
  const ReferenceCoords a{0.1, v, 0.3};
  for (double zeta : {0.5, 2.0, 3.3}) {
    const double shift = 0.45;  // zeta' = zeta - shift keeps theta*alpha + zeta and s + zeta fixed
    const double theta2 = std::fmod(a.theta + shift / al, 1.0);
    const ReferenceCoords b{theta2, v, a.s + shift};
    EXPECT_NEAR(melnikov(m, zeta, a, 1e-12), melnikov(m, zeta - shift, b, 1e-12), 1e-10);
  }
}

TEST(Melnikov, DownBranchIsNegated) {
  const auto m = rb();
  for (double zeta : {0.1, 1.1, 5.0}) {
    const ReferenceCoords c{0.25, 0.7, 0.2};
    EXPECT_NEAR(melnikov(m, zeta, c, 1e-12, Branch::down), -melnikov(m, zeta, c, 1e-12, Branch::up), 1e-11);
  }
}

TEST(Melnikov, TruncationIsConverged) {
  const auto m = rb();
  const ReferenceCoords c{0.6, 0.48, 0};
  const auto d = melnikov_detail(m, 1.3, c, 1e-10);
  EXPECT_GE(d.t_cut, 30.0);
  EXPECT_LE(d.t_cut, 200.0);
  // doubling the cut-off (tighter tolerance) changes nothing beyond the requested accuracy
  const double tight = melnikov(m, 1.3, c, 1e-13);
  EXPECT_NEAR(d.value, tight, 1e-10);
}

TEST(Melnikov, RejectsBadInput) {
  const auto m = rb();
  EXPECT_THROW(melnikov(m, 0.0, {1.0, 0.5, 0}), DomainError);
  EXPECT_THROW(melnikov(m, 0.0, {0.0, 1.0, 0}), DomainError);
  EXPECT_THROW(melnikov(m, 0.0, {0.0, -0.1, 0}), DomainError);
  EXPECT_THROW(melnikov(m, NAN, {0.0, 0.5, 0}), DomainError);
}

TEST(Melnikov, ZerosOfPureForcing) {
  const auto m = rb(1, 0, 3);
  const ReferenceCoords c{0.0, 0.5, 0.0};
  const auto p = melnikov_profile(m, c, linspace(-1, 4, 101));
  const auto zs = find_zeros(m, p);
  // cos(3 zeta) = 0 at zeta = pi/6 + n pi/3
  ASSERT_FALSE(zs.empty());
  int pos = 0;
  for (const auto& z : zs) {
    const double n = std::round((z.zeta - M_PI / 6) / (M_PI / 3));
    EXPECT_NEAR(z.zeta, M_PI / 6 + n * M_PI / 3, 1e-9);
    if (z.zeta > 0) {
      EXPECT_EQ(z.index, ++pos);
    }
    EXPECT_GT(std::abs(z.slope), 0.1);
  }
  EXPECT_EQ(pos, 4);
  EXPECT_EQ(zs.front().index, 0);  // -pi/6 is the only zero in [-1, 0]
  EXPECT_NEAR(zs.front().zeta, -M_PI / 6, 1e-9);
  EXPECT_EQ(zero_with_index(zs, 1)->zeta, zs[1].zeta);
}

TEST(Melnikov, ProfileIndependentOfWorkers) {
  const auto m = rb();
  const ReferenceCoords c{0.3, 0.48, 0};
  const auto g = linspace(0, 8, 24);
  const auto a = melnikov_profile(m, c, g, 1e-10, Branch::up, WorkerPool(1));
  const auto b = melnikov_profile(m, c, g, 1e-10, Branch::up, WorkerPool(4));
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(a.value[i], b.value[i]);
}
