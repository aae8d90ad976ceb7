#pragma once

#include <array>
#include <cmath>
#include <algorithm>
#include <cstddef>
#include <type_traits>

namespace pwscatter {

enum class Method { dop853, rkf78 };

namespace detail {

// Dormand-Prince 8(5,3)
struct Dop853 {
  static constexpr int stages = 12;
  static constexpr double c[12] = {0.0,
                                   0.526001519587677318785587544488E-01,
                                   0.789002279381515978178381316732E-01,
                                   0.118350341907227396726757197510E+00,
                                   0.281649658092772603273242802490E+00,
                                   0.333333333333333333333333333333E+00,
                                   0.25E+00,
                                   0.307692307692307692307692307692E+00,
                                   0.651282051282051282051282051282E+00,
                                   0.6E+00,
                                   0.857142857142857142857142857142E+00,
                                   1.0};
  static constexpr double a[12][11] = {
      {},
      {5.26001519587677318785587544488E-2},
      {1.97250569845378994544595329183E-2, 5.91751709536136983633785987549E-2},
      {2.95875854768068491816892993775E-2, 0, 8.87627564304205475450678981324E-2},
      {2.41365134159266685502369798665E-1, 0, -8.84549479328286085344864962717E-1,
       9.24834003261792003115737966543E-1},
      {3.7037037037037037037037037037E-2, 0, 0, 1.70828608729473871279604482173E-1,
       1.25467687566822425016691814123E-1},
      {3.7109375E-2, 0, 0, 1.70252211019544039314978060272E-1, 6.02165389804559606850219397283E-2,
       -1.7578125E-2},
      {3.70920001185047927108779319836E-2, 0, 0, 1.70383925712239993810214054705E-1,
       1.07262030446373284651809199168E-1, -1.53194377486244017527936158236E-2,
       8.27378916381402288758473766002E-3},
      {6.24110958716075717114429577812E-1, 0, 0, -3.36089262944694129406857109825E0,
       -8.68219346841726006818189891453E-1, 2.75920996994467083049415600797E1,
       2.01540675504778934086186788979E1, -4.34898841810699588477366255144E1},
      {4.77662536438264365890433908527E-1, 0, 0, -2.48811461997166764192642586468E0,
       -5.90290826836842996371446475743E-1, 2.12300514481811942347288949897E1,
       1.52792336328824235832596922938E1, -3.32882109689848629194453265587E1,
       -2.03312017085086261358222928593E-2},
      {-9.3714243008598732571704021658E-1, 0, 0, 5.18637242884406370830023853209E0,
       1.09143734899672957818500254654E0, -8.14978701074692612513997267357E0,
       -1.85200656599969598641566180701E1, 2.27394870993505042818970056734E1,
       2.49360555267965238987089396762E0, -3.0467644718982195003823669022E0},
      {2.27331014751653820792359768449E0, 0, 0, -1.05344954667372501984066689879E1,
       -2.00087205822486249909675718444E0, -1.79589318631187989172765950534E1,
       2.79488845294199600508499808837E1, -2.85899827713502369474065508674E0,
       -8.87285693353062954433549289258E0, 1.23605671757943030647266201528E1,
       6.43392746015763530355970484046E-1}};
  static constexpr double b[12] = {5.42937341165687622380535766363E-2, 0, 0, 0, 0,
                                   4.45031289275240888144113950566E0, 1.89151789931450038304281599044E0,
                                   -5.8012039600105847814672114227E0, 3.1116436695781989440891606237E-1,
                                   -1.52160949662516078556178806805E-1, 2.01365400804030348374776537501E-1,
                                   4.47106157277725905176885569043E-2};
  static constexpr double bhh1 = 0.244094488188976377952755905512E+00;
  static constexpr double bhh2 = 0.733846688281611857341361741547E+00;
  static constexpr double bhh3 = 0.220588235294117647058823529412E-01;
  static constexpr double er[12] = {0.1312004499419488073250102996E-01, 0, 0, 0, 0,
                                    -0.1225156446376204440720569753E+01, -0.4957589496572501915214079952E+00,
                                    0.1664377182454986536961530415E+01, -0.3503288487499736816886487290E+00,
                                    0.3341791187130174790297318841E+00, 0.8192320648511571246570742613E-01,
                                    -0.2235530786388629525884427845E-01};
};

// Runge-Kutta-Fehlberg 7(8), advanced with the eighth-order weights
struct Rkf78 {
  static constexpr int stages = 13;
  static constexpr double c[13] = {0.0,       2.0 / 27, 1.0 / 9, 1.0 / 6, 5.0 / 12, 0.5, 5.0 / 6,
                                   1.0 / 6,   2.0 / 3,  1.0 / 3, 1.0,     0.0,      1.0};
  static constexpr double a[13][12] = {
      {},
      {2.0 / 27},
      {1.0 / 36, 1.0 / 12},
      {1.0 / 24, 0, 1.0 / 8},
      {5.0 / 12, 0, -25.0 / 16, 25.0 / 16},
      {1.0 / 20, 0, 0, 1.0 / 4, 1.0 / 5},
      {-25.0 / 108, 0, 0, 125.0 / 108, -65.0 / 27, 125.0 / 54},
      {31.0 / 300, 0, 0, 0, 61.0 / 225, -2.0 / 9, 13.0 / 900},
      {2.0, 0, 0, -53.0 / 6, 704.0 / 45, -107.0 / 9, 67.0 / 90, 3.0},
      {-91.0 / 108, 0, 0, 23.0 / 108, -976.0 / 135, 311.0 / 54, -19.0 / 60, 17.0 / 6, -1.0 / 12},
      {2383.0 / 4100, 0, 0, -341.0 / 164, 4496.0 / 1025, -301.0 / 82, 2133.0 / 4100, 45.0 / 82, 45.0 / 164,
       18.0 / 41},
      {3.0 / 205, 0, 0, 0, 0, -6.0 / 41, -3.0 / 205, -3.0 / 41, 3.0 / 41, 6.0 / 41, 0},
      {-1777.0 / 4100, 0, 0, -341.0 / 164, 4496.0 / 1025, -289.0 / 82, 2193.0 / 4100, 51.0 / 82, 33.0 / 164,
       12.0 / 41, 0, 1.0}};
  static constexpr double b[13] = {0, 0, 0, 0, 0, 34.0 / 105, 9.0 / 35, 9.0 / 35, 9.0 / 280, 9.0 / 280,
                                   0, 41.0 / 840, 41.0 / 840};
  static constexpr double e[13] = {-41.0 / 840, 0, 0, 0, 0, 0, 0, 0, 0, 0, -41.0 / 840, 41.0 / 840, 41.0 / 840};
};

}  // namespace detail

// One explicit embedded step. Field is callable as f(t, const double* z, double* dz).
// Returns the scaled error norm (<= 1 means acceptable).
template <std::size_t N>
class RkStepper {
 public:
  using Vec = std::array<double, N>;

  explicit RkStepper(Method m = Method::dop853) : method_(m) {}
  Method method() const { return method_; }

  template <class F>
  double step(const F& f, double t, const Vec& z, const Vec& k1, double h, Vec& out, double rtol,
              double atol) {
    if (method_ == Method::dop853) return step_impl<detail::Dop853>(f, t, z, k1, h, out, rtol, atol);
    return step_impl<detail::Rkf78>(f, t, z, k1, h, out, rtol, atol);
  }

 private:
  template <class T, class F>
  double step_impl(const F& f, double t, const Vec& z, const Vec& k1, double h, Vec& out, double rtol,
                   double atol) {
    k_[0] = k1;
    Vec tmp;
    for (int s = 1; s < T::stages; ++s) {
      for (std::size_t i = 0; i < N; ++i) {
        double acc = 0.0;
        for (int j = 0; j < s; ++j) acc += T::a[s][j] * k_[j][i];
        tmp[i] = z[i] + h * acc;
      }
      f(t + T::c[s] * h, tmp.data(), k_[s].data());
    }
    Vec bk;
    for (std::size_t i = 0; i < N; ++i) {
      double acc = 0.0;
      for (int j = 0; j < T::stages; ++j) acc += T::b[j] * k_[j][i];
      bk[i] = acc;
      out[i] = z[i] + h * acc;
    }
    if constexpr (std::is_same_v<T, detail::Dop853>) {
      double err5 = 0.0, err3 = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double sk = 1.0 / (atol + rtol * std::max(std::abs(z[i]), std::abs(out[i])));
        double q3 = bk[i] - T::bhh1 * k_[0][i] - T::bhh2 * k_[8][i] - T::bhh3 * k_[11][i];
        double q5 = 0.0;
        for (int j = 0; j < T::stages; ++j) q5 += T::er[j] * k_[j][i];
        q3 *= sk;
        q5 *= sk;
        err3 += q3 * q3;
        err5 += q5 * q5;
      }
      const double deno = err5 + 0.01 * err3;
      return std::abs(h) * err5 * std::sqrt(1.0 / (deno <= 0.0 ? double(N) : deno * double(N)));
    } else {
      double err = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double sk = 1.0 / (atol + rtol * std::max(std::abs(z[i]), std::abs(out[i])));
        double q = 0.0;
        for (int j = 0; j < T::stages; ++j) q += T::e[j] * k_[j][i];
        q *= h * sk;
        err += q * q;
      }
      return std::sqrt(err / double(N));
    }
  }

  Method method_;
  std::array<Vec, 13> k_{};
};

}  // namespace pwscatter
