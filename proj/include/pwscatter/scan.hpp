#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "pwscatter/hetero.hpp"
#include "pwscatter/melnikov.hpp"
#include "pwscatter/parallel.hpp"

namespace pwscatter {

struct ScanOptions {
  double zeta_min = -1.0;  // the negative margin lets a zero be followed through zeta = 0
  double zeta_max = 8.0;
  int zeta_points = 181;
  double quad_tol = 1e-10;
  Branch branch = Branch::up;
  bool connections = false;  // also solve for zeta* (needs eps > 0)
  HeteroOptions hetero;
};

struct ScanCell {
  double theta = 0, v = 0;
  int zero_index = 0;
  double zeta_bar = nan_value;
  double zeta_star = nan_value;
  double avg_diff = nan_value;  // T -> infinity first-order difference of the averages
  std::string status = "ok";
  int relabel = 0;
};

struct ScanResult {
  std::vector<double> thetas, vs;
  std::vector<ScanCell> cells;  // v-major: cells[j * thetas.size() + i]
};

// Zero of the requested index on every (theta, v) cell. A cell is flagged when continuing the
// neighbouring cell's zero (previous theta, else previous v) lands on a zero with another index.
inline ScanResult scan(const SystemModel& m, const std::vector<double>& thetas, const std::vector<double>& vs, double s,
                       int zero_index, const ScanOptions& opt = {}, const WorkerPool& pool = WorkerPool(1)) {
  ScanResult res{thetas, vs, {}};
  const std::size_t nt = thetas.size(), nv = vs.size(), n = nt * nv;
  res.cells.resize(n);
  std::vector<std::vector<ZeroRecord>> zeros(n);
  const auto grid = linspace(opt.zeta_min, opt.zeta_max, opt.zeta_points);

  pool.parallel_for(n, [&](std::size_t k) {
    ScanCell& c = res.cells[k];
    c.theta = thetas[k % nt];
    c.v = vs[k / nt];
    c.zero_index = zero_index;
    try {
      const ReferenceCoords rc{c.theta, c.v, s};
      const auto prof = melnikov_profile(m, rc, grid, opt.quad_tol, opt.branch);
      zeros[k] = find_zeros(m, prof);
      const ZeroRecord* z = zero_with_index(zeros[k], zero_index);
      if (!z) {
        c.status = "no_zero";
        return;
      }
      c.zeta_bar = z->zeta;
      AverageOptions ao;
      ao.quad_tol = opt.quad_tol;
      ao.with_window = false;
      const auto av = average_diff_first_order(m, z->zeta, rc, opt.branch, ao);
      c.avg_diff = av.limit;
      if (av.resonant) c.status = "resonant";
      if (opt.connections && m.eps > 0) c.zeta_star = find_heteroclinic(m, *z, rc, opt.branch, opt.hetero).zeta_star;
    } catch (const std::exception& e) {
      c.status = std::string("error: ") + e.what();
    }
  });

  // continuation pass, in grid order
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = k % nt, j = k / nt;
    std::size_t prev;
    if (i > 0) prev = k - 1;
    else if (j > 0) prev = k - nt;
    else continue;
    const double from = res.cells[prev].zeta_bar;
    if (std::isnan(from) || zeros[k].empty()) continue;
    const ZeroRecord* best = nullptr;
    for (const auto& z : zeros[k])
      if (!best || std::abs(z.zeta - from) < std::abs(best->zeta - from)) best = &z;
    if (best->index != zero_index) res.cells[k].relabel = 1;
  }
  return res;
}

inline std::string csv_number(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// One row per cell in grid order; commas inside a status are replaced so the row stays well formed.
inline std::string scan_csv(const ScanResult& r) {
  std::string out = "theta,v,zero_index,zeta_bar,zeta_star_or_nan,avg_diff_first_order,status,relabel_flag\n";
  for (const auto& c : r.cells) {
    std::string status = c.status;
    for (char& ch : status)
      if (ch == ',' || ch == '\n') ch = ';';
    out += csv_number(c.theta) + "," + csv_number(c.v) + "," + std::to_string(c.zero_index) + "," +
           csv_number(c.zeta_bar) + "," + csv_number(c.zeta_star) + "," + csv_number(c.avg_diff) + "," + status + "," +
           std::to_string(c.relabel) + "\n";
  }
  return out;
}

}  // namespace pwscatter
