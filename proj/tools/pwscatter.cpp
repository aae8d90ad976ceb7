#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "pwscatter/hetero.hpp"
#include "pwscatter/impact.hpp"
#include "pwscatter/scan.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace pwscatter;

namespace {

constexpr const char* tool_version = "0.1.0";

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Grid {
  double start = 0, stop = 0;
  int count = 1;
  std::vector<double> values() const { return linspace(start, stop, count); }
};

// "a" or "start:stop:count"
Grid parse_grid(const std::string& field, const std::string& text) {
  Grid g;
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  auto num = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (...) {
      used = 0;
    }
    if (used != s.size() || s.empty() || !std::isfinite(v)) throw ValidationError(field + ": '" + s + "' is not a number");
    return v;
  };
  if (parts.size() == 1) {
    g.start = g.stop = num(parts[0]);
    return g;
  }
  if (parts.size() != 3) throw ValidationError(field + ": expected start:stop:count");
  g.start = num(parts[0]);
  g.stop = num(parts[1]);
  const double c = num(parts[2]);
  if (c != std::floor(c) || c < 1) throw ValidationError(field + ": count must be a positive integer");
  if (c > 1e7) throw ValidationError(field + ": count too large");
  g.count = int(c);
  return g;
}

struct RunConfig {
  std::string command;
  std::string model = "rocking-block";
  double delta = 1, k = 1, omega = 3, eps = 0.01;
  std::string v = "0.48", theta = "0", s = "0", zeta = "-1:8:181";
  int zero_index = 1;
  std::string branch = "up";
  double rel_tol = 1e-12, abs_tol = 1e-14, event_tol = 1e-13, quad_tol = 1e-10, bisect_tol = 1e-12,
         distance_tol = 1e-10;
  double horizon = 12;
  double x = 0.5, y = 0;
  int forward = 10, backward = 10;
  bool connections = false;
  unsigned workers = 0;
  std::string out = "out";

  json to_json() const {
    return json{{"command", command},
                {"model", {{"name", model}, {"delta", delta}, {"k", k}, {"omega", omega}, {"eps", eps}}},
                {"grids", {{"v", v}, {"theta", theta}, {"s", s}, {"zeta", zeta}}},
                {"zero_index", zero_index},
                {"branch", branch},
                {"tolerances",
                 {{"rel_tol", rel_tol},
                  {"abs_tol", abs_tol},
                  {"event_tol", event_tol},
                  {"quad_tol", quad_tol},
                  {"bisect_tol", bisect_tol},
                  {"distance_tol", distance_tol}}},
                {"horizon", horizon},
                {"impact", {{"x", x}, {"y", y}, {"forward", forward}, {"backward", backward}}},
                {"connections", connections},
                {"deterministic", true}};
  }
};

struct Context {
  RunConfig cfg;
  SystemModel model;
  HeteroOptions hetero;
  Branch branch = Branch::up;
  WorkerPool pool;
  std::vector<std::pair<std::string, std::string>> files;  // name, content
};

std::string fmt(double x) { return csv_number(x); }

double first_value(const std::string& field, const std::string& text) {
  const Grid g = parse_grid(field, text);
  if (g.count != 1) throw ValidationError(field + ": a single value is required here");
  return g.start;
}

void validate(const RunConfig& c) {
  if (c.model != "rocking-block") throw ValidationError("--model: unknown model '" + c.model + "'");
  for (auto [name, val] : std::map<std::string, double>{{"--tol-rel", c.rel_tol},
                                                        {"--tol-abs", c.abs_tol},
                                                        {"--tol-event", c.event_tol},
                                                        {"--tol-quad", c.quad_tol},
                                                        {"--tol-bisect", c.bisect_tol},
                                                        {"--tol-distance", c.distance_tol},
                                                        {"--horizon", c.horizon}})
    if (!(val > 0)) throw ValidationError(name + ": must be positive");
  if (c.branch != "up" && c.branch != "down") throw ValidationError("--branch: expected up or down");
  if (!(c.eps >= 0)) throw ValidationError("--eps: must be >= 0");
}

Context make_context(const RunConfig& c) {
  validate(c);
  Context ctx{c, {}, {}, c.branch == "up" ? Branch::up : Branch::down, WorkerPool(1), {}};
  rocking_block::Params p;
  p.delta = c.delta;
  p.k = c.k;
  p.omega = c.omega;
  p.eps = c.eps;
  try {
    ctx.model = make_rocking_block(p);
  } catch (const DomainError& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
  ctx.hetero.ctrl.rel_tol = c.rel_tol;
  ctx.hetero.ctrl.abs_tol = c.abs_tol;
  ctx.hetero.ctrl.event_tol = c.event_tol;
  ctx.hetero.bisect_tol = c.bisect_tol;
  ctx.hetero.distance_tol = c.distance_tol;
  ctx.pool = WorkerPool(c.workers > 0 ? c.workers : default_workers());
  return ctx;
}

ReferenceCoords coords_of(const Context& ctx) {
  const ReferenceCoords rc{first_value("--theta", ctx.cfg.theta), first_value("--v", ctx.cfg.v),
                           first_value("--s", ctx.cfg.s)};
  try {
    check_coords(ctx.model, rc);
  } catch (const DomainError& e) {
    throw ValidationError(std::string("--theta/--v/--s: ") + e.what());
  }
  return rc;
}

std::vector<double> zeta_grid(const Context& ctx) {
  const Grid g = parse_grid("--zeta", ctx.cfg.zeta);
  if (g.count < 2) throw ValidationError("--zeta: need at least two points");
  return g.values();
}

json state_json(const ExtendedState& z) {
  return json{{"u", z.u}, {"v", z.v}, {"x", z.x}, {"y", z.y}, {"s", z.s}, {"t", z.time.value_or(0.0)}};
}

json zero_json(const ZeroRecord& z) {
  return json{{"index", z.index}, {"zeta", z.zeta}, {"slope", z.slope}, {"residual", z.residual}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

ZeroRecord requested_zero(Context& ctx, const ReferenceCoords& rc) {
  const auto prof = melnikov_profile(ctx.model, rc, zeta_grid(ctx), ctx.cfg.quad_tol, ctx.branch, ctx.pool);
  const auto zs = find_zeros(ctx.model, prof);
  const ZeroRecord* z = zero_with_index(zs, ctx.cfg.zero_index);
  if (!z) throw ConvergenceError("no Melnikov zero with index " + std::to_string(ctx.cfg.zero_index) + " on the zeta grid");
  return *z;
}

// ---- commands ----

int cmd_melnikov(Context& ctx) {
  const ReferenceCoords rc = coords_of(ctx);
  const auto prof = melnikov_profile(ctx.model, rc, zeta_grid(ctx), ctx.cfg.quad_tol, ctx.branch, ctx.pool);
  std::string csv = "zeta,M\n";
  for (std::size_t i = 0; i < prof.zeta.size(); ++i) csv += fmt(prof.zeta[i]) + "," + fmt(prof.value[i]) + "\n";
  int flagged = 0;
  const auto zs = find_zeros(ctx.model, prof, {}, &flagged);
  json j{{"coords", {{"theta", rc.theta}, {"v", rc.v}, {"s", rc.s}}},
         {"branch", ctx.cfg.branch},
         {"t_cut", prof.t_cut},
         {"quad_tol", prof.quad_tol},
         {"non_simple_flagged", flagged},
         {"zeros", json::array()}};
  for (const auto& z : zs) j["zeros"].push_back(zero_json(z));
  ctx.files.emplace_back("melnikov.csv", csv);
  ctx.files.emplace_back("zeros.json", dump(j));
  return 0;
}

int cmd_distance(Context& ctx) {
  const ReferenceCoords rc = coords_of(ctx);
  const auto zetas = zeta_grid(ctx);
  struct Row {
    double M = nan_value, delta = nan_value, y_s = nan_value, y_u = nan_value;
    std::string status = "ok";
  };
  std::vector<Row> rows(zetas.size());
  ctx.pool.parallel_for(zetas.size(), [&](std::size_t i) {
    Row& r = rows[i];
    try {
      r.M = melnikov(ctx.model, zetas[i], rc, ctx.cfg.quad_tol, ctx.branch);
      const auto d = real_distance(ctx.model, zetas[i], rc, ctx.branch, ctx.hetero);
      r.delta = d.delta;
      r.y_s = d.y_s;
      r.y_u = d.y_u;
    } catch (const std::exception& e) {
      r.status = std::string("error: ") + e.what();
    }
  });
  std::string csv = "zeta,M,delta,delta_over_eps,y_s,y_u,raw,status\n";
  std::size_t failed = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    failed += r.status != "ok";
    const double over = ctx.model.eps > 0 ? r.delta / ctx.model.eps : nan_value;
    csv += fmt(zetas[i]) + "," + fmt(r.M) + "," + fmt(r.delta) + "," + fmt(over) + "," + fmt(r.y_s) + "," +
           fmt(r.y_u) + "," + fmt(r.y_u - r.y_s) + "," + r.status + "\n";
  }
  ctx.files.emplace_back("distance.csv", csv);
  return failed == rows.size() ? 2 : 0;
}

json connection_json(const HeteroclinicConnection& h, const Context& ctx) {
  return json{{"coords", {{"theta", h.coords.theta}, {"v", h.coords.v}, {"s", h.coords.s}}},
              {"branch", ctx.cfg.branch},
              {"eps", ctx.model.eps},
              {"zero_index", h.zero_index},
              {"zeta_bar", h.zeta_bar},
              {"zeta_star", h.zeta_star},
              {"y_s", h.y_s},
              {"y_u", h.y_u},
              {"z0_star", state_json(h.z0_star)},
              {"z_star", state_json(h.z_star)},
              {"delta_U_first_order", h.delta_U_first_order},
              {"avg_diff_first_order", h.avg_diff_first_order},
              {"measured_delta", h.measured_delta},
              {"diagnostics", {{"root_iterations", h.root_iterations}, {"shots", h.shots}, {"residual", h.residual}}},
              {"tolerances",
               {{"rel_tol", ctx.cfg.rel_tol},
                {"abs_tol", ctx.cfg.abs_tol},
                {"quad_tol", ctx.cfg.quad_tol},
                {"bisect_tol", ctx.cfg.bisect_tol},
                {"distance_tol", ctx.cfg.distance_tol}}}};
}

// nlohmann writes NaN as null; keep that, it is the JSON spelling of "not computed"

struct AverageBundle {
  HeteroclinicConnection h;
  AverageFirstOrder first;
  MeasuredAverage measured;
};

AverageBundle connection_with_averages(Context& ctx) {
  const ReferenceCoords rc = coords_of(ctx);
  const ZeroRecord z = requested_zero(ctx, rc);
  AverageBundle b;
  b.h = find_heteroclinic(ctx.model, z, rc, ctx.branch, ctx.hetero, ctx.pool);
  AverageOptions ao;
  ao.t_max = ctx.cfg.horizon;
  ao.quad_tol = ctx.cfg.quad_tol;
  b.first = average_diff_first_order(ctx.model, z.zeta, rc, ctx.branch, ao);
  b.h.delta_U_first_order = b.first.delta_U;
  b.h.avg_diff_first_order = b.first.value;
  b.measured = measured_average_diff(ctx.model, b.h, ctx.cfg.horizon, ctx.hetero.ctrl);
  b.h.measured_delta = b.measured.value;
  return b;
}

json average_summary(const AverageBundle& b, const Context& ctx) {
  return json{{"horizon", ctx.cfg.horizon},
              {"window", {{"from", b.first.window_times.front()}, {"to", b.first.window_times.back()}}},
              {"first_order_window_mean", b.first.value},
              {"first_order_window_spread", b.first.spread},
              {"first_order_limit", b.first.limit},
              {"resonant", b.first.resonant},
              {"delta_U_first_order", b.first.delta_U},
              {"measured", b.measured.value},
              {"measured_forward", b.measured.forward},
              {"measured_backward", b.measured.backward},
              {"eps_times_first_order", ctx.model.eps * b.first.value},
              {"escaped_before_horizon", b.measured.escaped}};
}

int cmd_hetero(Context& ctx) {
  const AverageBundle b = connection_with_averages(ctx);
  json j = connection_json(b.h, ctx);
  j["average"] = average_summary(b, ctx);
  ctx.files.emplace_back("hetero.json", dump(j));
  return 0;
}

int cmd_average(Context& ctx) {
  const AverageBundle b = connection_with_averages(ctx);
  std::string csv = "T,eps_first_order,forward_mean_U,backward_mean_U,measured_diff\n";
  const auto& T = b.first.window_times;
  for (std::size_t k = 0; k < T.size(); ++k) {
    const double f = k < b.measured.forward_values.size() ? b.measured.forward_values[k] : nan_value;
    const double bk = k < b.measured.backward_values.size() ? b.measured.backward_values[k] : nan_value;
    csv += fmt(T[k]) + "," + fmt(ctx.model.eps * b.first.window_values[k]) + "," + fmt(f) + "," + fmt(bk) + "," +
           fmt(f - bk) + "\n";
  }
  json j = average_summary(b, ctx);
  j["connection"] = connection_json(b.h, ctx);
  ctx.files.emplace_back("average.csv", csv);
  ctx.files.emplace_back("average.json", dump(j));
  return b.measured.escaped ? 2 : 0;
}

int cmd_scan(Context& ctx) {
  const Grid tg = parse_grid("--theta", ctx.cfg.theta), vg = parse_grid("--v", ctx.cfg.v);
  std::vector<double> th = tg.values(), vs = vg.values();
  // theta is periodic: a grid ending at start + 1 would repeat its first column
  if (th.size() > 1 && std::abs(th.back() - th.front() - 1.0) < 1e-12) {
    th = linspace(tg.start, tg.stop, tg.count + 1);
    th.pop_back();
  }
  for (double& t : th) t = t - std::floor(t);
  for (double v : vs)
    if (!(v > 0) || v > ctx.model.v_max) throw ValidationError("--v: grid leaves (0, v_max]");
  const Grid zg = parse_grid("--zeta", ctx.cfg.zeta);
  if (zg.count < 2) throw ValidationError("--zeta: need at least two points");
  ScanOptions so;
  so.zeta_min = zg.start;
  so.zeta_max = zg.stop;
  so.zeta_points = zg.count;
  so.quad_tol = ctx.cfg.quad_tol;
  so.branch = ctx.branch;
  so.connections = ctx.cfg.connections;
  so.hetero = ctx.hetero;
  const double s = first_value("--s", ctx.cfg.s);
  const ScanResult r = scan(ctx.model, th, vs, s, ctx.cfg.zero_index, so, ctx.pool);
  std::size_t failed = 0;
  for (const auto& c : r.cells) failed += c.status.rfind("error", 0) == 0;
  ctx.files.emplace_back("scan.csv", scan_csv(r));
  return !r.cells.empty() && failed == r.cells.size() ? 2 : 0;
}

int cmd_impact(Context& ctx) {
  const double v = first_value("--v", ctx.cfg.v), s = first_value("--s", ctx.cfg.s);
  if (ctx.cfg.forward < 0 || ctx.cfg.backward < 0) throw ValidationError("--forward/--backward: must be >= 0");
  const SectionPoint w{v, ctx.cfg.x, ctx.cfg.y, wrap_phase(s, ctx.model.period), 0.0};
  try {
    check_section_point(ctx.model, w);
  } catch (const DomainError& e) {
    throw ValidationError(std::string("--v/--x/--y: ") + e.what());
  }
  const ImpactSequence seq = impact_sequence(ctx.model, w, ctx.cfg.forward, ctx.cfg.backward, ctx.hetero.ctrl);
  std::string csv = "i,t,v,x,y,s,manifold_reason\n";
  for (const auto& e : seq.entries)
    csv += std::to_string(e.index) + "," + fmt(e.point.t) + "," + fmt(e.point.v) + "," + fmt(e.point.x) + "," +
           fmt(e.point.y) + "," + fmt(e.point.s) + "," + e.label + "\n";
  auto stop_json = [](const std::optional<EventRecord>& ev) {
    if (!ev) return json(nullptr);
    return json{{"t", ev->time}, {"u", ev->state[0]}, {"v", ev->state[1]}, {"x", ev->state[2]}, {"y", ev->state[3]}};
  };
  json j{{"forward", to_string(seq.forward)},
         {"backward", to_string(seq.backward)},
         {"forward_stop", stop_json(seq.forward_stop)},
         {"backward_stop", stop_json(seq.backward_stop)},
         {"entries", seq.entries.size()}};
  ctx.files.emplace_back("impact.csv", csv);
  ctx.files.emplace_back("impact.json", dump(j));
  return 0;
}

// ---- output ----

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << content;
    f.flush();
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scattering-map numerics for forced piecewise-smooth Hamiltonian systems"};
  app.set_config("--config", "", "key = value configuration file; command-line flags win");
  app.require_subcommand(1);
  app.fallthrough();
  RunConfig cfg;
  app.add_option("--model", cfg.model, "built-in model")->capture_default_str();
  app.add_option("--delta", cfg.delta, "forcing amplitude")->capture_default_str();
  app.add_option("--k", cfg.k, "coupling stiffness")->capture_default_str();
  app.add_option("--omega", cfg.omega, "forcing frequency")->capture_default_str();
  app.add_option("--eps", cfg.eps, "perturbation size")->capture_default_str();
  app.add_option("--v", cfg.v, "orbit level, value or start:stop:count")->capture_default_str();
  app.add_option("--theta", cfg.theta, "orbit phase in [0,1), value or grid")->capture_default_str();
  app.add_option("--s", cfg.s, "forcing phase")->capture_default_str();
  app.add_option("--zeta", cfg.zeta, "zeta grid start:stop:count")->capture_default_str();
  app.add_option("--zero-index", cfg.zero_index, "Melnikov zero to follow (1 = first positive)")->capture_default_str();
  app.add_option("--branch", cfg.branch, "up or down connection")->capture_default_str();
  app.add_option("--tol-rel", cfg.rel_tol)->capture_default_str();
  app.add_option("--tol-abs", cfg.abs_tol)->capture_default_str();
  app.add_option("--tol-event", cfg.event_tol)->capture_default_str();
  app.add_option("--tol-quad", cfg.quad_tol)->capture_default_str();
  app.add_option("--tol-bisect", cfg.bisect_tol)->capture_default_str();
  app.add_option("--tol-distance", cfg.distance_tol)->capture_default_str();
  app.add_option("--horizon", cfg.horizon, "averaging horizon")->capture_default_str();
  app.add_option("--x", cfg.x, "impact start x")->capture_default_str();
  app.add_option("--y", cfg.y, "impact start y")->capture_default_str();
  app.add_option("--forward", cfg.forward, "impact crossings forward")->capture_default_str();
  app.add_option("--backward", cfg.backward, "impact crossings backward")->capture_default_str();
  app.add_flag("--connections", cfg.connections, "scan: also solve for zeta*");
  app.add_option("--workers", cfg.workers, "worker threads (default PWSCATTER_WORKERS or hardware)");
  app.add_option("--out", cfg.out, "output directory")->capture_default_str();

  const std::map<std::string, std::pair<std::string, int (*)(Context&)>> commands = {
      {"melnikov", {"Melnikov profile and its simple zeros", cmd_melnikov}},
      {"distance", {"manifold distance by shooting on a zeta grid", cmd_distance}},
      {"hetero", {"heteroclinic point for one Melnikov zero", cmd_hetero}},
      {"average", {"first-order and measured average energy difference", cmd_average}},
      {"scan", {"(theta, v) map of a Melnikov zero", cmd_scan}},
      {"impact", {"impact sequence on u = 0", cmd_impact}},
  };
  for (const auto& [name, c] : commands) app.add_subcommand(name, c.first);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  cfg.command = app.get_subcommands().front()->get_name();

  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  Context ctx;
  int code = 0;
  try {
    ctx = make_context(cfg);
    code = commands.at(cfg.command).second(ctx);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "computation failed: " << e.what() << "\n";
    return 2;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  try {
    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    const json cj = cfg.to_json();
    json manifest{{"tool", "pwscatter"},
                  {"version", tool_version},
                  {"command", cfg.command},
                  {"config", cj},
                  {"config_sha256", sha256_hex(cj.dump())},
                  {"workers", ctx.pool.workers()},
                  {"started_utc", started},
                  {"wall_time_s", {{cfg.command, wall}}},
                  {"exit_code", code},
                  {"files", json::array()}};
    for (const auto& [name, content] : ctx.files) {
      write_atomic(dir / name, content);
      manifest["files"].push_back({{"name", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    }
    write_atomic(dir / "manifest.json", dump(manifest));
    for (const auto& [name, content] : ctx.files) std::cout << (dir / name).string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "output failed: " << e.what() << "\n";
    return 2;
  }
  return code;
}
