/**
 * @file cli.hpp
 * @brief Command-line front end: run configuration, CSV writers and subcommands.
 *
 * Subcommands: stepflow, model, wave, biharm, interp-check. Settings come from built-in
 * per-command defaults, then an optional key=value file (--config), then flags.
 * Exit codes: 0 success, 2 configuration error, 3 integration abort.
 */
#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mrode/dense_output.hpp"
#include "mrode/models.hpp"
#include "mrode/multirate.hpp"
#include "mrode/stepflow.hpp"

namespace mrode::cli {

struct RunConfig {
  std::string command = "stepflow";

  // system parameters
  Index n = 15;
  double eps = 0.01;
  double m1 = 1.0;
  double m2 = 0.0;
  double gamma = 1.0;
  double delta = 0.5;
  double a = 1.0;
  double half_width = 25.0;
  double tfinal = 140.0;  // NaN: command-specific automatic choice
  std::string variant = "inv-r";
  std::string init = "mode";  // biharm: mode | delta
  Index mode = 1;             // biharm Fourier mode index
  Index perturb_at = -1;      // biharm delta position (-1: centre)
  std::string tableau = "ck45";
  int order = 3;
  std::string stages = "1,4,5";

  // integration
  double k = 2.0;
  double percentile = 50.0;
  Index buffer = 2;
  double rtol = 1e-6;
  double atol = 1e-8;
  double dt_max = std::numeric_limits<double>::infinity();
  double dt_initial = 0.1;
  double micro_tol_factor = 1e-3;
  int micro_subdiv = 50;
  int max_rejects = 10;
  bool single_block = false;
  bool single_rate = false;
  std::string percentile_rule = "ascending";
  Index collapses = -1;
  bool sweep_tol = false;
  std::string sweep_list = "1e-8,1e-9,1e-10,1e-11,1e-12";

  // outputs
  std::string out;
  std::string collapse_out;
  std::string traj_out;
};

namespace detail {

using Member = std::variant<double RunConfig::*, Index RunConfig::*, int RunConfig::*, bool RunConfig::*,
                            std::string RunConfig::*>;

enum Cmd : unsigned { kStepflow = 1, kModel = 2, kWave = 4, kBiharm = 8, kInterp = 16 };
inline constexpr unsigned kIntegrating = kStepflow | kModel | kWave | kBiharm;

struct Field {
  const char* key;
  Member member;
  unsigned commands;
  const char* help;
};

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"n", &RunConfig::n, kStepflow | kModel | kWave | kBiharm, "number of components"},
      {"eps", &RunConfig::eps, kStepflow | kBiharm, "interaction strength"},
      {"m1", &RunConfig::m1, kStepflow, "kinetic weight m1"},
      {"m2", &RunConfig::m2, kStepflow, "kinetic weight m2"},
      {"gamma", &RunConfig::gamma, kStepflow, "mobility prefactor"},
      {"delta", &RunConfig::delta, kBiharm, "step spacing"},
      {"a", &RunConfig::a, kWave, "wave speed"},
      {"half_width", &RunConfig::half_width, kWave, "domain half width"},
      {"tfinal", &RunConfig::tfinal, kIntegrating, "final time"},
      {"variant", &RunConfig::variant, kModel, "inv-r or inv-r2"},
      {"init", &RunConfig::init, kBiharm, "mode or delta"},
      {"mode", &RunConfig::mode, kBiharm, "Fourier mode index"},
      {"perturb_at", &RunConfig::perturb_at, kBiharm, "delta position (-1: centre)"},
      {"tableau", &RunConfig::tableau, kInterp, "rk4 or ck45"},
      {"order", &RunConfig::order, kInterp, "interpolant order"},
      {"stages", &RunConfig::stages, kInterp, "comma separated 1-based stages"},
      {"k", &RunConfig::k, kIntegrating, "flagging exponent"},
      {"percentile", &RunConfig::percentile, kIntegrating, "error percentile P"},
      {"buffer", &RunConfig::buffer, kIntegrating, "block buffer width W"},
      {"rtol", &RunConfig::rtol, kIntegrating, "relative tolerance"},
      {"atol", &RunConfig::atol, kIntegrating, "absolute tolerance"},
      {"dt_max", &RunConfig::dt_max, kIntegrating, "macro step ceiling"},
      {"dt_initial", &RunConfig::dt_initial, kIntegrating, "first macro step"},
      {"micro_tol_factor", &RunConfig::micro_tol_factor, kIntegrating, "micro tolerance factor"},
      {"micro_subdiv", &RunConfig::micro_subdiv, kIntegrating, "initial micro steps per macro step"},
      {"max_rejects", &RunConfig::max_rejects, kIntegrating, "consecutive rejected macro steps before giving up"},
      {"single_block", &RunConfig::single_block, kIntegrating, "merge all flags into one block"},
      {"single_rate", &RunConfig::single_rate, kWave | kBiharm, "plain Cash-Karp without re-integration"},
      {"percentile_rule", &RunConfig::percentile_rule, kIntegrating, "ascending or descending"},
      {"collapses", &RunConfig::collapses, kStepflow | kModel, "stop after this many collapses"},
      {"sweep_tol", &RunConfig::sweep_tol, kWave, "run the tolerance sweep"},
      {"sweep_list", &RunConfig::sweep_list, kWave, "tolerances for the sweep"},
      {"out", &RunConfig::out, kModel | kWave | kBiharm | kInterp, "primary output file"},
      {"collapse_out", &RunConfig::collapse_out, kStepflow, "collapse CSV"},
      {"traj_out", &RunConfig::traj_out, kStepflow | kModel | kWave, "trajectory CSV (long form)"},
  };
  return table;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& s) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': not a number: " + s);
  }
  if (pos != s.size()) throw ConfigError("'" + key + "': not a number: " + s);
  return v;
}

inline long long parse_integer(const std::string& key, const std::string& s) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': not an integer: " + s);
  }
  if (pos != s.size()) throw ConfigError("'" + key + "': not an integer: " + s);
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("'" + key + "': expected true or false, got " + s);
}

inline std::string get(const RunConfig& c, const Field& f) {
  return std::visit(
      [&](auto m) -> std::string {
        const auto& v = c.*m;
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, double>) return format_double(v);
        else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::string>) return v;
        else return std::to_string(v);
      },
      f.member);
}

inline void set(RunConfig& c, const Field& f, const std::string& s) {
  std::visit(
      [&](auto m) {
        auto& v = c.*m;
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, double>) v = parse_double(f.key, s);
        else if constexpr (std::is_same_v<T, bool>) v = parse_bool(f.key, s);
        else if constexpr (std::is_same_v<T, std::string>) v = s;
        else v = static_cast<T>(parse_integer(f.key, s));
      },
      f.member);
}

inline const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("unknown configuration key: " + key);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string flag_name(const char* key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

}  // namespace detail

inline bool is_command(const std::string& name) {
  return name == "stepflow" || name == "model" || name == "wave" || name == "biharm" || name == "interp-check";
}

/// Built-in settings for each subcommand.
[[nodiscard]] inline RunConfig defaults_for(const std::string& command) {
  if (!is_command(command)) throw ConfigError("unknown command: " + command);
  RunConfig c;
  c.command = command;
  if (command == "stepflow") {
    c.collapse_out = "stepflow_collapses.csv";
  } else if (command == "model") {
    c.n = 5;
    c.tfinal = std::numeric_limits<double>::quiet_NaN();
    c.out = "model_collapses.csv";
  } else if (command == "wave") {
    c.n = 401;
    c.tfinal = 20.0;
    c.k = -6.0;
    c.percentile = 30.0;
    c.buffer = 0;
    c.dt_max = 1.0;
    c.out = "wave_convergence.csv";
  } else if (command == "biharm") {
    c.n = 64;
    c.eps = 1e-3;
    c.rtol = 1e-10;
    c.atol = 1e-14;
    c.tfinal = std::numeric_limits<double>::quiet_NaN();
    c.out = "biharm_trajectory.csv";
  } else {
    c.out = "interp_check.txt";
  }
  return c;
}

/// key=value lines in table order; the command is written first.
[[nodiscard]] inline std::string serialize(const RunConfig& c) {
  std::string s = "command=" + c.command + "\n";
  for (const auto& f : detail::fields()) s += std::string(f.key) + "=" + detail::get(c, f) + "\n";
  return s;
}

/// Equality of the serialized forms, so NaN "automatic" settings compare equal.
[[nodiscard]] inline bool operator==(const RunConfig& a, const RunConfig& b) { return serialize(a) == serialize(b); }

/// Applies key=value lines (blank lines and '#' comments ignored) on top of `base`.
[[nodiscard]] inline RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key == "command") {
      if (!is_command(value)) throw ConfigError("unknown command: " + value);
      base.command = value;
      continue;
    }
    detail::set(base, detail::field(key), value);
  }
  return base;
}

[[nodiscard]] inline RunConfig parse_config(const std::string& text) {
  return parse_config(text, RunConfig{});
}

[[nodiscard]] inline MultirateConfig to_multirate(const RunConfig& c) {
  MultirateConfig m;
  m.k_exp = c.k;
  m.percentile_p = c.percentile;
  m.buffer_w = c.buffer;
  m.tolerances = {c.rtol, c.atol};
  m.controller.dt_max = c.dt_max;
  m.controller.max_rejects = c.max_rejects;
  m.dt_initial = c.dt_initial;
  m.micro_tol_factor = c.micro_tol_factor;
  m.micro_initial_subdiv = c.micro_subdiv;
  m.single_block = c.single_block;
  m.multirate = !c.single_rate;
  if (c.percentile_rule == "ascending") {
    m.percentile_rule = PercentileRule::RankAscending;
  } else if (c.percentile_rule == "descending") {
    m.percentile_rule = PercentileRule::RankDescending;
  } else {
    throw ConfigError("percentile_rule must be ascending or descending");
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------------------

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open output file: " + path);
  return f;
}

inline void write_meta(const std::string& path, const RunConfig& c) {
  auto f = open_out(path + ".meta");
  f << serialize(c);
}

inline void write_collapses(const std::string& path, const std::vector<CollapseEvent>& events) {
  auto f = open_out(path);
  f << "index,tau\n";
  for (const auto& e : events) f << e.step << ',' << format_double(e.tau) << '\n';
}

inline void write_trajectory(const std::string& path, const std::vector<State>& samples,
                             const std::vector<Index>& offsets) {
  auto f = open_out(path);
  f << "t,component,value\n";
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Index off = offsets.empty() ? 0 : offsets[s];
    const std::string t = format_double(samples[s].t);
    for (std::size_t i = 0; i < samples[s].y.size(); ++i) {
      f << t << ',' << (off + static_cast<Index>(i) + 1) << ',' << format_double(samples[s].y[i]) << '\n';
    }
  }
}

inline std::vector<double> parse_list(const std::string& key, const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------------------

struct ConvergencePoint {
  double tol = 0.0;
  double avg_dt = 0.0;
  double max_error = 0.0;
  std::int64_t n_micro = 0;
  std::int64_t n_macro = 0;
  std::vector<State> samples;
};

/// One advection run from the Gaussian exp(-(x+10)^2); error is the max deviation from
/// the exact semi-discrete solution at tfinal. avg_dt = T / N with N the micro-step total
/// (multirate) or the accepted step count (single rate).
[[nodiscard]] inline ConvergencePoint wave_point(const RunConfig& c, double tol, bool keep_samples = false) {
  RunConfig rc = c;
  rc.rtol = rc.atol = tol;
  const MultirateConfig m = to_multirate(rc);
  AdvectionSystem spec{c.n, c.half_width, c.a};
  const OdeSystem sys = advection_system(spec);
  std::vector<double> y0;
  for (double x : spec.grid()) y0.push_back(std::exp(-(x + 10.0) * (x + 10.0)));
  const std::vector<double> exact = advection_exact(spec, y0, c.tfinal);
  IntegrateOptions opts;
  opts.keep_samples = keep_samples;
  Trajectory tr = integrate_adaptive(sys, y0, 0.0, c.tfinal, m, {}, opts);
  const std::vector<double>& y = tr.final_state.y;
  ConvergencePoint p;
  p.tol = tol;
  for (std::size_t i = 0; i < y.size(); ++i) p.max_error = std::max(p.max_error, std::abs(y[i] - exact[i]));
  p.n_macro = tr.accepted_steps();
  p.n_micro = tr.total_micro_steps();
  const auto count = m.multirate ? p.n_micro : p.n_macro;
  p.avg_dt = count > 0 ? c.tfinal / static_cast<double>(count) : c.tfinal;
  if (keep_samples) p.samples = std::move(tr.samples);
  return p;
}

namespace detail {

inline int cmd_stepflow(const RunConfig& c, std::ostream& out) {
  if (c.n < 2) throw ConfigError("stepflow needs at least 2 steps");
  StepFlowParams p{c.eps, c.m1, c.m2, c.gamma};
  p.validate();
  std::vector<double> radii;
  for (Index i = 1; i <= c.n; ++i) radii.push_back(static_cast<double>(i));
  if (!(c.tfinal > 0.0)) throw ConfigError("tfinal must be positive");
  const CollapseRun run = relax_structure(radii, p, c.tfinal, to_multirate(c), c.collapses);
  for (const auto& e : run.events) out << "collapse " << e.step << " tau=" << format_double(e.tau) << '\n';
  out << "macro steps: " << run.records.size() << ", t_end=" << format_double(run.t_end) << '\n';
  write_collapses(c.collapse_out, run.events);
  write_meta(c.collapse_out, c);
  if (!c.traj_out.empty()) write_trajectory(c.traj_out, run.samples, run.sample_offset);
  return 0;
}

inline int cmd_model(const RunConfig& c, std::ostream& out) {
  const CollapseVariant v = parse_collapse_variant(c.variant);
  if (c.n < 1) throw ConfigError("model needs at least 1 component");
  CollapseConfig cfg;
  cfg.multirate = to_multirate(c);
  cfg.t_final = std::isnan(c.tfinal) ? 1.01 * collapse_model_exact(v, c.n) : c.tfinal;
  if (!(cfg.t_final > 0.0)) throw ConfigError("tfinal must be positive");
  cfg.max_collapses = c.collapses;
  std::vector<double> r0;
  for (Index i = 1; i <= c.n; ++i) r0.push_back(static_cast<double>(i));
  const CollapseRun run =
      run_collapse([v](Index m) { return collapse_model_system(v, m); }, std::move(r0), 0.0, cfg);
  for (const auto& e : run.events) {
    out << "collapse " << e.step << " tau=" << format_double(e.tau)
        << " exact=" << format_double(collapse_model_exact(v, e.step)) << '\n';
  }
  write_collapses(c.out, run.events);
  write_meta(c.out, c);
  if (!c.traj_out.empty()) write_trajectory(c.traj_out, run.samples, run.sample_offset);
  return 0;
}

inline int cmd_wave(const RunConfig& c, std::ostream& out) {
  if (!(c.tfinal > 0.0)) throw ConfigError("tfinal must be positive");
  std::vector<double> tols = c.sweep_tol ? parse_list("sweep_list", c.sweep_list) : std::vector<double>{c.rtol};
  if (tols.empty()) throw ConfigError("sweep_list is empty");
  (void)to_multirate(c);  // validate before launching work
  std::vector<ConvergencePoint> points;
  if (c.sweep_tol) {
    std::vector<std::future<ConvergencePoint>> jobs;
    for (double tol : tols) jobs.push_back(std::async(std::launch::async, [&c, tol] { return wave_point(c, tol); }));
    for (auto& j : jobs) points.push_back(j.get());
  } else {
    points.push_back(wave_point(c, tols.front(), !c.traj_out.empty()));
  }
  auto f = open_out(c.out);
  f << "avg_dt,max_error,n_micro_steps,n_macro_steps\n";
  std::vector<double> dts, errs;
  for (const auto& p : points) {
    f << format_double(p.avg_dt) << ',' << format_double(p.max_error) << ',' << p.n_micro << ',' << p.n_macro
      << '\n';
    out << "tol=" << format_double(p.tol) << " avg_dt=" << format_double(p.avg_dt)
        << " max_error=" << format_double(p.max_error) << " micro=" << p.n_micro << " macro=" << p.n_macro << '\n';
    dts.push_back(p.avg_dt);
    errs.push_back(p.max_error);
  }
  if (points.size() >= 3) out << "fitted order: " << format_double(convergence_slope(dts, errs)) << '\n';
  write_meta(c.out, c);
  if (!c.sweep_tol && !c.traj_out.empty()) write_trajectory(c.traj_out, points.front().samples, {});
  return 0;
}

inline int cmd_biharm(const RunConfig& c, std::ostream& out) {
  BiharmonicSystem spec{c.n, c.eps, c.delta};
  const OdeSystem sys = biharmonic_system(spec);
  const auto n = static_cast<std::size_t>(c.n);
  std::vector<double> v0(n, 0.0);
  double sigma = 0.0;
  Index p = c.perturb_at < 0 ? c.n / 2 : c.perturb_at;
  if (c.init == "mode") {
    const double wave = 2.0 * std::numbers::pi * static_cast<double>(c.mode) / static_cast<double>(c.n);
    for (std::size_t j = 0; j < n; ++j) v0[j] = std::cos(wave * static_cast<double>(j));
    sigma = biharmonic_dispersion(wave, c.eps, c.delta);
  } else if (c.init == "delta") {
    if (p >= c.n) throw ConfigError("perturb_at outside the lattice");
    v0[static_cast<std::size_t>(p)] = 1.0;
  } else {
    throw ConfigError("init must be mode or delta");
  }
  double tfinal = c.tfinal;
  if (std::isnan(tfinal)) {
    if (c.init == "mode") {
      if (!(sigma > 0.0)) throw ConfigError("mode 0 does not decay; give tfinal explicitly");
      tfinal = 1.0 / sigma;
    } else {
      tfinal = 1.0 / spec.coefficient();
    }
  }
  if (!(tfinal > 0.0)) throw ConfigError("tfinal must be positive");
  const Trajectory tr = integrate_adaptive(sys, v0, 0.0, tfinal, to_multirate(c));
  const auto& last = tr.final_state;
  if (c.init == "mode") {
    const double rate = -std::log(last.y[0] / v0[0]) / last.t;
    out << "sigma=" << format_double(sigma) << " measured=" << format_double(rate)
        << " rel_error=" << format_double(std::abs(rate - sigma) / sigma) << '\n';
  } else {
    double tail = 0.0;
    for (const auto& s : tr.samples) {
      for (Index j = 0; j < c.n; ++j) {
        Index d = std::abs(j - p);
        d = std::min(d, c.n - d);
        if (d > 20) tail = std::max(tail, std::abs(s.y[static_cast<std::size_t>(j)]));
      }
    }
    out << "max |v| beyond 20 components: " << format_double(tail) << '\n';
  }
  out << "macro steps: " << tr.accepted_steps() << '\n';
  write_trajectory(c.out, tr.samples, {});
  write_meta(c.out, c);
  return 0;
}

inline int cmd_interp(const RunConfig& c, std::ostream& out) {
  const TableauId id = parse_tableau_id(c.tableau);
  std::vector<int> stages;
  for (double s : parse_list("stages", c.stages)) stages.push_back(static_cast<int>(s));
  if (c.order < 1 || c.order > 4) throw ConfigError("order must lie in 1..4");
  const int max_stage = id == TableauId::Rk4 ? 4 : 6;
  for (int s : stages) {
    if (s < 1 || s > max_stage) throw ConfigError("stage number out of range");
  }
  std::ostringstream report;
  report << "tableau=" << c.tableau << " order=" << c.order << " stages=" << c.stages << '\n';
  const auto coeffs = derive_interpolant_coeffs(id, c.order, stages);
  if (!coeffs) {
    report << "UNSOLVABLE\n";
  } else {
    for (std::size_t m = 0; m < coeffs->poly.size(); ++m) {
      report << "chi^" << (m + 1) << ':';
      for (std::size_t s = 0; s < stages.size(); ++s) {
        report << ' ' << to_string(coeffs->poly[m][s]) << "*k" << stages[s];
      }
      report << '\n';
    }
  }
  report << "ck45 quartic determinant=" << to_string(check_ck45_quartic_unsolvable()) << '\n';
  out << report.str();
  auto f = open_out(c.out);
  f << report.str();
  write_meta(c.out, c);
  return 0;
}

}  // namespace detail

/**
 * @brief Runs one command line (program name excluded). Messages go to `out`, usage and
 *        errors to `err`.
 */
[[nodiscard]] inline int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multirate integration of locally coupled ODE systems", "mrode"};
  app.require_subcommand(1);
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::map<std::string, std::map<std::string, bool>> flags;
  std::map<std::string, std::string> config_files;
  struct Sub {
    const char* name;
    unsigned bit;
    const char* help;
  };
  const Sub subs[] = {
      {"stepflow", detail::kStepflow, "relax a stack of circular steps and record collapse times"},
      {"model", detail::kModel, "collapse times of the uncoupled model chains"},
      {"wave", detail::kWave, "upwind advection runs and convergence sweep"},
      {"biharm", detail::kBiharm, "biharmonic lattice: mode decay or delta spreading"},
      {"interp-check", detail::kInterp, "derive stage interpolants in exact arithmetic"},
  };
  struct Parsed {
    CLI::App* app;
    std::string name;
    unsigned bit;
  };
  std::vector<Parsed> apps;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_files[s.name], "key=value configuration file");
    for (const auto& f : detail::fields()) {
      if (!(f.commands & s.bit)) continue;
      if (std::holds_alternative<bool RunConfig::*>(f.member)) {
        sub->add_flag(detail::flag_name(f.key), flags[s.name][f.key], f.help);
      } else {
        sub->add_option(detail::flag_name(f.key), raw[s.name][f.key], f.help);
      }
    }
    apps.push_back({sub, s.name, s.bit});
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }
  try {
    for (const auto& [sub, name, bit] : apps) {
      if (!sub->parsed()) continue;
      RunConfig c = defaults_for(name);
      if (!config_files[name].empty()) {
        std::ifstream in(config_files[name]);
        if (!in) throw ConfigError("cannot read config file: " + config_files[name]);
        std::stringstream text;
        text << in.rdbuf();
        c = parse_config(text.str(), c);
        if (c.command != name) throw ConfigError("config file is for command '" + c.command + "'");
      }
      for (const auto& f : detail::fields()) {
        if (!(f.commands & bit)) continue;
        const std::string flag = detail::flag_name(f.key);
        if (sub->count(flag) == 0) continue;
        if (std::holds_alternative<bool RunConfig::*>(f.member)) {
          c.*std::get<bool RunConfig::*>(f.member) = flags[name][f.key];
        } else {
          detail::set(c, f, raw[name][f.key]);
        }
      }
      if (name == "stepflow") return detail::cmd_stepflow(c, out);
      if (name == "model") return detail::cmd_model(c, out);
      if (name == "wave") return detail::cmd_wave(c, out);
      if (name == "biharm") return detail::cmd_biharm(c, out);
      return detail::cmd_interp(c, out);
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const ContractViolation& e) {
    err << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const IntegrationAbort& e) {
    err << "integration aborted at t=" << detail::format_double(e.time()) << ": " << e.what() << '\n';
    return 3;
  }
  return 2;
}

}  // namespace mrode::cli
