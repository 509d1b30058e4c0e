/**
 * @file stepflow.hpp
 * @brief Axisymmetric step-flow equations for a stack of concentric circular steps.
 *
 * Radii rho_1 < rho_2 < ... < rho_N evolve by
 *
 *   R_n     = 1/rho_n + eps * Lambda_n
 *   Delta_n = m1 * ln(rho_{n+1}/rho_n) + m2 * (1/rho_{n+1} + 1/rho_n)
 *   drho_n/dt = (gamma/rho_n) * ((R_{n+1} - R_n)/Delta_n - (R_n - R_{n-1})/Delta_{n-1})
 *
 * with the outer (inner) flux dropped for n = N (n = 1). Lambda_n sums the interaction
 * of each neighbour on step n, Lambda_n = lambda(rho_{n-1}, rho_n) + lambda(rho_{n+1}, rho_n).
 * Each rate depends on rho_{n-2} .. rho_{n+2} only.
 */
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mrode/collapse.hpp"
#include "mrode/core.hpp"
#include "mrode/multirate.hpp"

namespace mrode {

struct StepFlowParams {
  double eps = 0.01;
  double m1 = 1.0;
  double m2 = 0.0;
  double gamma = 1.0;

  void validate() const {
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(m1 >= 0.0 && m1 <= 1.0 && m2 >= 0.0 && m2 <= 1.0)) throw ConfigError("m1, m2 must lie in [0, 1]");
    if (!(m1 > 0.0 || m2 > 0.0)) throw ConfigError("m1 and m2 cannot both vanish");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  }
};

namespace detail {

inline double lambda_unchecked(double ri, double rj) {
  const double d = ri - rj;
  const double q = ri / (ri * ri - rj * rj);
  return 2.0 * ri / ((ri + rj) * d * d * d) + q * q / rj;
}

/// Rates for window components given radii over [lo, lo + r.size()) of an n-step train.
/// Writes NaN wherever an input is non-finite or out of order.
inline void stepflow_rates(const StepFlowParams& p, Index n, Index lo, std::span<const double> r, IndexRange w,
                           std::span<double> out) {
  const Index hi = lo + static_cast<Index>(r.size());
  auto rho = [&](Index j) { return r[static_cast<std::size_t>(j - lo)]; };
  bool ordered = true;
  for (Index j = lo; j < hi; ++j) {
    if (!(rho(j) > 0.0) && !std::isnan(rho(j))) ordered = false;
    if (j + 1 < hi && !(rho(j) < rho(j + 1)) && !std::isnan(rho(j)) && !std::isnan(rho(j + 1))) ordered = false;
  }
  if (!ordered) {
    for (double& v : out) v = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  auto big_r = [&](Index j) {
    double lam = 0.0;
    if (j > 0) lam += lambda_unchecked(rho(j - 1), rho(j));
    if (j < n - 1) lam += lambda_unchecked(rho(j + 1), rho(j));
    return 1.0 / rho(j) + p.eps * lam;
  };
  auto delta = [&](Index j) {
    return p.m1 * std::log(rho(j + 1) / rho(j)) + p.m2 * (1.0 / rho(j + 1) + 1.0 / rho(j));
  };
  // fluxes between j and j+1 for j in [w.begin - 1, w.end)
  const Index f_lo = std::max<Index>(w.begin - 1, 0);
  const Index f_hi = std::min<Index>(w.end, n - 1);
  std::vector<double> rr;
  const Index r_lo = std::max<Index>(w.begin - 1, 0);
  const Index r_hi = std::min<Index>(w.end + 1, n);
  for (Index j = r_lo; j < r_hi; ++j) rr.push_back(big_r(j));
  auto R = [&](Index j) { return rr[static_cast<std::size_t>(j - r_lo)]; };
  std::vector<double> flux;
  for (Index j = f_lo; j < f_hi; ++j) flux.push_back((R(j + 1) - R(j)) / delta(j));
  auto F = [&](Index j) { return flux[static_cast<std::size_t>(j - f_lo)]; };
  for (Index i = w.begin; i < w.end; ++i) {
    double d = 0.0;
    if (i < n - 1) d += F(i);
    if (i > 0) d -= F(i - 1);
    out[static_cast<std::size_t>(i - w.begin)] = p.gamma / rho(i) * d;
  }
}

}  // namespace detail

/// lambda(rho_i, rho_j) = 2 rho_i / ((rho_i + rho_j)(rho_i - rho_j)^3) + (1/rho_j)(rho_i/(rho_i^2 - rho_j^2))^2
[[nodiscard]] inline double lambda_pair(double rho_i, double rho_j) {
  require(rho_i > 0.0 && rho_j > 0.0, "lambda_pair: radii must be positive");
  require(rho_i != rho_j, "lambda_pair: coincident steps");
  return detail::lambda_unchecked(rho_i, rho_j);
}

struct StepQuantities {
  std::vector<double> lambda;  // Lambda_n on the window
  std::vector<double> R;       // R_n on the window
  std::vector<double> delta;   // Delta_n (pair n, n+1) on the window; NaN for n = N-1
};

/// Lambda, R and Delta on `window` of a strictly ordered train.
[[nodiscard]] inline StepQuantities step_quantities(const StepFlowParams& p, std::span<const double> radii,
                                                   IndexRange window) {
  const auto n = static_cast<Index>(radii.size());
  require(window.begin >= 0 && window.end <= n && window.begin <= window.end, "step_quantities: bad window");
  for (Index j = 0; j < n; ++j) {
    require(radii[static_cast<std::size_t>(j)] > 0.0, "step_quantities: radii must be positive");
    if (j + 1 < n) require(radii[static_cast<std::size_t>(j)] < radii[static_cast<std::size_t>(j + 1)],
                           "step_quantities: radii not strictly ordered");
  }
  StepQuantities q;
  for (Index j = window.begin; j < window.end; ++j) {
    const double r = radii[static_cast<std::size_t>(j)];
    double lam = 0.0;
    if (j > 0) lam += lambda_pair(radii[static_cast<std::size_t>(j - 1)], r);
    if (j < n - 1) lam += lambda_pair(radii[static_cast<std::size_t>(j + 1)], r);
    q.lambda.push_back(lam);
    q.R.push_back(1.0 / r + p.eps * lam);
    if (j < n - 1) {
      const double r1 = radii[static_cast<std::size_t>(j + 1)];
      q.delta.push_back(p.m1 * std::log(r1 / r) + p.m2 * (1.0 / r1 + 1.0 / r));
    } else {
      q.delta.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return q;
}

/// drho/dt for the whole train (plain radii, no squared top).
[[nodiscard]] inline std::vector<double> stepflow_rhs(const StepFlowParams& p, std::span<const double> radii) {
  const auto n = static_cast<Index>(radii.size());
  std::vector<double> out(radii.size());
  detail::stepflow_rates(p, n, 0, radii, {0, n}, out);
  return out;
}

/// Rates when component 0 stores u = rho_1^2: du/dt = 2 sqrt(u) F_1, the rest unchanged.
[[nodiscard]] inline std::vector<double> top_squared_rhs(const StepFlowParams& p, std::span<const double> y) {
  require(!y.empty(), "top_squared_rhs: empty state");
  require(y[0] >= 0.0, "top_squared_rhs: negative squared radius");
  std::vector<double> r(y.begin(), y.end());
  r[0] = std::sqrt(y[0]);
  std::vector<double> out = stepflow_rhs(p, r);
  out[0] *= 2.0 * r[0];
  return out;
}

/**
 * @brief Step-flow system of n steps, bandwidth 2.
 *
 * With `top_squared`, component 0 stores u = rho_1^2; u <= 0 yields NaN rates near the
 * top, which the collapse machinery treats as a crossing. Out-of-order radii also yield
 * NaN so that a trial step is rejected rather than aborted.
 */
[[nodiscard]] inline OdeSystem make_stepflow_system(const StepFlowParams& p, Index n, bool top_squared = true) {
  OdeSystem sys;
  sys.n_components = n;
  sys.bandwidth = 2;
  sys.periodic = false;
  sys.rhs = [p, n, top_squared](double, const LocalState& y, IndexRange w, std::span<double> out) {
    const Index lo = y.first();
    std::vector<double> r;
    r.reserve(static_cast<std::size_t>(y.last() - lo));
    for (Index j = lo; j < y.last(); ++j) {
      double v = y[j];
      if (j == 0 && top_squared) v = v > 0.0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
      r.push_back(v);
    }
    detail::stepflow_rates(p, n, lo, r, w, out);
    if (top_squared && w.begin == 0 && !out.empty()) out[0] *= 2.0 * r[static_cast<std::size_t>(0 - lo)];
  };
  return sys;
}

/// A train of steps; radii[0] holds rho_1^2 when top_squared is set.
struct StepTrain {
  std::vector<double> radii;
  StepFlowParams params;
  bool top_squared = true;
  std::vector<CollapseEvent> collapsed;
};

/// Removes the top step at time tau; the new top is re-stored squared.
inline void pop_top(StepTrain& train, double tau) {
  require(!train.radii.empty(), "pop_top: empty train");
  if (!train.collapsed.empty()) require(tau > train.collapsed.back().tau, "pop_top: collapse times must increase");
  const Index step = (train.collapsed.empty() ? 0 : train.collapsed.back().step) + 1;
  train.radii.erase(train.radii.begin());
  if (train.top_squared && !train.radii.empty()) train.radii[0] *= train.radii[0];
  train.collapsed.push_back({step, tau});
}

/// Defaults used for step-flow runs.
[[nodiscard]] inline MultirateConfig stepflow_default_config() {
  MultirateConfig c;
  c.k_exp = 2.0;
  c.percentile_p = 50.0;
  c.buffer_w = 2;
  c.tolerances = {1e-6, 1e-8};
  return c;
}

/**
 * @brief Relaxes a step train until t_final or until a single step remains.
 *
 * Blocks containing the top step are re-integrated with Euler step doubling, the others
 * with Cash-Karp.
 */
[[nodiscard]] inline CollapseRun relax_structure(std::vector<double> radii, const StepFlowParams& p, double t_final,
                                                 MultirateConfig config = stepflow_default_config(),
                                                 Index max_collapses = -1) {
  p.validate();
  require(radii.size() >= 2, "relax_structure: need at least two steps");
  for (std::size_t j = 0; j + 1 < radii.size(); ++j) {
    require(radii[j] > 0.0 && radii[j] < radii[j + 1], "relax_structure: radii must be positive and increasing");
  }
  CollapseConfig cfg;
  cfg.multirate = config;
  cfg.t_final = t_final;
  cfg.min_components = 2;
  cfg.max_collapses = max_collapses;
  return run_collapse([p](Index n) { return make_stepflow_system(p, n, true); }, std::move(radii), 0.0, cfg);
}

}  // namespace mrode
