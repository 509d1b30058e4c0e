/**
 * @file integrators.hpp
 * @brief One-step integrators (Cash-Karp 4(5), classical RK4, Euler with step doubling)
 *        and the scalar step-size controller.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

#include "mrode/core.hpp"
#include "mrode/tableau.hpp"

namespace mrode {

/**
 * @brief Result of one Runge-Kutta step over a window.
 *
 * stages[s][i] = dt * f at stage s for window component i. `lte` is empty for methods
 * without an embedded pair. `finite` is false when any stage evaluation or the update
 * produced a non-finite value; the other fields are then still filled in.
 */
struct StepOutcome {
  std::vector<double> y_next;
  std::vector<double> lte;
  std::vector<std::vector<double>> stages;
  bool finite = true;
};

struct ControllerParams {
  double safety = 0.95;
  double growth_cap = 5.0;
  double shrink_cap = 0.1;
  int order = 4;
  double dt_max = std::numeric_limits<double>::infinity();
  int max_rejects = 10;

  void validate() const {
    if (!(safety > 0.0 && safety < 1.0)) throw ConfigError("controller: safety must lie in (0, 1)");
    if (!(shrink_cap > 0.0 && shrink_cap < 1.0 && growth_cap > 1.0)) {
      throw ConfigError("controller: need 0 < shrink_cap < 1 < growth_cap");
    }
    if (order < 1) throw ConfigError("controller: order must be positive");
    if (!(dt_max > 0.0)) throw ConfigError("controller: dt_max must be positive");
    if (max_rejects < 0) throw ConfigError("controller: max_rejects must be non-negative");
  }
};

namespace detail {

struct ConstantHalo {
  const Halo& halo;
  void operator()(double, Halo& out) const { out = halo; }
};

template <std::size_t S, class HaloFn>
StepOutcome rk_step(const ButcherTableau<S>& tab, const OdeSystem& sys, double t, std::span<const double> y,
                    double dt, IndexRange window, HaloFn&& halo_at) {
  require(dt > 0.0, "step size must be positive");
  validate_window(sys, window);
  const auto m = static_cast<std::size_t>(window.size());
  require(y.size() == m, "state length differs from window size");

  StepOutcome out;
  out.stages.assign(S, std::vector<double>(m, 0.0));
  std::vector<double> stage_y(m);
  std::vector<double> buf;
  Halo halo;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t i = 0; i < m; ++i) {
      double acc = y[i];
      for (std::size_t j = 0; j < s; ++j) {
        const double b = tab.coupling[s][j].value();
        if (b != 0.0) acc += b * out.stages[j][i];
      }
      stage_y[i] = acc;
    }
    const double ts = t + tab.nodes[s].value() * dt;
    halo_at(ts, halo);
    const LocalState local = assemble_local(sys, window, stage_y, halo, buf);
    auto& k = out.stages[s];
    sys.rhs(ts, local, window, k);
    for (double& v : k) v *= dt;
  }

  out.y_next.assign(y.begin(), y.end());
  if (tab.embedded) out.lte.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double incr = 0.0;
    double alt = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      incr += tab.weights[s].value() * out.stages[s][i];
      if (tab.embedded) alt += tab.alt_weights[s].value() * out.stages[s][i];
    }
    out.y_next[i] = y[i] + incr;
    if (tab.embedded) out.lte[i] = std::abs(out.y_next[i] - (y[i] + alt));
  }
  out.finite = all_finite(out.y_next) && all_finite(out.lte);
  for (const auto& k : out.stages) out.finite = out.finite && all_finite(k);
  return out;
}

}  // namespace detail

/// Cash-Karp step on `window` with a fixed halo. The propagated solution is the
/// fourth-order row; lte_i = |fourth-order - fifth-order| per component.
[[nodiscard]] inline StepOutcome ck45_step(const OdeSystem& sys, double t, std::span<const double> y, double dt,
                                           IndexRange window, const Halo& halo) {
  return detail::rk_step(cash_karp45, sys, t, y, dt, window, detail::ConstantHalo{halo});
}

/// Cash-Karp step whose halo is re-evaluated at every stage time.
[[nodiscard]] inline StepOutcome ck45_step(const OdeSystem& sys, double t, std::span<const double> y, double dt,
                                           IndexRange window, const HaloProvider& halo) {
  return detail::rk_step(cash_karp45, sys, t, y, dt, window, halo);
}

/// Cash-Karp step on the whole system.
[[nodiscard]] inline StepOutcome ck45_step(const OdeSystem& sys, double t, std::span<const double> y, double dt) {
  return ck45_step(sys, t, y, dt, sys.full(), Halo{});
}

/// Classical RK4 step on the whole system (no error estimate).
[[nodiscard]] inline StepOutcome rk4_step(const OdeSystem& sys, double t, std::span<const double> y, double dt) {
  const Halo none;
  return detail::rk_step(classical_rk4, sys, t, y, dt, sys.full(), detail::ConstantHalo{none});
}

[[nodiscard]] inline StepOutcome rk4_step(const OdeSystem& sys, double t, std::span<const double> y, double dt,
                                          IndexRange window, const HaloProvider& halo) {
  return detail::rk_step(classical_rk4, sys, t, y, dt, window, halo);
}

/**
 * @brief Next step size from the controlling error ratio M = max_i lte_i / tol_i.
 *
 * factor = M^(-1/(1+order)). Accepted steps grow by at most growth_cap and never
 * exceed dt_max; rejected steps shrink by at least shrink_cap. Both are scaled by safety.
 */
[[nodiscard]] inline double step_size_update(double error_ratio, double dt, const ControllerParams& params,
                                             bool accepted) {
  require(error_ratio >= 0.0 || std::isnan(error_ratio), "error ratio must be non-negative");
  if (std::isnan(error_ratio)) return params.safety * dt * params.shrink_cap;
  if (error_ratio == 0.0) {
    // No error information: growth cap only.
    return accepted ? std::min(params.dt_max, params.safety * dt * params.growth_cap)
                    : params.safety * dt * params.shrink_cap;
  }
  const double factor = std::pow(error_ratio, -1.0 / (1.0 + params.order));
  if (accepted) return std::min(params.dt_max, params.safety * dt * std::min(params.growth_cap, factor));
  return params.safety * dt * std::max(params.shrink_cap, factor);
}

struct EulerOutcome {
  std::vector<double> y_next;   // two-half-step result (meaningful when accepted)
  std::vector<double> y_half;   // state after the first half step
  std::vector<double> y_full;   // single full step
  bool accepted = false;
  double dt_new = 0.0;
  double error_ratio = 0.0;     // max_i |y_full - y_two| / tol_i
};

/**
 * @brief Simple Euler step with step doubling.
 *
 * Takes one full step and two half steps; accepts the two-half-step result when
 * |y_full - y_two|_i <= tol_i for every window component. The step doubles when every
 * difference is within tol_i / 4, halves on rejection, and is kept otherwise.
 * tol_i is formed from |y_i| at the start of the step.
 */
[[nodiscard]] inline EulerOutcome euler_double_step(const OdeSystem& sys, double t, std::span<const double> y,
                                                    double dt, IndexRange window, const HaloProvider& halo_at,
                                                    const ToleranceSpec& tol) {
  require(dt > 0.0, "step size must be positive");
  validate_window(sys, window);
  const auto m = static_cast<std::size_t>(window.size());
  require(y.size() == m, "state length differs from window size");

  std::vector<double> buf;
  Halo halo;
  std::vector<double> f0(m), f1(m);
  halo_at(t, halo);
  sys.rhs(t, detail::assemble_local(sys, window, y, halo, buf), window, f0);

  EulerOutcome out;
  out.y_full.resize(m);
  out.y_half.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    out.y_full[i] = y[i] + dt * f0[i];
    out.y_half[i] = y[i] + 0.5 * dt * f0[i];
  }
  halo_at(t + 0.5 * dt, halo);
  sys.rhs(t + 0.5 * dt, detail::assemble_local(sys, window, out.y_half, halo, buf), window, f1);
  out.y_next.resize(m);
  double ratio = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    out.y_next[i] = out.y_half[i] + 0.5 * dt * f1[i];
    const double e = std::abs(out.y_full[i] - out.y_next[i]);
    const double r = e / component_tolerance(y[i], tol);
    ratio = std::isnan(r) ? std::numeric_limits<double>::infinity() : std::max(ratio, r);
  }
  out.error_ratio = ratio;
  out.accepted = ratio <= 1.0;
  if (!out.accepted) {
    out.dt_new = 0.5 * dt;
  } else {
    out.dt_new = ratio <= 0.25 ? 2.0 * dt : dt;
  }
  return out;
}

/// Euler step doubling with a fixed halo.
[[nodiscard]] inline EulerOutcome euler_double_step(const OdeSystem& sys, double t, std::span<const double> y,
                                                    double dt, IndexRange window, const Halo& halo,
                                                    const ToleranceSpec& tol) {
  return euler_double_step(sys, t, y, dt, window, HaloProvider(detail::ConstantHalo{halo}), tol);
}

}  // namespace mrode
