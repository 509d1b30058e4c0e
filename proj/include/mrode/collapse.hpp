/**
 * @file collapse.hpp
 * @brief Multirate runs of chains whose innermost component reaches zero in finite time.
 *
 * Component 0 is stored squared (u = r_0^2) so that the integrator can step through the
 * square-root singularity. Blocks that contain component 0 are re-integrated with Simple
 * Euler step doubling; when u changes sign the collapse time is found by linear
 * interpolation, the component is removed and its neighbour becomes the new (squared) top.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mrode/core.hpp"
#include "mrode/integrators.hpp"
#include "mrode/multirate.hpp"

namespace mrode {

/// Linear zero crossing through (t_m, u_m) and (t_{m+1}, u_{m+1}).
[[nodiscard]] inline double collapse_time(double u_m, double t_m, double u_m1, double t_m1) {
  require(u_m > 0.0, "collapse_time: u_m must be positive");
  require(u_m1 <= 0.0, "collapse_time: u_{m+1} must be non-positive");
  require(t_m < t_m1, "collapse_time: samples out of order");
  return (u_m * t_m1 - u_m1 * t_m) / (u_m - u_m1);
}

struct CollapseEvent {
  Index step = 0;    // 1-based position of the component in the initial chain
  double tau = 0.0;
};

/// Builds the system for a chain of n components with component 0 stored squared.
using SystemFactory = std::function<OdeSystem(Index n)>;

struct CollapseConfig {
  MultirateConfig multirate{};
  double t_final = 1.0;
  Index min_components = 1;  // the run ends once fewer components remain
  Index max_collapses = -1;  // stop after this many collapses (negative: no limit)
  bool check_ordering = true;  // abort unless 0 < r_0 < r_1 < ... after every accepted step
};

struct CollapseRun {
  std::vector<CollapseEvent> events;
  std::vector<State> samples;        // un-squared values after every accepted step
  std::vector<Index> sample_offset;  // number of components removed before each sample
  std::vector<MacroStepRecord> records;
  double t_end = 0.0;
};

namespace detail {

struct CollapseScratch {
  Index pending = 0;          // collapses inside the current macro step
  bool new_top_squared = true;
  std::vector<double> taus;
};

/**
 * Euler step doubling on a block [0, e) that starts at the top. The top component uses a
 * time-shift test: |u_full - u_two| / |du/dt| must not exceed atol + rtol * |t|, since a
 * tolerance on u itself cannot be met as u -> 0 with a singular derivative.
 */
inline BlockResult integrate_top_block(const BlockTask& task, const SystemFactory& factory, CollapseScratch& scratch) {
  const OdeSystem& sys0 = task.system;
  require(task.block.range.begin == 0, "top block must start at component 0");
  const Index block_len = task.block.range.size();
  std::vector<double> y = window_values(sys0, task.y0, task.block.range);
  const ToleranceSpec tol = task.tolerances;
  OdeSystem sys = sys0;
  Index e = block_len;
  Index collapsed = 0;
  double t = task.t0;
  double dt = (task.t1 - task.t0) / task.config.micro_initial_subdiv;
  int rejects = 0;
  BlockResult result;
  auto fail = [&](const std::string& why) {
    throw IntegrationAbort("Euler re-integration of block [0, " + std::to_string(block_len) + ") failed: " + why, t,
                           y);
  };
  auto time_tol = [&](double at) { return tol.atol + tol.rtol * std::abs(at); };

  while (t < task.t1 && e > 0) {
    bool last = false;
    if (t + dt >= task.t1) {
      dt = task.t1 - t;
      last = true;
    }
    if (!(dt > 0.0) || t + dt == t) fail("step size underflow");
    const EulerOutcome s = euler_double_step(sys, t, y, dt, {0, e}, task.halo, tol);
    const double half = 0.5 * dt;
    double rest = 0.0;
    for (std::size_t i = 1; i < y.size(); ++i) {
      const double r = std::abs(s.y_full[i] - s.y_next[i]) / component_tolerance(y[i], tol);
      rest = std::isfinite(r) && std::isfinite(s.y_next[i]) ? std::max(rest, r) : std::numeric_limits<double>::infinity();
    }
    const double u = y[0], uh = s.y_half[0], u2 = s.y_next[0];
    const double f0 = (uh - u) / half, f1 = (u2 - uh) / half;

    bool accept = false;
    bool crossed = false;
    double ratio = std::numeric_limits<double>::infinity();
    if (std::isfinite(uh) && uh > 0.0 && std::isfinite(u2)) {
      if (u2 <= 0.0) {
        const double tau_b = collapse_time(uh, t + half, u2, t + dt);
        const double tau_a = f0 < 0.0 ? t - u / f0 : std::numeric_limits<double>::infinity();
        ratio = std::max(rest, std::abs(tau_a - tau_b) / time_tol(tau_b));
        accept = ratio <= 1.0;
        crossed = accept;
        if (crossed) {
          std::vector<double> at_tau(y.size());
          for (std::size_t i = 0; i < y.size(); ++i) {
            at_tau[i] = tau_b <= t + half ? y[i] + (tau_b - t) * (s.y_half[i] - y[i]) / half
                                          : s.y_half[i] + (tau_b - t - half) * (s.y_next[i] - s.y_half[i]) / half;
          }
          scratch.taus.push_back(tau_b);
          ++scratch.pending;
          ++collapsed;
          --e;
          sys = factory(sys.n_components - 1);
          y.assign(at_tau.begin() + 1, at_tau.end());
          scratch.new_top_squared = e > 0;
          if (e > 0) y[0] *= y[0];
          t = tau_b;
        }
      } else {
        const double fmax = std::max(std::abs(f0), std::abs(f1));
        const double du = std::abs(s.y_full[0] - u2);
        double top = du / component_tolerance(u, tol);
        if (fmax > 0.0) top = std::min(top, du / (fmax * time_tol(t)));
        ratio = std::max(rest, top);
        accept = ratio <= 1.0;
      }
    }
    if (accept) {
      ++result.micro_steps;
      rejects = 0;
      if (!crossed) {
        y = s.y_next;
        t = last ? task.t1 : t + dt;
        if (ratio <= 0.25) dt *= 2.0;
      }
    } else {
      if (++rejects > task.config.euler_max_rejects) {
        fail(std::to_string(task.config.euler_max_rejects) + " failed attempts");
      }
      dt *= 0.5;
    }
  }
  result.values.assign(static_cast<std::size_t>(collapsed), std::numeric_limits<double>::quiet_NaN());
  result.values.insert(result.values.end(), y.begin(), y.end());
  return result;
}

inline State unsquared(const State& s) {
  State out = s;
  if (!out.y.empty()) out.y[0] = std::sqrt(std::max(0.0, out.y[0]));
  return out;
}

}  // namespace detail

/**
 * @brief Integrates a collapsing chain until t_final, until fewer than min_components
 *        remain, or until max_collapses collapses were recorded.
 *
 * `r0` holds un-squared initial values. Flags are forced on every component from 0 up to
 * the last one whose macro value is non-finite or non-positive, so an overshoot of the
 * top is always re-integrated by the Euler path.
 */
[[nodiscard]] inline CollapseRun run_collapse(const SystemFactory& factory, std::vector<double> r0, double t0,
                                              const CollapseConfig& cfg) {
  cfg.multirate.validate();
  require(cfg.min_components >= 1, "min_components must be at least 1");
  CollapseRun run;
  const auto n0 = static_cast<Index>(r0.size());
  run.samples.push_back({t0, r0});
  run.sample_offset.push_back(0);
  run.t_end = t0;
  if (n0 < cfg.min_components || n0 == 0) return run;
  require(r0[0] > 0.0, "initial top value must be positive");

  std::vector<double> y0 = r0;
  y0[0] *= y0[0];
  OdeSystem sys = factory(n0);
  Index removed = 0;
  detail::CollapseScratch scratch;

  MultirateHooks hooks;
  hooks.force_flags = [](double, std::span<const double>, const StepOutcome& step, std::vector<bool>& flags) {
    Index last = -1;
    for (std::size_t i = 0; i < step.y_next.size(); ++i) {
      if (!std::isfinite(step.y_next[i]) || step.y_next[i] <= 0.0) last = static_cast<Index>(i);
    }
    for (Index i = 0; i <= last; ++i) flags[static_cast<std::size_t>(i)] = true;
  };
  hooks.integrate_block = [&](const BlockTask& task) {
    if (task.block.range.begin == 0) return detail::integrate_top_block(task, factory, scratch);
    return micro_integrate(task);
  };
  hooks.on_accept = [&](State& state, OdeSystem& system) {
    const Index c = scratch.pending;
    if (c > 0) {
      require(static_cast<Index>(state.y.size()) >= c, "more collapses than components");
      state.y.erase(state.y.begin(), state.y.begin() + c);
      if (!scratch.new_top_squared && !state.y.empty()) state.y[0] *= state.y[0];
      for (double tau : scratch.taus) {
        if (!run.events.empty() && !(tau > run.events.back().tau)) {
          throw IntegrationAbort("collapse times out of order", state.t, state.y);
        }
        run.events.push_back({removed + 1, tau});
        ++removed;
      }
      system = factory(system.n_components - c);
      scratch = {};
    }
    if (cfg.check_ordering && !state.y.empty()) {
      bool ok = state.y[0] > 0.0 && std::isfinite(state.y[0]);
      double prev = std::sqrt(std::max(0.0, state.y[0]));
      for (std::size_t i = 1; ok && i < state.y.size(); ++i) {
        ok = std::isfinite(state.y[i]) && state.y[i] > prev;
        prev = state.y[i];
      }
      if (!ok) throw IntegrationAbort("component ordering violated", state.t, state.y);
    }
    run.samples.push_back(detail::unsquared(state));
    run.sample_offset.push_back(removed);
    run.t_end = state.t;
    if (static_cast<Index>(state.y.size()) < cfg.min_components) return HookAction::Stop;
    if (cfg.max_collapses >= 0 && static_cast<Index>(run.events.size()) >= cfg.max_collapses) return HookAction::Stop;
    return HookAction::Continue;
  };

  IntegrateOptions opts;
  opts.keep_samples = false;
  Trajectory traj = integrate_adaptive(sys, std::move(y0), t0, cfg.t_final, cfg.multirate, hooks, opts);
  run.records = std::move(traj.records);
  return run;
}

}  // namespace mrode
