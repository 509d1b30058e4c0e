/**
 * @file multirate.hpp
 * @brief Two-phase multirate integration of locally coupled systems.
 *
 * A macro step advances every component with Cash-Karp 4(5). Components whose local
 * error exceeds 10^k times the P-th percentile of all local errors are flagged; the
 * step is accepted when the unflagged components meet their tolerances. Flagged
 * components are then grouped into contiguous blocks (widened by a buffer) and
 * re-integrated over the macro interval with small steps, taking the values of the
 * bandwidth-many neighbours on each side from the macro step's cubic dense output.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mrode/core.hpp"
#include "mrode/dense_output.hpp"
#include "mrode/integrators.hpp"

namespace mrode {

enum class PercentileRule {
  RankAscending,       // mu = ascending sort at rank max(1, round(P N / 100)); P = 10 leaves 90% above mu
  RankDescending,      // descending sort at index round(P N / 100)
};

enum class InnerMethod { CashKarp, EulerDoubling };

struct MultirateConfig {
  double k_exp = 2.0;
  double percentile_p = 50.0;
  Index buffer_w = 0;
  ToleranceSpec tolerances{};
  ControllerParams controller{};  // controller.dt_max is the macro step ceiling
  double micro_tol_factor = 1e-3;
  int micro_initial_subdiv = 50;
  double dt_initial = 0.1;
  bool multirate = true;     // false: plain single-rate Cash-Karp on all components
  bool single_block = false; // one block from the first to the last flag
  PercentileRule percentile_rule = PercentileRule::RankAscending;
  int euler_max_rejects = 60;

  void validate() const {
    tolerances.validate();
    controller.validate();
    if (!(percentile_p >= 0.0 && percentile_p <= 100.0)) throw ConfigError("percentile must lie in [0, 100]");
    if (buffer_w < 0) throw ConfigError("buffer width must be non-negative");
    if (!(micro_tol_factor > 0.0)) throw ConfigError("micro tolerance factor must be positive");
    if (tolerances.rtol * micro_tol_factor < std::numeric_limits<double>::epsilon()) {
      throw ConfigError("relative tolerance times micro tolerance factor is below machine precision");
    }
    if (micro_initial_subdiv < 1) throw ConfigError("micro_initial_subdiv must be at least 1");
    if (!(dt_initial > 0.0)) throw ConfigError("initial step must be positive");
    if (euler_max_rejects < 0) throw ConfigError("euler_max_rejects must be non-negative");
  }

  [[nodiscard]] ToleranceSpec micro_tolerances() const {
    return {tolerances.rtol * micro_tol_factor, tolerances.atol * micro_tol_factor};
  }
};

/// Contiguous set of components re-integrated together. Halo indices may be unwrapped
/// (negative or >= n) for periodic systems.
struct Block {
  IndexRange range;
  std::vector<Index> left_halo;
  std::vector<Index> right_halo;
};

struct FlagReport {
  std::vector<bool> flags;
  double mu = 0.0;
  std::vector<Block> blocks;
};

struct MacroStepRecord {
  double t_n = 0.0;
  double dt = 0.0;
  bool accepted = false;
  double error_ratio = 0.0;  // M over unflagged components
  Index flagged_count = 0;
  Index n_components = 0;
  std::vector<std::int64_t> micro_steps;  // per block, in block order

  [[nodiscard]] std::int64_t total_micro_steps() const {
    std::int64_t s = 0;
    for (auto m : micro_steps) s += m;
    return s;
  }
};

// ---------------------------------------------------------------------------------------
// Flagging
// ---------------------------------------------------------------------------------------

/// P-th percentile of the local errors. Non-finite entries sort as +infinity.
[[nodiscard]] inline double lte_percentile(std::span<const double> errors, double p,
                                           PercentileRule rule = PercentileRule::RankAscending) {
  require(!errors.empty(), "lte_percentile: no errors");
  require(p >= 0.0 && p <= 100.0, "lte_percentile: P outside [0, 100]");
  std::vector<double> sorted;
  sorted.reserve(errors.size());
  for (double e : errors) sorted.push_back(std::isfinite(e) ? e : std::numeric_limits<double>::infinity());
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::max(1.0, std::round(p / 100.0 * n)));
  rank = std::min(rank, sorted.size());
  if (rule == PercentileRule::RankAscending) {
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
  } else {
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end(),
                     std::greater<>());
  }
  return sorted[rank - 1];
}

/// flags_i = errors_i > 10^k * mu. Non-finite errors are always flagged.
[[nodiscard]] inline std::vector<bool> flag_stiff(std::span<const double> errors, double mu, double k_exp) {
  require(mu >= 0.0, "flag_stiff: negative percentile");
  const double threshold = std::pow(10.0, k_exp) * mu;
  std::vector<bool> flags(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i) flags[i] = !std::isfinite(errors[i]) || errors[i] > threshold;
  return flags;
}

namespace detail {

inline void attach_halos(Block& blk, Index bandwidth, Index n, bool periodic) {
  Index left = 0, right = 0;
  if (periodic) {
    if (blk.range.size() < n) left = right = bandwidth;
  } else {
    left = std::min(bandwidth, blk.range.begin);
    right = std::min(bandwidth, n - blk.range.end);
  }
  for (Index j = blk.range.begin - left; j < blk.range.begin; ++j) blk.left_halo.push_back(j);
  for (Index j = blk.range.end; j < blk.range.end + right; ++j) blk.right_halo.push_back(j);
}

}  // namespace detail

/**
 * @brief Groups flagged components into disjoint blocks with their halos.
 *
 * Each maximal run of flags is widened by `buffer_w` on both sides (clamped for
 * non-periodic systems), and runs separated by at most 2*bandwidth unflagged components
 * are merged, so every halo component is itself left alone. A periodic block that would
 * wrap onto its own halo becomes the whole ring.
 */
[[nodiscard]] inline std::vector<Block> build_blocks(const std::vector<bool>& flags, Index bandwidth, Index buffer_w,
                                                     Index n, bool periodic = false, bool single_block = false) {
  require(static_cast<Index>(flags.size()) == n, "build_blocks: flag count differs from n");
  std::vector<Block> blocks;
  if (n == 0 || std::none_of(flags.begin(), flags.end(), [](bool f) { return f; })) return blocks;

  std::vector<bool> cover(static_cast<std::size_t>(n), false);
  auto mark = [&](Index j) { cover[static_cast<std::size_t>(periodic ? ((j % n) + n) % n : j)] = true; };
  if (single_block) {
    const auto first = static_cast<Index>(std::find(flags.begin(), flags.end(), true) - flags.begin());
    const auto last = n - 1 - static_cast<Index>(std::find(flags.rbegin(), flags.rend(), true) - flags.rbegin());
    for (Index j = first; j <= last; ++j) cover[static_cast<std::size_t>(j)] = true;
  } else {
    for (Index j = 0; j < n; ++j) cover[static_cast<std::size_t>(j)] = flags[static_cast<std::size_t>(j)];
  }
  // widen every covered run by buffer_w
  const std::vector<bool> base = cover;
  for (Index j = 0; j < n; ++j) {
    if (!base[static_cast<std::size_t>(j)]) continue;
    for (Index d = 1; d <= buffer_w; ++d) {
      if (periodic) {
        mark(j - d);
        mark(j + d);
      } else {
        if (j - d >= 0) mark(j - d);
        if (j + d < n) mark(j + d);
      }
    }
  }
  const Index max_gap = 2 * bandwidth;
  if (!periodic) {
    const auto first = static_cast<Index>(std::find(cover.begin(), cover.end(), true) - cover.begin());
    Index j = first;
    while (j < n) {
      if (cover[static_cast<std::size_t>(j)]) {
        ++j;
        continue;
      }
      Index e = j;
      while (e < n && !cover[static_cast<std::size_t>(e)]) ++e;
      if (e < n && e - j <= max_gap) std::fill(cover.begin() + j, cover.begin() + e, true);
      j = e;
    }
    for (Index a = 0; a < n;) {
      if (!cover[static_cast<std::size_t>(a)]) {
        ++a;
        continue;
      }
      Index e = a;
      while (e < n && cover[static_cast<std::size_t>(e)]) ++e;
      Block blk{{a, e}, {}, {}};
      detail::attach_halos(blk, bandwidth, n, false);
      blocks.push_back(std::move(blk));
      a = e;
    }
    return blocks;
  }

  // periodic: close small gaps around the ring, then read runs starting after a gap
  auto at = [&](Index j) -> std::vector<bool>::reference { return cover[static_cast<std::size_t>(((j % n) + n) % n)]; };
  const auto gap_start = std::find(cover.begin(), cover.end(), false);
  if (gap_start == cover.end()) {
    Block blk{{0, n}, {}, {}};
    blocks.push_back(std::move(blk));
    return blocks;
  }
  const auto origin = static_cast<Index>(gap_start - cover.begin());
  // rotate so position 0 of the walk is the start of a gap
  Index walk = origin;
  while (at(walk - 1) == false && walk > origin - n) --walk;  // back up to the gap's true start
  const Index start = walk;
  for (Index j = start; j < start + n;) {
    if (at(j)) {
      ++j;
      continue;
    }
    Index e = j;
    while (e < start + n && !at(e)) ++e;
    // gap [j, e): close it when bounded by covered components on both sides
    const bool bounded = at(j - 1) && at(e);
    if (bounded && e - j <= max_gap) {
      for (Index k = j; k < e; ++k) at(k) = true;
    }
    j = e;
  }
  if (std::all_of(cover.begin(), cover.end(), [](bool c) { return c; })) {
    Block blk{{0, n}, {}, {}};
    blocks.push_back(std::move(blk));
    return blocks;
  }
  Index s0 = 0;
  while (at(s0)) ++s0;  // an uncovered position; runs are read starting after it
  for (Index j = s0; j < s0 + n;) {
    if (!at(j)) {
      ++j;
      continue;
    }
    Index e = j;
    while (e < s0 + n && at(e)) ++e;
    const Index b = ((j % n) + n) % n;
    Block blk{{b, b + (e - j)}, {}, {}};
    detail::attach_halos(blk, bandwidth, n, true);
    blocks.push_back(std::move(blk));
    j = e;
  }
  std::sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) { return a.range.begin < b.range.begin; });
  return blocks;
}

// ---------------------------------------------------------------------------------------
// Micro integration
// ---------------------------------------------------------------------------------------

/// Everything a block integrator needs to advance one block over [t0, t1].
struct BlockTask {
  const OdeSystem& system;
  const Block& block;
  double t0;
  double t1;
  std::span<const double> y0;  // full state at t0
  HaloProvider halo;           // halo values at any t in [t0, t1]
  ToleranceSpec tolerances;    // micro tolerances
  const MultirateConfig& config;
  InnerMethod method = InnerMethod::CashKarp;
};

struct BlockResult {
  std::vector<double> values;  // block components at t1
  std::int64_t micro_steps = 0;
};

/// Halo provider built from the macro step's cubic dense output.
[[nodiscard]] inline HaloProvider interpolated_halo(const OdeSystem& sys, const Block& block, const StepOutcome& step,
                                                    std::span<const double> y_n, double t_n, double dt) {
  std::vector<StageInterpolant> left, right;
  for (Index j : block.left_halo) {
    const auto i = static_cast<std::size_t>(sys.wrap(j));
    left.push_back(make_ck_interpolant(step, i, y_n[i], dt));
  }
  for (Index j : block.right_halo) {
    const auto i = static_cast<std::size_t>(sys.wrap(j));
    right.push_back(make_ck_interpolant(step, i, y_n[i], dt));
  }
  return [left = std::move(left), right = std::move(right), t_n, dt](double t, Halo& out) {
    const double chi = (t - t_n) / dt;
    out.left.resize(left.size());
    out.right.resize(right.size());
    for (std::size_t i = 0; i < left.size(); ++i) out.left[i] = left[i](chi);
    for (std::size_t i = 0; i < right.size(); ++i) out.right[i] = right[i](chi);
  };
}

/**
 * @brief Advances one block from t0 to t1 with its own error control; the last step
 *        lands exactly on t1. The first micro step is (t1 - t0) / micro_initial_subdiv.
 *
 * Throws IntegrationAbort naming the block when the inner integrator gives up.
 */
[[nodiscard]] inline BlockResult micro_integrate(const BlockTask& task) {
  const auto& sys = task.system;
  const IndexRange range = task.block.range;
  require(task.t1 > task.t0, "micro_integrate: empty interval");
  require(task.tolerances.rtol > 0.0 && task.tolerances.atol > 0.0, "micro_integrate: tolerances must be positive");
  std::vector<double> y = window_values(sys, task.y0, range);
  const auto m = y.size();
  auto fail = [&](const std::string& why, double t) {
    throw IntegrationAbort("micro-integration of block [" + std::to_string(range.begin) + ", " +
                               std::to_string(range.end) + ") failed: " + why,
                           t, y);
  };

  ControllerParams ctrl = task.config.controller;
  ctrl.dt_max = std::numeric_limits<double>::infinity();
  double t = task.t0;
  double dt = (task.t1 - task.t0) / task.config.micro_initial_subdiv;
  int rejects = 0;
  BlockResult result;
  while (t < task.t1) {
    bool last = false;
    if (t + dt >= task.t1) {
      dt = task.t1 - t;
      last = true;
    }
    if (!(dt > 0.0) || t + dt == t) fail("step size underflow", t);
    if (task.method == InnerMethod::CashKarp) {
      const StepOutcome s = ck45_step(sys, t, y, dt, range, task.halo);
      double ratio = 0.0;
      if (!s.finite) {
        ratio = std::numeric_limits<double>::infinity();
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          ratio = std::max(ratio, s.lte[i] / component_tolerance(y[i], task.tolerances));
        }
      }
      if (ratio < 1.0) {
        t = last ? task.t1 : t + dt;
        y = s.y_next;
        ++result.micro_steps;
        rejects = 0;
        dt = step_size_update(ratio, dt, ctrl, true);
      } else {
        if (++rejects > ctrl.max_rejects) fail(std::to_string(ctrl.max_rejects) + " failed attempts", t);
        dt = std::isfinite(ratio) ? step_size_update(ratio, dt, ctrl, false) : dt * ctrl.shrink_cap;
      }
    } else {
      const EulerOutcome e = euler_double_step(sys, t, y, dt, range, task.halo, task.tolerances);
      if (e.accepted) {
        t = last ? task.t1 : t + dt;
        y = e.y_next;
        ++result.micro_steps;
        rejects = 0;
      } else if (++rejects > task.config.euler_max_rejects) {
        fail(std::to_string(task.config.euler_max_rejects) + " failed attempts", t);
      }
      dt = e.dt_new;
    }
  }
  result.values = std::move(y);
  return result;
}

// ---------------------------------------------------------------------------------------
// Macro stepping
// ---------------------------------------------------------------------------------------

enum class HookAction { Continue, Stop };

struct MultirateHooks {
  /// Adds flags after the percentile test (e.g. components that left their domain).
  std::function<void(double t, std::span<const double> y_n, const StepOutcome& step, std::vector<bool>& flags)>
      force_flags;
  /// Chooses the inner method per block; Cash-Karp when unset.
  std::function<InnerMethod(const OdeSystem&, const Block&)> inner_method;
  /// Replaces micro_integrate for blocks it is given (after inner_method was applied).
  std::function<BlockResult(const BlockTask&)> integrate_block;
  /// Runs after every accepted macro step; may replace the state and the system.
  std::function<HookAction(State& state, OdeSystem& system)> on_accept;
};

struct MacroStepResult {
  bool accepted = false;
  State state;  // advanced state when accepted, the input state otherwise
  FlagReport report;
  MacroStepRecord record;
  double dt_next = 0.0;
};

/**
 * @brief One macro step of size dt from `state`.
 *
 * M = max(lte_i / tol_i) over unflagged components decides acceptance (M < 1). Accepted
 * steps re-integrate every block and overwrite its components; rejected steps leave the
 * state unchanged. dt_next follows step_size_update in both cases.
 */
[[nodiscard]] inline MacroStepResult macro_step(const OdeSystem& sys, const State& state, double dt,
                                                const MultirateConfig& config, const MultirateHooks& hooks = {}) {
  require(dt > 0.0, "macro_step: dt must be positive");
  const auto n = static_cast<std::size_t>(sys.n_components);
  require(state.y.size() == n, "macro_step: state length differs from n_components");

  const StepOutcome step = ck45_step(sys, state.t, state.y, dt);
  MacroStepResult out;
  out.record.t_n = state.t;
  out.record.dt = dt;
  out.record.n_components = sys.n_components;

  std::vector<bool> flags(n, false);
  if (config.multirate && n > 0) {
    std::vector<double> errors = step.lte;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(step.y_next[i])) errors[i] = std::numeric_limits<double>::infinity();
    }
    out.report.mu = lte_percentile(errors, config.percentile_p, config.percentile_rule);
    if (std::isfinite(out.report.mu)) {
      flags = flag_stiff(errors, out.report.mu, config.k_exp);
    } else {
      for (std::size_t i = 0; i < n; ++i) flags[i] = !std::isfinite(errors[i]);
    }
    if (hooks.force_flags) hooks.force_flags(state.t, state.y, step, flags);
  }

  double ratio = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (flags[i]) continue;
    const double r = step.lte[i] / component_tolerance(state.y[i], config.tolerances);
    if (!std::isfinite(r) || !std::isfinite(step.y_next[i])) {
      ratio = std::numeric_limits<double>::infinity();
      break;
    }
    ratio = std::max(ratio, r);
  }
  out.record.error_ratio = ratio;
  out.record.flagged_count = static_cast<Index>(std::count(flags.begin(), flags.end(), true));
  out.accepted = ratio < 1.0;
  out.record.accepted = out.accepted;
  out.dt_next = std::isfinite(ratio) ? step_size_update(ratio, dt, config.controller, out.accepted)
                                     : config.controller.safety * dt * config.controller.shrink_cap;

  if (!out.accepted) {
    out.state = state;
    out.report.flags = std::move(flags);
    return out;
  }

  out.report.blocks = build_blocks(flags, sys.bandwidth, config.buffer_w, sys.n_components, sys.periodic,
                                   config.single_block);
  out.state.t = state.t + dt;
  out.state.y = step.y_next;
  const ToleranceSpec micro_tol = config.micro_tolerances();
  for (const Block& blk : out.report.blocks) {
    BlockTask task{sys,
                   blk,
                   state.t,
                   state.t + dt,
                   state.y,
                   interpolated_halo(sys, blk, step, state.y, state.t, dt),
                   micro_tol,
                   config,
                   hooks.inner_method ? hooks.inner_method(sys, blk) : InnerMethod::CashKarp};
    BlockResult res = hooks.integrate_block ? hooks.integrate_block(task) : micro_integrate(task);
    require(static_cast<Index>(res.values.size()) == blk.range.size(), "block integrator returned wrong length");
    for (Index j = blk.range.begin; j < blk.range.end; ++j) {
      out.state.y[static_cast<std::size_t>(sys.wrap(j))] = res.values[static_cast<std::size_t>(j - blk.range.begin)];
    }
    out.record.micro_steps.push_back(res.micro_steps);
  }
  out.report.flags = std::move(flags);
  return out;
}

struct Trajectory {
  std::vector<State> samples;            // initial state and every accepted macro step
  std::vector<MacroStepRecord> records;  // every attempted macro step
  State final_state;
  bool stopped_by_hook = false;

  [[nodiscard]] std::int64_t accepted_steps() const {
    return std::count_if(records.begin(), records.end(), [](const auto& r) { return r.accepted; });
  }
  [[nodiscard]] std::int64_t total_micro_steps() const {
    std::int64_t s = 0;
    for (const auto& r : records) s += r.total_micro_steps();
    return s;
  }
};

struct IntegrateOptions {
  bool keep_samples = true;
};

/**
 * @brief Runs macro steps from t0 to t_final, clipping the last one onto t_final.
 *
 * Throws IntegrationAbort (with the last accepted state) after more than
 * controller.max_rejects consecutive rejections.
 */
[[nodiscard]] inline Trajectory integrate_adaptive(OdeSystem sys, std::vector<double> y0, double t0, double t_final,
                                                   const MultirateConfig& config, const MultirateHooks& hooks = {},
                                                   const IntegrateOptions& options = {}) {
  config.validate();
  require(t_final > t0, "integrate_adaptive: t_final must exceed t0");
  require(static_cast<Index>(y0.size()) == sys.n_components, "integrate_adaptive: state length differs");
  Trajectory traj;
  State state{t0, std::move(y0)};
  traj.samples.push_back(state);
  traj.final_state = state;
  if (sys.n_components == 0) return traj;

  double dt = std::min({config.dt_initial, config.controller.dt_max, t_final - t0});
  int rejects = 0;
  while (state.t < t_final) {
    bool clipped = false;
    if (state.t + dt >= t_final) {
      dt = t_final - state.t;
      clipped = true;
    }
    if (!(dt > 0.0) || state.t + dt == state.t) {
      throw IntegrationAbort("macro step size underflow", state.t, state.y);
    }
    MacroStepResult res = macro_step(sys, state, dt, config, hooks);
    traj.records.push_back(res.record);
    if (!res.accepted) {
      if (++rejects > config.controller.max_rejects) {
        throw IntegrationAbort(std::to_string(config.controller.max_rejects) + " failed attempts", state.t, state.y);
      }
      dt = res.dt_next;
      continue;
    }
    rejects = 0;
    state = std::move(res.state);
    if (clipped) state.t = t_final;
    dt = res.dt_next;
    HookAction action = HookAction::Continue;
    if (hooks.on_accept) action = hooks.on_accept(state, sys);
    if (options.keep_samples) traj.samples.push_back(state);
    if (action == HookAction::Stop || sys.n_components == 0) {
      traj.stopped_by_hook = action == HookAction::Stop;
      break;
    }
  }
  traj.final_state = std::move(state);
  return traj;
}

}  // namespace mrode
