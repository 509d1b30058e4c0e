/**
 * @file core.hpp
 * @brief Locally coupled ODE systems, windowed right-hand-side evaluation and tolerances.
 *
 * Components are stored 0-based. A system of bandwidth b has rhs_i depending only on
 * y_j with |i - j| <= b (indices taken modulo n for periodic systems). Windows are
 * half-open ranges [begin, end); for periodic systems a window may extend past n and
 * its indices are reduced modulo n when touching the global state.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mrode {

using Index = std::ptrdiff_t;

/** @brief A precondition of an operation was violated by the caller. */
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/** @brief Invalid configuration value (bad tolerance, unknown identifier, ...). */
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/** @brief Integration gave up; carries the last good time and state. */
class IntegrationAbort : public std::runtime_error {
 public:
  IntegrationAbort(const std::string& what, double t, std::vector<double> y)
      : std::runtime_error(what), t_(t), y_(std::move(y)) {}

  [[nodiscard]] double time() const noexcept { return t_; }
  [[nodiscard]] const std::vector<double>& state() const noexcept { return y_; }

 private:
  double t_;
  std::vector<double> y_;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

/** @brief Half-open component range [begin, end). */
struct IndexRange {
  Index begin = 0;
  Index end = 0;

  [[nodiscard]] constexpr Index size() const noexcept { return end - begin; }
  [[nodiscard]] constexpr bool empty() const noexcept { return end <= begin; }
  [[nodiscard]] constexpr bool contains(Index i) const noexcept { return i >= begin && i < end; }
  friend constexpr bool operator==(const IndexRange&, const IndexRange&) = default;
};

/**
 * @brief Read-only view of a contiguous slice of state values addressed by system index.
 *
 * values[0] holds component `offset`. Periodic systems may use unwrapped indices
 * (negative or >= n); the view simply stores whatever the caller assembled there.
 */
class LocalState {
 public:
  LocalState(Index offset, std::span<const double> values) : offset_(offset), values_(values) {}

  [[nodiscard]] double operator[](Index i) const { return values_[static_cast<std::size_t>(i - offset_)]; }
  [[nodiscard]] Index first() const noexcept { return offset_; }
  [[nodiscard]] Index last() const noexcept { return offset_ + static_cast<Index>(values_.size()); }

 private:
  Index offset_;
  std::span<const double> values_;
};

/// Writes derivatives for exactly the components of `window` into `dydt` (size window.size()).
/// `y` covers the window widened by the bandwidth (clipped at the ends of non-periodic systems).
using RhsFn = std::function<void(double t, const LocalState& y, IndexRange window, std::span<double> dydt)>;

/** @brief Banded ODE system y' = F(t, y). */
struct OdeSystem {
  Index n_components = 0;
  Index bandwidth = 0;
  bool periodic = false;
  RhsFn rhs;

  [[nodiscard]] IndexRange full() const noexcept { return {0, n_components}; }

  /// Storage index of a possibly unwrapped component index.
  [[nodiscard]] Index wrap(Index i) const noexcept {
    if (!periodic) return i;
    const Index r = i % n_components;
    return r < 0 ? r + n_components : r;
  }
};

struct State {
  double t = 0.0;
  std::vector<double> y;
};

/** @brief Mixed absolute/relative error tolerance. */
struct ToleranceSpec {
  double rtol = 1e-6;
  double atol = 1e-8;

  void validate() const {
    if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("tolerances must be positive");
  }
};

/// tol_i = atol + rtol * |y_i|
[[nodiscard]] inline double component_tolerance(double y_i, const ToleranceSpec& spec) noexcept {
  return spec.atol + spec.rtol * std::abs(y_i);
}

/// Values of the components bordering a window: left holds [begin - left.size(), begin),
/// right holds [end, end + right.size()).
struct Halo {
  std::vector<double> left;
  std::vector<double> right;
};

/// Supplies halo values at a given time (interpolated halos vary inside a step).
using HaloProvider = std::function<void(double t, Halo& out)>;

/// Number of halo values a window needs on each side. A periodic window covering
/// the whole ring is closed on itself and needs none.
[[nodiscard]] inline std::pair<Index, Index> halo_extent(const OdeSystem& sys, IndexRange window) {
  const Index b = sys.bandwidth;
  if (sys.periodic) {
    if (window.size() >= sys.n_components) return {0, 0};
    return {b, b};
  }
  return {std::min(b, window.begin), std::min(b, sys.n_components - window.end)};
}

inline void validate_window(const OdeSystem& sys, IndexRange window) {
  require(window.begin <= window.end, "window: begin after end");
  if (sys.periodic) {
    require(window.begin >= 0 && window.begin < std::max<Index>(sys.n_components, 1), "window: begin out of range");
    require(window.size() <= sys.n_components, "window: longer than the ring");
  } else {
    require(window.begin >= 0 && window.end <= sys.n_components, "window: outside [0, n)");
  }
}

namespace detail {

/// Lays out [left halo | window values | right halo] in `buf` and returns a view over it.
inline LocalState assemble_local(const OdeSystem& sys, IndexRange window, std::span<const double> values,
                                 const Halo& halo, std::vector<double>& buf) {
  const auto [need_left, need_right] = halo_extent(sys, window);
  if (static_cast<Index>(halo.left.size()) != need_left || static_cast<Index>(halo.right.size()) != need_right) {
    throw ContractViolation("halo does not match the window's coupling extent");
  }
  require(static_cast<Index>(values.size()) == window.size(), "window values have the wrong length");
  const bool closed_ring = sys.periodic && window.size() >= sys.n_components && sys.n_components > 0;
  const Index pad = closed_ring ? sys.bandwidth : 0;
  buf.clear();
  buf.reserve(values.size() + halo.left.size() + halo.right.size() + 2 * static_cast<std::size_t>(pad));
  if (closed_ring) {
    for (Index j = 0; j < pad; ++j) buf.push_back(values[static_cast<std::size_t>(sys.wrap(window.size() - pad + j))]);
  }
  buf.insert(buf.end(), halo.left.begin(), halo.left.end());
  buf.insert(buf.end(), values.begin(), values.end());
  buf.insert(buf.end(), halo.right.begin(), halo.right.end());
  if (closed_ring) {
    for (Index j = 0; j < pad; ++j) buf.push_back(values[static_cast<std::size_t>(sys.wrap(j))]);
  }
  return LocalState(window.begin - need_left - pad, buf);
}

}  // namespace detail

/// Reads the halo of `window` out of a full state vector.
[[nodiscard]] inline Halo halo_from_state(const OdeSystem& sys, std::span<const double> y, IndexRange window) {
  const auto [l, r] = halo_extent(sys, window);
  Halo h;
  for (Index j = window.begin - l; j < window.begin; ++j) h.left.push_back(y[static_cast<std::size_t>(sys.wrap(j))]);
  for (Index j = window.end; j < window.end + r; ++j) h.right.push_back(y[static_cast<std::size_t>(sys.wrap(j))]);
  return h;
}

/// Copies the window's values out of a full state vector.
[[nodiscard]] inline std::vector<double> window_values(const OdeSystem& sys, std::span<const double> y,
                                                       IndexRange window) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(window.size()));
  for (Index j = window.begin; j < window.end; ++j) out.push_back(y[static_cast<std::size_t>(sys.wrap(j))]);
  return out;
}

/**
 * @brief Derivatives on `window`, given the window's values and its halo.
 *
 * Equals the corresponding slice of the full right-hand side whenever the halo agrees
 * with the full state. Throws ContractViolation when the halo is missing values.
 */
[[nodiscard]] inline std::vector<double> eval_rhs_window(const OdeSystem& sys, double t,
                                                         std::span<const double> y_window, IndexRange window,
                                                         const Halo& halo) {
  validate_window(sys, window);
  std::vector<double> buf;
  const LocalState local = detail::assemble_local(sys, window, y_window, halo, buf);
  std::vector<double> out(static_cast<std::size_t>(window.size()));
  sys.rhs(t, local, window, out);
  return out;
}

/// Full right-hand side.
[[nodiscard]] inline std::vector<double> eval_rhs(const OdeSystem& sys, double t, std::span<const double> y) {
  require(static_cast<Index>(y.size()) == sys.n_components, "state length differs from n_components");
  return eval_rhs_window(sys, t, y, sys.full(), Halo{});
}

[[nodiscard]] inline bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace mrode
