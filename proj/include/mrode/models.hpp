/**
 * @file models.hpp
 * @brief Test systems with known solutions: collapsing chains, upwind advection on a
 *        periodic grid, and the periodic biharmonic lattice.
 */
#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrode/collapse.hpp"
#include "mrode/core.hpp"
#include "mrode/multirate.hpp"

namespace mrode {

// ---------------------------------------------------------------------------------------
// Collapse models: r_i' = -1/r_i or r_i' = -1/r_i^2 with r_i(0) = i
// ---------------------------------------------------------------------------------------

enum class CollapseVariant { InverseR, InverseRSquared };

[[nodiscard]] inline CollapseVariant parse_collapse_variant(std::string_view s) {
  if (s == "inv-r") return CollapseVariant::InverseR;
  if (s == "inv-r2" || s == "inv-r-squared") return CollapseVariant::InverseRSquared;
  throw ConfigError("unknown model variant '" + std::string(s) + "' (expected inv-r or inv-r2)");
}

[[nodiscard]] inline std::string_view to_string(CollapseVariant v) {
  return v == CollapseVariant::InverseR ? "inv-r" : "inv-r2";
}

/// dr/dt for every component.
[[nodiscard]] inline std::vector<double> collapse_model_rhs(CollapseVariant v, std::span<const double> r) {
  std::vector<double> out;
  out.reserve(r.size());
  for (double x : r) {
    require(x > 0.0, "collapse_model_rhs: r must be positive");
    out.push_back(v == CollapseVariant::InverseR ? -1.0 / x : -1.0 / (x * x));
  }
  return out;
}

/// Exact collapse time of component i (1-based): i^2/2 or i^3/3.
[[nodiscard]] inline double collapse_model_exact(CollapseVariant v, Index i) {
  require(i >= 1, "collapse_model_exact: index is 1-based");
  const auto x = static_cast<double>(i);
  return v == CollapseVariant::InverseR ? x * x / 2.0 : x * x * x / 3.0;
}

/// Uncoupled chain of n components with component 0 stored squared.
[[nodiscard]] inline OdeSystem collapse_model_system(CollapseVariant v, Index n) {
  OdeSystem sys;
  sys.n_components = n;
  sys.bandwidth = 0;
  sys.rhs = [v](double, const LocalState& y, IndexRange w, std::span<double> out) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    for (Index i = w.begin; i < w.end; ++i) {
      const double x = y[i];
      double& d = out[static_cast<std::size_t>(i - w.begin)];
      if (i == 0) {
        // u = r^2: u' = 2 r r'
        const double r = x > 0.0 ? std::sqrt(x) : nan;
        d = v == CollapseVariant::InverseR ? (x > 0.0 ? -2.0 : nan) : -2.0 / r;
      } else {
        d = x > 0.0 ? (v == CollapseVariant::InverseR ? -1.0 / x : -1.0 / (x * x)) : nan;
      }
    }
  };
  return sys;
}

/// Multirate run of the first n components until all have collapsed (or t_final).
[[nodiscard]] inline CollapseRun run_collapse_model(CollapseVariant v, Index n, const MultirateConfig& config,
                                                    double t_final = std::numeric_limits<double>::quiet_NaN()) {
  require(n >= 1, "run_collapse_model: need at least one component");
  std::vector<double> r0;
  for (Index i = 1; i <= n; ++i) r0.push_back(static_cast<double>(i));
  CollapseConfig cfg;
  cfg.multirate = config;
  cfg.t_final = std::isnan(t_final) ? 1.01 * collapse_model_exact(v, n) : t_final;
  cfg.min_components = 1;
  return run_collapse([v](Index m) { return collapse_model_system(v, m); }, std::move(r0), 0.0, cfg);
}

// ---------------------------------------------------------------------------------------
// Upwind advection u_t + a u_x = 0 on a periodic grid
// ---------------------------------------------------------------------------------------

struct AdvectionSystem {
  Index n = 401;
  double half_width = 25.0;
  double a = 1.0;

  /// Grid x_j = -L + j h with h = 2L/(n-1), both end points included.
  [[nodiscard]] double h() const { return 2.0 * half_width / static_cast<double>(n - 1); }
  [[nodiscard]] std::vector<double> grid() const {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) x[static_cast<std::size_t>(j)] = -half_width + static_cast<double>(j) * h();
    return x;
  }
};

/// y_j' = -(a/h)(y_j - y_{j-1}) with wrap-around, bandwidth 1.
[[nodiscard]] inline OdeSystem advection_system(const AdvectionSystem& spec) {
  if (!(spec.a > 0.0)) throw ConfigError("advection: only a > 0 is supported");
  if (spec.n < 3) throw ConfigError("advection: need at least 3 grid points");
  if (!(spec.half_width > 0.0)) throw ConfigError("advection: half width must be positive");
  OdeSystem sys;
  sys.n_components = spec.n;
  sys.bandwidth = 1;
  sys.periodic = true;
  const double c = spec.a / spec.h();
  sys.rhs = [c](double, const LocalState& y, IndexRange w, std::span<double> out) {
    for (Index j = w.begin; j < w.end; ++j) out[static_cast<std::size_t>(j - w.begin)] = -c * (y[j] - y[j - 1]);
  };
  return sys;
}

namespace detail {

/// Exact solution of y' = C y for a real circulant C given by its eigenvalues, via the
/// discrete Fourier transform (plain O(n^2) sums; n is small here).
inline std::vector<double> circulant_evolve(std::span<const double> y0,
                                            const std::vector<std::complex<double>>& eigen, double t) {
  const auto n = y0.size();
  std::vector<std::complex<double>> tw(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double ang = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
    tw[m] = {std::cos(ang), std::sin(ang)};
  }
  std::vector<std::complex<double>> hat(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += y0[j] * std::conj(tw[(j * k) % n]);
    hat[k] = s * std::exp(eigen[k] * t);
  }
  std::vector<double> y(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::complex<double> s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += hat[k] * tw[(j * k) % n];
    y[j] = s.real() / static_cast<double>(n);
  }
  return y;
}

}  // namespace detail

/// Exact solution of the semi-discrete advection system at time t.
[[nodiscard]] inline std::vector<double> advection_exact(const AdvectionSystem& spec, std::span<const double> y0,
                                                         double t) {
  require(static_cast<Index>(y0.size()) == spec.n, "advection_exact: wrong state length");
  const auto n = y0.size();
  const double c = spec.a / spec.h();
  std::vector<std::complex<double>> eig(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ang = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    eig[k] = -c * (1.0 - std::complex<double>(std::cos(ang), -std::sin(ang)));
  }
  return detail::circulant_evolve(y0, eig, t);
}

// ---------------------------------------------------------------------------------------
// Periodic biharmonic lattice v_n' = -(3 eps / 2 delta^4) (v_{n-2} - 4v_{n-1} + 6v_n - 4v_{n+1} + v_{n+2})
// ---------------------------------------------------------------------------------------

struct BiharmonicSystem {
  Index n = 64;
  double eps = 1e-3;
  double delta = 0.5;

  [[nodiscard]] double coefficient() const { return 1.5 * eps / std::pow(delta, 4); }
};

[[nodiscard]] inline OdeSystem biharmonic_system(const BiharmonicSystem& spec) {
  if (!(spec.delta > 0.0)) throw ConfigError("biharmonic: delta must be positive");
  if (spec.n < 5) throw ConfigError("biharmonic: need at least 5 components");
  OdeSystem sys;
  sys.n_components = spec.n;
  sys.bandwidth = 2;
  sys.periodic = true;
  const double c = spec.coefficient();
  sys.rhs = [c](double, const LocalState& v, IndexRange w, std::span<double> out) {
    for (Index j = w.begin; j < w.end; ++j) {
      out[static_cast<std::size_t>(j - w.begin)] =
          -c * (v[j - 2] - 4.0 * v[j - 1] + 6.0 * v[j] - 4.0 * v[j + 1] + v[j + 2]);
    }
  };
  return sys;
}

/// sigma(k) = (24 eps / delta^4) sin^4(k/2)
[[nodiscard]] inline double biharmonic_dispersion(double k, double eps, double delta) {
  require(delta > 0.0, "biharmonic_dispersion: delta must be positive");
  const double s = std::sin(0.5 * k);
  return 24.0 * eps / std::pow(delta, 4) * s * s * s * s;
}

/// Exact periodic solution from arbitrary initial data.
[[nodiscard]] inline std::vector<double> biharmonic_exact(const BiharmonicSystem& spec, std::span<const double> v0,
                                                          double t) {
  require(static_cast<Index>(v0.size()) == spec.n, "biharmonic_exact: wrong state length");
  const auto n = v0.size();
  std::vector<std::complex<double>> eig(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double wave = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    eig[k] = -biharmonic_dispersion(wave, spec.eps, spec.delta);
  }
  return detail::circulant_evolve(v0, eig, t);
}

// ---------------------------------------------------------------------------------------
// Convergence fits
// ---------------------------------------------------------------------------------------

/// Least-squares slope of log(error) against log(dt).
[[nodiscard]] inline double convergence_slope(std::span<const double> dts, std::span<const double> errors) {
  require(dts.size() == errors.size(), "convergence_slope: length mismatch");
  if (dts.size() < 3) throw ContractViolation("convergence_slope: need at least 3 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const auto m = static_cast<double>(dts.size());
  for (std::size_t i = 0; i < dts.size(); ++i) {
    require(dts[i] > 0.0 && errors[i] > 0.0, "convergence_slope: values must be positive");
    const double x = std::log(dts[i]), y = std::log(errors[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = m * sxx - sx * sx;
  require(den > 0.0, "convergence_slope: step sizes must differ");
  return (m * sxy - sx * sy) / den;
}

}  // namespace mrode
