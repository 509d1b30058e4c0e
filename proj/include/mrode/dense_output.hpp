/**
 * @file dense_output.hpp
 * @brief Cubic dense output from retained Runge-Kutta stages, and exact-rational
 *        derivation of stage interpolants.
 *
 * An interpolant of order m reproduces the Taylor expansion of the solution up to
 * (chi*dt)^m using only the stage values k_s = dt * f(stage state). The derivation solves
 * the linear system that expresses the elementary differentials in terms of the stages;
 * it is carried out in arbitrary-precision rationals so singularity is decided exactly.
 */
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "mrode/core.hpp"
#include "mrode/integrators.hpp"

namespace mrode {

enum class InterpolantKind { Rk4Cubic, CashKarpCubic };

/**
 * @brief Cubic polynomial in chi on [0, 1] anchored at y_n.
 *
 * Holds the stages the formula needs: k1..k4 for RK4, (k1, k4, k5) in slots 0..2 for
 * Cash-Karp. The curve starts at y_n with slope k1/dt; it need not hit y_{n+1} at chi = 1.
 */
struct StageInterpolant {
  InterpolantKind kind = InterpolantKind::CashKarpCubic;
  double y_n = 0.0;
  std::array<double, 4> k{};
  double dt = 0.0;

  [[nodiscard]] double operator()(double chi) const;
};

namespace detail {
inline double checked_chi(double chi) {
  constexpr double slack = 1e-12;
  if (!(chi >= -slack && chi <= 1.0 + slack)) throw ContractViolation("interpolant: chi outside [0, 1]");
  return std::clamp(chi, 0.0, 1.0);
}
}  // namespace detail

/// y_n + chi k1 + chi^2/2 (-8/3 k1 + 25/6 k4 - 3/2 k5) + chi^3/6 (10/3 k1 - 25/3 k4 + 5 k5)
[[nodiscard]] inline double ck_cubic_eval(const StageInterpolant& p, double chi) {
  require(p.kind == InterpolantKind::CashKarpCubic, "ck_cubic_eval: wrong interpolant kind");
  chi = detail::checked_chi(chi);
  const double k1 = p.k[0], k4 = p.k[1], k5 = p.k[2];
  const double q = -8.0 / 3.0 * k1 + 25.0 / 6.0 * k4 - 1.5 * k5;
  const double c = 10.0 / 3.0 * k1 - 25.0 / 3.0 * k4 + 5.0 * k5;
  return p.y_n + chi * (k1 + chi * (0.5 * q + chi * (c / 6.0)));
}

/// y_n + chi k1 + chi^2/2 (-3k1 + 2k2 + 2k3 - k4) + 2chi^3/3 (k1 - k2 - k3 + k4)
[[nodiscard]] inline double rk4_cubic_eval(const StageInterpolant& p, double chi) {
  require(p.kind == InterpolantKind::Rk4Cubic, "rk4_cubic_eval: wrong interpolant kind");
  chi = detail::checked_chi(chi);
  const double k1 = p.k[0], k2 = p.k[1], k3 = p.k[2], k4 = p.k[3];
  const double q = -3.0 * k1 + 2.0 * k2 + 2.0 * k3 - k4;
  const double c = k1 - k2 - k3 + k4;
  return p.y_n + chi * (k1 + chi * (0.5 * q + chi * (2.0 / 3.0 * c)));
}

inline double StageInterpolant::operator()(double chi) const {
  return kind == InterpolantKind::CashKarpCubic ? ck_cubic_eval(*this, chi) : rk4_cubic_eval(*this, chi);
}

/// Cash-Karp cubic for component i of a ck45 step taken from y_n with step dt.
[[nodiscard]] inline StageInterpolant make_ck_interpolant(const StepOutcome& step, std::size_t i, double y_n,
                                                          double dt) {
  require(step.stages.size() == 6, "make_ck_interpolant: need six Cash-Karp stages");
  return {InterpolantKind::CashKarpCubic, y_n, {step.stages[0][i], step.stages[3][i], step.stages[4][i], 0.0}, dt};
}

[[nodiscard]] inline StageInterpolant make_rk4_interpolant(const StepOutcome& step, std::size_t i, double y_n,
                                                           double dt) {
  require(step.stages.size() == 4, "make_rk4_interpolant: need four RK4 stages");
  return {InterpolantKind::Rk4Cubic,
          y_n,
          {step.stages[0][i], step.stages[1][i], step.stages[2][i], step.stages[3][i]},
          dt};
}

// ---------------------------------------------------------------------------------------
// Exact derivation
// ---------------------------------------------------------------------------------------

using Rational = boost::multiprecision::cpp_rational;
using RationalMatrix = std::vector<std::vector<Rational>>;

enum class TableauId { Rk4, CashKarp45 };

[[nodiscard]] inline TableauId parse_tableau_id(const std::string& name) {
  if (name == "RK4" || name == "rk4") return TableauId::Rk4;
  if (name == "CK45" || name == "ck45") return TableauId::CashKarp45;
  throw ConfigError("unknown tableau identifier: " + name);
}

/// Elementary differentials of an autonomous scalar problem, in the column order of
/// ExpansionSystem::coeffs.
inline constexpr std::array<const char*, 7> kMonomials = {
    "f", "f'f", "f f'^2", "f^2 f''", "f f'^3", "f^2 f' f''", "f^3 f'''"};
/// Power of dt carried by each monomial column.
inline constexpr std::array<int, 7> kMonomialDegree = {1, 2, 3, 3, 4, 4, 4};

/**
 * @brief Taylor expansion of every stage in the elementary differentials, dt factored out.
 *
 * k_s = sum_j coeffs[s][j] * dt^degree(j) * monomial_j + O(dt^5).
 */
struct ExpansionSystem {
  TableauId tableau;
  RationalMatrix coeffs;  // one row per stage, seven columns
};

namespace detail {
inline Rational q(long n, long d = 1) { return Rational(n) / Rational(d); }
}  // namespace detail

[[nodiscard]] inline ExpansionSystem stage_expansion(TableauId id) {
  using detail::q;
  if (id == TableauId::Rk4) {
    return {id,
            {
                {q(1), q(0), q(0), q(0), q(0), q(0), q(0)},
                {q(1), q(1, 2), q(0), q(1, 8), q(0), q(0), q(1, 48)},
                {q(1), q(1, 2), q(2, 8), q(1, 8), q(0), q(9, 48), q(1, 48)},
                {q(1), q(1), q(1, 2), q(1, 2), q(6, 24), q(15, 24), q(4, 24)},
            }};
  }
  return {id,
          {
              {q(1), q(0), q(0), q(0), q(0), q(0), q(0)},
              {q(1), q(1, 5), q(0), q(1, 50), q(0), q(0), q(1, 750)},
              {q(1), q(3, 10), q(9, 200), q(9, 200), q(0), q(36, 2000), q(9, 2000)},
              {q(1), q(3, 5), q(9, 50), q(9, 50), q(27, 500), q(72, 500), q(18, 500)},
              {q(1), q(1), q(1, 2), q(1, 2), q(7, 60), q(40, 60), q(10, 60)},
              {q(1), q(7, 8), q(49, 128), q(49, 128), q(7 * 46, 3072), q(7 * 196, 3072), q(7 * 49, 3072)},
          }};
}

/// Coefficients of y^(m) * dt^m in the monomial columns (m = 1..4).
[[nodiscard]] inline RationalMatrix derivative_expansion() {
  using detail::q;
  return {
      {q(1), q(0), q(0), q(0), q(0), q(0), q(0)},
      {q(0), q(1), q(0), q(0), q(0), q(0), q(0)},
      {q(0), q(0), q(1), q(1), q(0), q(0), q(0)},
      {q(0), q(0), q(0), q(0), q(1), q(4), q(1)},
  };
}

/// Exact determinant by Gaussian elimination over the rationals.
[[nodiscard]] inline Rational determinant(RationalMatrix a) {
  const std::size_t n = a.size();
  Rational det = 1;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    while (p < n && a[p][c] == 0) ++p;
    if (p == n) return Rational(0);
    if (p != c) {
      std::swap(a[p], a[c]);
      det = -det;
    }
    det *= a[c][c];
    for (std::size_t r = c + 1; r < n; ++r) {
      if (a[r][c] == 0) continue;
      const Rational f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return det;
}

/// Exact inverse; nullopt when singular.
[[nodiscard]] inline std::optional<RationalMatrix> inverse(RationalMatrix a) {
  const std::size_t n = a.size();
  RationalMatrix inv(n, std::vector<Rational>(n, Rational(0)));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    while (p < n && a[p][c] == 0) ++p;
    if (p == n) return std::nullopt;
    std::swap(a[p], a[c]);
    std::swap(inv[p], inv[c]);
    const Rational piv = a[c][c];
    for (std::size_t k = 0; k < n; ++k) {
      a[c][k] /= piv;
      inv[c][k] /= piv;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c || a[r][c] == 0) continue;
      const Rational f = a[r][c];
      for (std::size_t k = 0; k < n; ++k) {
        a[r][k] -= f * a[c][k];
        inv[r][k] -= f * inv[c][k];
      }
    }
  }
  return inv;
}

/**
 * @brief Polynomial interpolant y(chi dt) = y_n + sum_m sum_s poly[m-1][s] chi^m k_{stage_s}.
 *
 * `system` is the square matrix actually solved (rows = chosen stages, columns = grouped
 * unknowns) and `solution` its inverse, kept so callers can re-substitute.
 */
struct InterpolantCoeffs {
  std::vector<int> stages;                // 1-based stage numbers
  RationalMatrix poly;                    // [order][stage]
  RationalMatrix system;
  RationalMatrix solution;
  std::vector<std::vector<std::size_t>> groups;  // monomial columns merged into each unknown
};

/**
 * @brief Derives the order-`order` stage interpolant from the given stages, or nullopt
 *        (UNSOLVABLE) when the resulting square system is singular or not square.
 *
 * Monomial columns of equal dt-degree that are proportional over the chosen stages
 * are merged into one unknown (they can only be recovered as that combination); every
 * derivative y^(m) must then be expressible in the merged unknowns.
 */
[[nodiscard]] inline std::optional<InterpolantCoeffs> derive_interpolant_coeffs(TableauId id, int order,
                                                                                std::span<const int> stages) {
  if (order < 1 || order > 4) throw ContractViolation("derive_interpolant_coeffs: order must lie in 1..4");
  const ExpansionSystem exp = stage_expansion(id);
  for (int s : stages) {
    if (s < 1 || s > static_cast<int>(exp.coeffs.size())) throw ContractViolation("stage number out of range");
  }
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < kMonomials.size(); ++j) {
    if (kMonomialDegree[j] <= order) cols.push_back(j);
  }
  auto column = [&](std::size_t j) {
    std::vector<Rational> v;
    for (int s : stages) v.push_back(exp.coeffs[static_cast<std::size_t>(s - 1)][j]);
    return v;
  };
  // scale[j]: column j == scale[j] * column(group representative)
  std::vector<std::vector<std::size_t>> groups;
  std::vector<Rational> scale(kMonomials.size(), Rational(0));
  for (std::size_t j : cols) {
    const auto cj = column(j);
    bool placed = false;
    for (auto& g : groups) {
      const std::size_t rep = g.front();
      if (kMonomialDegree[rep] != kMonomialDegree[j]) continue;
      const auto cr = column(rep);
      std::optional<Rational> ratio;
      bool proportional = true;
      for (std::size_t r = 0; r < cr.size() && proportional; ++r) {
        if (cr[r] == 0 || cj[r] == 0) {
          proportional = (cr[r] == 0 && cj[r] == 0);
          continue;
        }
        const Rational q = cj[r] / cr[r];
        if (ratio && *ratio != q) proportional = false;
        ratio = q;
      }
      if (proportional && ratio) {
        g.push_back(j);
        scale[j] = *ratio;
        placed = true;
        break;
      }
    }
    if (!placed) {
      groups.push_back({j});
      scale[j] = 1;
    }
  }
  if (groups.size() != stages.size()) return std::nullopt;

  // Square system: row s, column g = coefficient of the representative in stage s.
  RationalMatrix sys(stages.size(), std::vector<Rational>(groups.size()));
  for (std::size_t r = 0; r < stages.size(); ++r) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      sys[r][g] = exp.coeffs[static_cast<std::size_t>(stages[r] - 1)][groups[g].front()];
    }
  }
  auto inv = inverse(sys);
  if (!inv) return std::nullopt;

  // Each derivative must be a combination of the group unknowns:
  // group unknown x_g = sum_{j in g} scale[j] * monomial_j, so derivative coefficient
  // d_j must equal beta_g * scale[j] for all j in g.
  const RationalMatrix deriv = derivative_expansion();
  InterpolantCoeffs out;
  out.stages.assign(stages.begin(), stages.end());
  out.groups = groups;
  out.system = sys;
  out.solution = *inv;
  Rational factorial = 1;
  for (int m = 1; m <= order; ++m) {
    factorial *= m;
    std::vector<Rational> beta(groups.size(), Rational(0));
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::optional<Rational> b;
      for (std::size_t j : groups[g]) {
        const Rational want = deriv[static_cast<std::size_t>(m - 1)][j] / scale[j];
        if (b && *b != want) return std::nullopt;
        b = want;
      }
      beta[g] = *b;
    }
    for (std::size_t j = 0; j < kMonomials.size(); ++j) {
      if (kMonomialDegree[j] > order && deriv[static_cast<std::size_t>(m - 1)][j] != 0) return std::nullopt;
    }
    std::vector<Rational> row(stages.size(), Rational(0));
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t g = 0; g < groups.size(); ++g) row[s] += beta[g] * (*inv)[g][s];
      row[s] /= factorial;
    }
    out.poly.push_back(std::move(row));
  }
  return out;
}

/// The 5x5 system for a Cash-Karp quartic from stages {1,3,4,5,6} with dt factored out.
[[nodiscard]] inline RationalMatrix ck45_quartic_matrix() {
  using detail::q;
  return {
      {q(1), q(0), q(0), q(0), q(0)},
      {q(1), q(3, 10), q(9, 200), q(0), q(9, 2000)},
      {q(1), q(3, 5), q(9, 50), q(27, 500), q(9, 250)},
      {q(1), q(1), q(1, 2), q(7, 60), q(1, 6)},
      {q(1), q(7, 8), q(49, 128), q(161, 1536), q(343, 3072)},
  };
}

/// Exact determinant of the Cash-Karp quartic system (zero: no unique quartic exists).
[[nodiscard]] inline Rational check_ck45_quartic_unsolvable() { return determinant(ck45_quartic_matrix()); }

[[nodiscard]] inline std::string to_string(const Rational& r) {
  return boost::multiprecision::numerator(r).str() +
         (boost::multiprecision::denominator(r) == 1 ? std::string{}
                                                     : "/" + boost::multiprecision::denominator(r).str());
}

}  // namespace mrode
