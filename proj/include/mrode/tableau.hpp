/**
 * @file tableau.hpp
 * @brief Exact Butcher tableaus for classical RK4 and the Cash-Karp 4(5) pair.
 */
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace mrode {

struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  [[nodiscard]] constexpr double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
};

/**
 * @brief Explicit Runge-Kutta tableau with S stages.
 *
 * `weights` is the row that advances the solution. `alt_weights` is the companion row
 * of an embedded pair; the local error estimate is the difference of the two updates.
 */
template <std::size_t S>
struct ButcherTableau {
  static constexpr std::size_t stages = S;

  std::array<Fraction, S> nodes{};                        // a_i
  std::array<std::array<Fraction, S>, S> coupling{};     // b_ij, strictly lower triangular
  std::array<Fraction, S> weights{};                      // propagated update
  std::array<Fraction, S> alt_weights{};                  // embedded companion (all zero if none)
  bool embedded = false;
  int order = 0;                                          // order of `weights`
};

inline constexpr ButcherTableau<4> classical_rk4{
    .nodes = {{{0, 1}, {1, 2}, {1, 2}, {1, 1}}},
    .coupling = {{
        {{{0, 1}, {0, 1}, {0, 1}, {0, 1}}},
        {{{1, 2}, {0, 1}, {0, 1}, {0, 1}}},
        {{{0, 1}, {1, 2}, {0, 1}, {0, 1}}},
        {{{0, 1}, {0, 1}, {1, 1}, {0, 1}}},
    }},
    .weights = {{{1, 6}, {1, 3}, {1, 3}, {1, 6}}},
    .alt_weights = {},
    .embedded = false,
    .order = 4,
};

// Propagates the fourth-order row (2825/27648, ...); the fifth-order row (37/378, ...)
// only enters the error estimate.
inline constexpr ButcherTableau<6> cash_karp45{
    .nodes = {{{0, 1}, {1, 5}, {3, 10}, {3, 5}, {1, 1}, {7, 8}}},
    .coupling = {{
        {{{0, 1}, {0, 1}, {0, 1}, {0, 1}, {0, 1}, {0, 1}}},
        {{{1, 5}, {0, 1}, {0, 1}, {0, 1}, {0, 1}, {0, 1}}},
        {{{3, 40}, {9, 40}, {0, 1}, {0, 1}, {0, 1}, {0, 1}}},
        {{{3, 10}, {-9, 10}, {6, 5}, {0, 1}, {0, 1}, {0, 1}}},
        {{{-11, 54}, {5, 2}, {-70, 27}, {35, 27}, {0, 1}, {0, 1}}},
        {{{1631, 55296}, {175, 512}, {575, 13824}, {44275, 110592}, {253, 4096}, {0, 1}}},
    }},
    .weights = {{{2825, 27648}, {0, 1}, {18575, 48384}, {13525, 55296}, {277, 14336}, {1, 4}}},
    .alt_weights = {{{37, 378}, {0, 1}, {250, 621}, {125, 594}, {0, 1}, {512, 1771}}},
    .embedded = true,
    .order = 4,
};

}  // namespace mrode
