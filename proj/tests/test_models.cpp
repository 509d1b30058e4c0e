#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "mrode/integrators.hpp"
#include "mrode/models.hpp"

using namespace mrode;

namespace {

bool four_significant(double got, double want) {
  const double unit = std::pow(10.0, std::floor(std::log10(std::abs(want))) - 3.0);
  return std::abs(got - want) <= 0.5 * unit;
}

}  // namespace

TEST(CollapseModel, ExactTimes) {
  EXPECT_EQ(collapse_model_exact(CollapseVariant::InverseR, 1), 0.5);
  EXPECT_EQ(collapse_model_exact(CollapseVariant::InverseR, 3), 4.5);
  EXPECT_EQ(collapse_model_exact(CollapseVariant::InverseRSquared, 3), 9.0);
  EXPECT_DOUBLE_EQ(collapse_model_exact(CollapseVariant::InverseRSquared, 4), 64.0 / 3.0);
  EXPECT_THROW((void)collapse_model_exact(CollapseVariant::InverseR, 0), ContractViolation);
}

TEST(CollapseModel, RatesAndSquaredTop) {
  const std::vector<double> r = {1.0, 2.0, 4.0};
  EXPECT_EQ(collapse_model_rhs(CollapseVariant::InverseR, r), (std::vector<double>{-1.0, -0.5, -0.25}));
  EXPECT_EQ(collapse_model_rhs(CollapseVariant::InverseRSquared, r), (std::vector<double>{-1.0, -0.25, -0.0625}));
  const std::vector<double> zero = {0.0};
  EXPECT_THROW((void)collapse_model_rhs(CollapseVariant::InverseR, zero), ContractViolation);

  const std::vector<double> y = {4.0, 2.0};
  EXPECT_EQ(eval_rhs(collapse_model_system(CollapseVariant::InverseR, 2), 0.0, y), (std::vector<double>{-2.0, -0.5}));
  EXPECT_EQ(eval_rhs(collapse_model_system(CollapseVariant::InverseRSquared, 2), 0.0, y),
            (std::vector<double>{-1.0, -0.25}));
  const std::vector<double> crossed = {-1e-3, 2.0};
  EXPECT_TRUE(std::isnan(eval_rhs(collapse_model_system(CollapseVariant::InverseR, 2), 0.0, crossed)[0]));
}

TEST(CollapseModel, VariantNames) {
  EXPECT_EQ(parse_collapse_variant("inv-r"), CollapseVariant::InverseR);
  EXPECT_EQ(parse_collapse_variant("inv-r2"), CollapseVariant::InverseRSquared);
  EXPECT_EQ(to_string(CollapseVariant::InverseRSquared), "inv-r2");
  EXPECT_THROW((void)parse_collapse_variant("inv-r3"), ConfigError);
}

TEST(CollapseModel, MultirateTimesMatchToFourDigits) {
  for (auto v : {CollapseVariant::InverseR, CollapseVariant::InverseRSquared}) {
    const CollapseRun run = run_collapse_model(v, 5, MultirateConfig{});
    ASSERT_EQ(run.events.size(), 5u) << to_string(v);
    for (const auto& e : run.events) {
      EXPECT_TRUE(four_significant(e.tau, collapse_model_exact(v, e.step)))
          << to_string(v) << " step " << e.step << ": " << e.tau;
    }
  }
}

TEST(Advection, GridSpacing) {
  const AdvectionSystem spec;
  EXPECT_EQ(spec.h(), 0.125);
  const auto x = spec.grid();
  EXPECT_EQ(x.front(), -25.0);
  EXPECT_EQ(x.back(), 25.0);
  EXPECT_THROW((void)advection_system({10, 1.0, -1.0}), ConfigError);
}

TEST(Advection, ConstantStateIsSteadyAndMassIsConserved) {
  const AdvectionSystem spec{17, 2.0, 1.5};
  const OdeSystem sys = advection_system(spec);
  EXPECT_EQ(eval_rhs(sys, 0.0, std::vector<double>(17, 3.0)), std::vector<double>(17, 0.0));
  std::mt19937_64 rng(2);
  std::vector<double> y(17);
  for (double& v : y) v = std::normal_distribution<double>()(rng);
  double total = 0.0;
  for (double d : eval_rhs(sys, 0.0, y)) total += d;
  EXPECT_NEAR(total, 0.0, 1e-12);
}

TEST(Advection, ExactSolutionOfAFourierMode) {
  const AdvectionSystem spec{12, 3.0, 1.0};
  const auto n = static_cast<std::size_t>(spec.n);
  const double c = spec.a / spec.h();
  const double theta = 2.0 * std::numbers::pi * 2.0 / 12.0;
  std::vector<double> y0(n);
  for (std::size_t j = 0; j < n; ++j) y0[j] = std::cos(theta * static_cast<double>(j));
  const double t = 0.8;
  const std::complex<double> lam = -c * (1.0 - std::exp(std::complex<double>(0.0, -theta)));
  const auto got = advection_exact(spec, y0, t);
  for (std::size_t j = 0; j < n; ++j) {
    const double want = (std::exp(lam * t) * std::exp(std::complex<double>(0.0, theta * static_cast<double>(j)))).real();
    EXPECT_NEAR(got[j], want, 1e-13) << j;
  }
}

TEST(Advection, ExactSolutionAgreesWithFineRk4) {
  const AdvectionSystem spec{9, 1.0, 1.0};
  const OdeSystem sys = advection_system(spec);
  std::vector<double> y = {0.0, 1.0, 0.5, -0.2, 0.0, 0.0, 2.0, 0.3, 0.1};
  const auto exact = advection_exact(spec, y, 0.5);
  const int steps = 2000;
  for (int s = 0; s < steps; ++s) y = rk4_step(sys, s * 0.5 / steps, y, 0.5 / steps).y_next;
  for (std::size_t j = 0; j < y.size(); ++j) EXPECT_NEAR(y[j], exact[j], 1e-10);
}

TEST(Biharmonic, DispersionValues) {
  EXPECT_EQ(biharmonic_dispersion(0.0, 1e-3, 0.5), 0.0);
  EXPECT_NEAR(biharmonic_dispersion(std::numbers::pi, 1e-3, 0.5), 0.384, 1e-15);
  EXPECT_DOUBLE_EQ((BiharmonicSystem{64, 1e-3, 0.5}.coefficient()), 0.024);
}

TEST(Biharmonic, FourierModesAreEigenvectors) {
  const BiharmonicSystem spec{32, 1e-3, 0.5};
  const OdeSystem sys = biharmonic_system(spec);
  for (int m : {1, 3, 8, 16}) {
    const double k = 2.0 * std::numbers::pi * m / 32.0;
    std::vector<double> v(32);
    for (int j = 0; j < 32; ++j) v[static_cast<std::size_t>(j)] = std::cos(k * j);
    const auto d = eval_rhs(sys, 0.0, v);
    const double sigma = biharmonic_dispersion(k, spec.eps, spec.delta);
    for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(d[j], -sigma * v[j], 1e-15) << "mode " << m;
    const auto later = biharmonic_exact(spec, v, 5.0);
    for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(later[j], std::exp(-5.0 * sigma) * v[j], 1e-13);
  }
}

TEST(Biharmonic, ExactSolutionConservesTheMean) {
  const BiharmonicSystem spec{20, 1e-3, 0.5};
  std::vector<double> v(20, 0.0);
  v[7] = 1.0;
  double total = 0.0;
  for (double x : biharmonic_exact(spec, v, 30.0)) total += x;
  EXPECT_NEAR(total, 1.0, 1e-13);
}

TEST(ConvergenceSlope, RecoversAPowerLaw) {
  const std::vector<double> dts = {0.1, 0.05, 0.025, 0.0125};
  std::vector<double> err;
  for (double dt : dts) err.push_back(3.0 * std::pow(dt, 4));
  EXPECT_NEAR(convergence_slope(dts, err), 4.0, 1e-12);
}

TEST(ConvergenceSlope, NeedsThreePoints) {
  const std::vector<double> two = {0.1, 0.05};
  EXPECT_THROW((void)convergence_slope(two, two), ContractViolation);
  const std::vector<double> three = {0.1, 0.05, 0.01};
  EXPECT_THROW((void)convergence_slope(three, two), ContractViolation);
}
