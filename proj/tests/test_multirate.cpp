#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mrode/models.hpp"
#include "mrode/multirate.hpp"

using namespace mrode;

namespace {

OdeSystem scalar_decay() {
  OdeSystem sys;
  sys.n_components = 1;
  sys.rhs = [](double, const LocalState& y, IndexRange, std::span<double> out) { out[0] = -y[0]; };
  return sys;
}

/// n identical uncoupled components y_i' = -y_i.
OdeSystem uncoupled_decay(Index n) {
  OdeSystem sys;
  sys.n_components = n;
  sys.bandwidth = 0;
  sys.rhs = [](double, const LocalState& y, IndexRange w, std::span<double> out) {
    for (Index i = w.begin; i < w.end; ++i) out[static_cast<std::size_t>(i - w.begin)] = -y[i];
  };
  return sys;
}

/// y_0' = 0, y_j' = y_{j-1}: from e_0 the solution is y_j = t^j / j!.
OdeSystem shift_chain(Index n) {
  OdeSystem sys;
  sys.n_components = n;
  sys.bandwidth = 1;
  sys.rhs = [](double, const LocalState& y, IndexRange w, std::span<double> out) {
    for (Index j = w.begin; j < w.end; ++j) out[static_cast<std::size_t>(j - w.begin)] = j == 0 ? 0.0 : y[j - 1];
  };
  return sys;
}

std::vector<double> wave_initial(const AdvectionSystem& spec) {
  std::vector<double> y;
  for (double x : spec.grid()) y.push_back(std::exp(-(x + 10.0) * (x + 10.0)));
  return y;
}

MultirateConfig wave_config(double tol) {
  MultirateConfig c;
  c.k_exp = -6.0;
  c.percentile_p = 30.0;
  c.buffer_w = 0;
  c.tolerances = {tol, tol};
  c.controller.dt_max = 1.0;
  return c;
}

std::vector<bool> flags_at(Index n, std::initializer_list<Index> on) {
  std::vector<bool> f(static_cast<std::size_t>(n), false);
  for (Index i : on) f[static_cast<std::size_t>(i)] = true;
  return f;
}

}  // namespace

TEST(Percentile, RankExamples) {
  std::vector<double> e;
  for (int i = 10; i >= 1; --i) e.push_back(10.0 * i);
  EXPECT_EQ(lte_percentile(e, 50), 50.0);
  EXPECT_EQ(lte_percentile(e, 10), 10.0);
  EXPECT_EQ(lte_percentile(e, 100), 100.0);
  EXPECT_EQ(lte_percentile(e, 0), 10.0);
  EXPECT_EQ(lte_percentile(e, 10, PercentileRule::RankDescending), 100.0);
  const std::vector<double> one = {3.5};
  EXPECT_EQ(lte_percentile(one, 50), 3.5);
}

TEST(Percentile, NonFiniteSortsLast) {
  const std::vector<double> e = {1.0, std::nan(""), 3.0};
  EXPECT_EQ(lte_percentile(e, 50), 3.0);
  EXPECT_TRUE(std::isinf(lte_percentile(e, 100)));
}

TEST(Percentile, EmptyInputIsContractViolation) {
  const std::vector<double> none;
  EXPECT_THROW((void)lte_percentile(none, 50), ContractViolation);
  const std::vector<double> one = {1.0};
  EXPECT_THROW((void)lte_percentile(one, 120), ContractViolation);
}

// Property: at most (100 - P)% of the errors (plus one) lie strictly above mu.
TEST(PercentileProperty, FractionAboveIsBounded) {
  std::mt19937_64 rng(11);
  std::lognormal_distribution<double> err(-10.0, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 300)(rng);
    const double p = std::uniform_real_distribution<double>(0.0, 100.0)(rng);
    std::vector<double> e(static_cast<std::size_t>(n));
    for (double& x : e) x = err(rng);
    const double mu = lte_percentile(e, p);
    const auto above = std::count_if(e.begin(), e.end(), [&](double x) { return x > mu; });
    ASSERT_LE(static_cast<double>(above) / n, (100.0 - p) / 100.0 + 1.0 / n) << "n=" << n << " p=" << p;
    ASSERT_NE(std::find(e.begin(), e.end(), mu), e.end());
  }
}

TEST(FlagStiff, ThresholdAndNonFinite) {
  const std::vector<double> e = {1e-9, 1e-7, 2e-7, std::nan(""), std::numeric_limits<double>::infinity()};
  const auto f = flag_stiff(e, 1e-9, 2.0);
  EXPECT_EQ(f, (std::vector<bool>{false, false, true, true, true}));
  const std::vector<double> zeros = {0.0, 0.0};
  EXPECT_EQ(flag_stiff(zeros, 0.0, 2.0), (std::vector<bool>{false, false}));
}

TEST(BuildBlocks, NearbyFlagsShareOneBlock) {
  const auto blocks = build_blocks(flags_at(20, {8, 10}), 2, 0, 20);
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].range, (IndexRange{8, 11}));
  EXPECT_EQ(blocks[0].left_halo, (std::vector<Index>{6, 7}));
  EXPECT_EQ(blocks[0].right_halo, (std::vector<Index>{11, 12}));
}

TEST(BuildBlocks, BufferWidensDistantFlags) {
  const auto blocks = build_blocks(flags_at(100, {5, 40}), 2, 2, 100);
  ASSERT_EQ(blocks.size(), 2u);
  EXPECT_EQ(blocks[0].range, (IndexRange{3, 8}));
  EXPECT_EQ(blocks[1].range, (IndexRange{38, 43}));
  EXPECT_EQ(blocks[0].left_halo, (std::vector<Index>{1, 2}));
  EXPECT_EQ(blocks[1].right_halo, (std::vector<Index>{43, 44}));
}

TEST(BuildBlocks, GapLimitIsTwiceTheBandwidth) {
  EXPECT_EQ(build_blocks(flags_at(20, {3, 8}), 2, 0, 20).size(), 1u);  // gap of 4
  EXPECT_EQ(build_blocks(flags_at(20, {3, 9}), 2, 0, 20).size(), 2u);  // gap of 5
}

TEST(BuildBlocks, HalosAreClippedAtTheEnds) {
  const auto blocks = build_blocks(flags_at(10, {0, 9}), 2, 1, 10);
  ASSERT_EQ(blocks.size(), 2u);
  EXPECT_EQ(blocks[0].range, (IndexRange{0, 2}));
  EXPECT_TRUE(blocks[0].left_halo.empty());
  EXPECT_EQ(blocks[0].right_halo, (std::vector<Index>{2, 3}));
  EXPECT_EQ(blocks[1].range, (IndexRange{8, 10}));
  EXPECT_TRUE(blocks[1].right_halo.empty());
}

TEST(BuildBlocks, PeriodicBlockWrapsAround) {
  const auto blocks = build_blocks(flags_at(10, {0, 9}), 1, 0, 10, true);
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].range, (IndexRange{9, 11}));
  EXPECT_EQ(blocks[0].left_halo, (std::vector<Index>{8}));
  EXPECT_EQ(blocks[0].right_halo, (std::vector<Index>{11}));
}

TEST(BuildBlocks, PeriodicNearlyFullRingBecomesWholeRing) {
  std::vector<bool> f(10, true);
  f[5] = false;
  const auto blocks = build_blocks(f, 1, 0, 10, true);
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].range, (IndexRange{0, 10}));
  EXPECT_TRUE(blocks[0].left_halo.empty());
  EXPECT_TRUE(blocks[0].right_halo.empty());
}

TEST(BuildBlocks, SingleBlockSpansFirstToLastFlag) {
  const auto blocks = build_blocks(flags_at(20, {2, 15}), 1, 0, 20, false, true);
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].range, (IndexRange{2, 16}));
}

TEST(BuildBlocks, NoFlagsNoBlocks) {
  EXPECT_TRUE(build_blocks(std::vector<bool>(7, false), 2, 3, 7).empty());
}

// Property: blocks are disjoint, cover every flag, and no halo component lies in a block.
TEST(BuildBlocksProperty, RandomFlagPatterns) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const Index n = std::uniform_int_distribution<Index>(1, 60)(rng);
    const Index b = std::uniform_int_distribution<Index>(0, 3)(rng);
    const Index w = std::uniform_int_distribution<Index>(0, 3)(rng);
    const bool periodic = trial % 2 == 1;
    const double density = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
    std::vector<bool> flags(static_cast<std::size_t>(n));
    for (auto&& f : flags) f = std::bernoulli_distribution(density)(rng);
    const auto blocks = build_blocks(flags, b, w, n, periodic);
    std::vector<int> owner(static_cast<std::size_t>(n), 0);
    for (const auto& blk : blocks) {
      ASSERT_GT(blk.range.size(), 0);
      ASSERT_LE(blk.range.size(), n);
      for (Index j = blk.range.begin; j < blk.range.end; ++j) {
        const Index k = periodic ? ((j % n) + n) % n : j;
        ASSERT_TRUE(k >= 0 && k < n);
        ++owner[static_cast<std::size_t>(k)];
      }
    }
    for (Index i = 0; i < n; ++i) {
      ASSERT_LE(owner[static_cast<std::size_t>(i)], 1) << "overlap at " << i;
      if (flags[static_cast<std::size_t>(i)]) ASSERT_EQ(owner[static_cast<std::size_t>(i)], 1) << "uncovered " << i;
    }
    for (const auto& blk : blocks) {
      for (const auto* halo : {&blk.left_halo, &blk.right_halo}) {
        ASSERT_LE(static_cast<Index>(halo->size()), b);
        for (Index j : *halo) {
          const Index k = periodic ? ((j % n) + n) % n : j;
          ASSERT_TRUE(k >= 0 && k < n);
          ASSERT_EQ(owner[static_cast<std::size_t>(k)], 0) << "halo component " << k << " is re-integrated";
        }
      }
    }
  }
}

TEST(MacroStep, IdenticalComponentsBehaveLikeSingleRate) {
  const OdeSystem sys = uncoupled_decay(8);
  MultirateConfig mr;
  MultirateConfig sr;
  sr.multirate = false;
  const std::vector<double> y0(8, 1.0);
  const Trajectory a = integrate_adaptive(sys, y0, 0.0, 3.0, mr);
  const Trajectory b = integrate_adaptive(sys, y0, 0.0, 3.0, sr);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].flagged_count, 0);
    EXPECT_EQ(a.records[i].dt, b.records[i].dt);
  }
  EXPECT_EQ(a.final_state.y, b.final_state.y);
  EXPECT_EQ(a.total_micro_steps(), 0);
}

TEST(MacroStep, RejectedStepKeepsStateAndShrinks) {
  const OdeSystem sys = scalar_decay();
  MultirateConfig c;
  c.tolerances = {1e-12, 1e-12};
  const State s{0.0, {1.0}};
  const MacroStepResult r = macro_step(sys, s, 1.0, c);
  ASSERT_FALSE(r.accepted);
  EXPECT_EQ(r.state.y, s.y);
  const StepOutcome direct = ck45_step(sys, 0.0, s.y, 1.0);
  const double m = direct.lte[0] / component_tolerance(1.0, c.tolerances);
  EXPECT_DOUBLE_EQ(r.record.error_ratio, m);
  EXPECT_DOUBLE_EQ(r.dt_next, 0.95 * std::max(0.1, std::pow(m, -0.2)));
}

TEST(MicroIntegrate, WholeRingMatchesExactSolution) {
  const AdvectionSystem spec{5, 1.0, 1.0};
  const OdeSystem sys = advection_system(spec);
  const std::vector<double> y0 = {0.3, -1.0, 2.0, 0.5, 0.1};
  const Block blk{{0, 5}, {}, {}};
  MultirateConfig c;
  const BlockTask task{sys, blk, 0.0, 0.7, y0, [](double, Halo& h) { h = {}; }, {1e-10, 1e-12}, c};
  const BlockResult r = micro_integrate(task);
  const auto exact = advection_exact(spec, y0, 0.7);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(r.values[i], exact[i], 1e-8) << i;
  EXPECT_GT(r.micro_steps, 0);
}

TEST(MicroIntegrate, UsesHaloValuesAtStageTimes) {
  const OdeSystem sys = shift_chain(6);
  const std::vector<double> y0 = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  const Block blk{{2, 5}, {1}, {5}};
  MultirateConfig c;
  auto halo = [](double t, Halo& h) {
    h.left = {t};
    h.right = {std::pow(t, 5) / 120.0};
  };
  const BlockResult r = micro_integrate({sys, blk, 0.0, 1.5, y0, halo, {1e-10, 1e-12}, c});
  EXPECT_NEAR(r.values[0], 1.5 * 1.5 / 2.0, 1e-9);
  EXPECT_NEAR(r.values[1], std::pow(1.5, 3) / 6.0, 1e-9);
  EXPECT_NEAR(r.values[2], std::pow(1.5, 4) / 24.0, 1e-9);
}

TEST(MicroIntegrate, EulerDoublingAlsoConverges) {
  const OdeSystem sys = uncoupled_decay(2);
  const std::vector<double> y0 = {1.0, 2.0};
  const Block blk{{0, 2}, {}, {}};
  MultirateConfig c;
  const BlockResult r =
      micro_integrate({sys, blk, 0.0, 1.0, y0, [](double, Halo&) {}, {1e-5, 1e-7}, c, InnerMethod::EulerDoubling});
  EXPECT_NEAR(r.values[0], std::exp(-1.0), 1e-3);
  EXPECT_NEAR(r.values[1], 2.0 * std::exp(-1.0), 2e-3);
}

TEST(MicroIntegrate, FailureNamesTheBlock) {
  OdeSystem sys = uncoupled_decay(3);
  sys.rhs = [](double, const LocalState&, IndexRange, std::span<double> out) {
    for (double& v : out) v = std::nan("");
  };
  const std::vector<double> y0 = {1.0, 1.0, 1.0};
  const Block blk{{1, 3}, {}, {}};
  MultirateConfig c;
  try {
    (void)micro_integrate({sys, blk, 0.0, 1.0, y0, [](double, Halo&) {}, {1e-6, 1e-8}, c});
    FAIL() << "expected IntegrationAbort";
  } catch (const IntegrationAbort& e) {
    EXPECT_NE(std::string(e.what()).find("[1, 3)"), std::string::npos);
  }
}

TEST(IntegrateAdaptive, ScalarDecayReachesTheExactValue) {
  MultirateConfig c;
  const Trajectory tr = integrate_adaptive(scalar_decay(), {1.0}, 0.0, 2.0, c);
  EXPECT_EQ(tr.final_state.t, 2.0);
  EXPECT_NEAR(tr.final_state.y[0], std::exp(-2.0), 10.0 * c.tolerances.rtol);
  for (const auto& r : tr.records) {
    if (r.accepted) EXPECT_LT(r.error_ratio, 1.0);
  }
}

TEST(IntegrateAdaptive, EmptySystemReturnsImmediately) {
  OdeSystem sys;
  sys.n_components = 0;
  sys.rhs = [](double, const LocalState&, IndexRange, std::span<double>) {};
  const Trajectory tr = integrate_adaptive(sys, {}, 0.0, 1.0, MultirateConfig{});
  EXPECT_TRUE(tr.records.empty());
  EXPECT_EQ(tr.samples.size(), 1u);
}

TEST(IntegrateAdaptive, InvalidConfigIsRejected) {
  MultirateConfig c;
  c.percentile_p = 150.0;
  EXPECT_THROW((void)integrate_adaptive(scalar_decay(), {1.0}, 0.0, 1.0, c), ConfigError);
}

TEST(IntegrateAdaptive, TooManyRejectionsAbort) {
  OdeSystem sys = scalar_decay();
  sys.rhs = [](double, const LocalState&, IndexRange, std::span<double> out) { out[0] = std::nan(""); };
  MultirateConfig c;
  c.multirate = false;
  EXPECT_THROW((void)integrate_adaptive(sys, {1.0}, 0.0, 1.0, c), IntegrationAbort);
}

TEST(WaveRun, MacroStepCountAndAcceptedRatios) {
  const AdvectionSystem spec;
  const OdeSystem sys = advection_system(spec);
  const auto y0 = wave_initial(spec);
  const Trajectory tr = integrate_adaptive(sys, y0, 0.0, 20.0, wave_config(1e-8), {}, {false});
  EXPECT_NEAR(static_cast<double>(tr.accepted_steps()), 22.0, 5.0);
  for (const auto& r : tr.records) {
    if (r.accepted) EXPECT_LT(r.error_ratio, 1.0);
    EXPECT_LE(r.dt, 1.0);
  }
  EXPECT_GT(tr.total_micro_steps(), 0);
}

TEST(WaveRun, RepeatedRunsAreBitIdentical) {
  const AdvectionSystem spec;
  const OdeSystem sys = advection_system(spec);
  const auto y0 = wave_initial(spec);
  const auto a = integrate_adaptive(sys, y0, 0.0, 5.0, wave_config(1e-8), {}, {false});
  const auto b = integrate_adaptive(sys, y0, 0.0, 5.0, wave_config(1e-8), {}, {false});
  EXPECT_EQ(a.final_state.y, b.final_state.y);
  EXPECT_EQ(a.records.size(), b.records.size());
}

TEST(WaveRun, ReintegrationStaysNearTheMacroValues) {
  const AdvectionSystem spec;
  const OdeSystem sys = advection_system(spec);
  const auto y0 = wave_initial(spec);
  const MultirateConfig c = wave_config(1e-8);
  const MacroStepResult r = macro_step(sys, {0.0, y0}, 1.0, c);
  ASSERT_TRUE(r.accepted);
  ASSERT_FALSE(r.report.blocks.empty());
  const StepOutcome macro = ck45_step(sys, 0.0, y0, 1.0);
  for (const auto& blk : r.report.blocks) {
    double max_lte = 0.0;
    for (Index j = blk.range.begin; j < blk.range.end; ++j) {
      max_lte = std::max(max_lte, macro.lte[static_cast<std::size_t>(sys.wrap(j))]);
    }
    for (Index j = blk.range.begin; j < blk.range.end; ++j) {
      const auto i = static_cast<std::size_t>(sys.wrap(j));
      EXPECT_LE(std::abs(r.state.y[i] - macro.y_next[i]), 100.0 * max_lte + 1e-10) << "component " << i;
    }
  }
  // unflagged components keep their macro values
  std::vector<bool> in_block(y0.size(), false);
  for (const auto& blk : r.report.blocks) {
    for (Index j = blk.range.begin; j < blk.range.end; ++j) in_block[static_cast<std::size_t>(sys.wrap(j))] = true;
  }
  for (std::size_t i = 0; i < y0.size(); ++i) {
    if (!in_block[i]) EXPECT_EQ(r.state.y[i], macro.y_next[i]);
  }
}
