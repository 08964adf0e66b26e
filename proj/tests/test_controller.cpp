#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "deltaflux/controller.hpp"
#include "deltaflux/model.hpp"

using namespace deltaflux;

namespace {

using Environment = std::function<double(double)>;  // sparsity as a function of theta

bool in_band(double s, const ControllerConfig& c) { return s >= c.target - c.band && s <= c.target + c.band; }

// Random monotone nondecreasing sparsity curves of a few shapes.
Environment random_environment(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double a = 0.3 * u(rng), b = 0.5 + 0.7 * u(rng), gamma = 0.2 + 2.5 * u(rng), knee = 0.02 + 0.9 * u(rng);
  switch (rng() % 3) {
    case 0: return [=](double t) { return std::min(1.0, a + b * std::pow(t, gamma)); };
    case 1: return [=](double t) { return a + (1.0 - a) * (1.0 - std::exp(-t / (0.05 * knee + 1e-3))); };
    default: return [=](double t) { return t < knee ? a : std::min(1.0, a + b); };  // a cliff
  }
}

// Grid scan: every theta on a fine grid whose sparsity lands in the band.
std::vector<double> band_solutions(const Environment& env, const ControllerConfig& c) {
  std::vector<double> out;
  const int steps = 20000;
  for (int i = 0; i <= steps; ++i) {
    const double t = c.theta_max * i / steps;
    if (in_band(env(t), c)) out.push_back(t);
  }
  return out;
}

ControllerConfig bst() {
  ControllerConfig c;
  c.policy = ThresholdPolicy::bst;
  return c;
}

}  // namespace

TEST(ControllerConfig, DefaultSearchLength) {
  EXPECT_EQ(ControllerConfig{}.search_length(), 10u);
}

TEST(Observe, FixedPolicyNeverMoves) {
  ControllerConfig c;
  c.policy = ThresholdPolicy::fixed;
  c.fixed_theta = 0.07;
  auto s = initial_site_state(c);
  for (double sp : {0.0, 0.3, 0.99, 1.0}) {
    s = observe(s, sp, c);
    EXPECT_EQ(s.theta, 0.07);
  }
}

TEST(Observe, SparsityOutsideUnitIntervalIsContractError) {
  auto c = bst();
  auto s = initial_site_state(c);
  EXPECT_THROW(observe(s, -0.01, c), ContractError);
  EXPECT_THROW(observe(s, 1.5, c), ContractError);
  EXPECT_THROW(observe(s, std::numeric_limits<double>::quiet_NaN(), c), ContractError);
}

TEST(Observe, StepRuleMovesBracketTowardTarget) {
  auto c = bst();
  auto s = initial_site_state(c);
  EXPECT_EQ(s.theta, 0.5);
  s = observe(s, 0.99, c);  // too sparse: threshold too high
  EXPECT_EQ(s.hi, 0.5);
  EXPECT_EQ(s.theta, 0.25);
  s = observe(s, 0.5, c);  // not sparse enough
  EXPECT_EQ(s.lo, 0.25);
  EXPECT_EQ(s.theta, 0.375);
  s = observe(s, 0.91, c);
  EXPECT_TRUE(s.frozen);
  EXPECT_EQ(s.theta, 0.375);
}

TEST(Observe, FrozenBstIgnoresFurtherObservations) {
  auto c = bst();
  auto s = observe(initial_site_state(c), 0.9, c);
  ASSERT_TRUE(s.frozen);
  for (double sp : {0.0, 1.0, 0.2}) {
    auto next = observe(s, sp, c);
    EXPECT_EQ(next.theta, s.theta);
    EXPECT_TRUE(next.frozen);
  }
}

TEST(BstProperty, FreezesWithinSearchLengthPlusOne) {
  std::mt19937_64 rng(1);
  auto c = bst();
  const std::size_t limit = c.search_length() + 1;
  for (int trial = 0; trial < 500; ++trial) {
    auto env = random_environment(rng);
    auto s = initial_site_state(c);
    std::size_t n = 0;
    while (!s.frozen && n < 100) {
      s = observe(s, env(s.theta), c);
      ++n;
    }
    EXPECT_LE(n, limit) << "trial " << trial;
  }
}

TEST(BstProperty, BracketAlwaysHoldsEveryBandSolution) {
  std::mt19937_64 rng(2);
  auto c = bst();
  for (int trial = 0; trial < 50; ++trial) {
    auto env = random_environment(rng);
    const auto solutions = band_solutions(env, c);
    auto s = initial_site_state(c);
    while (!s.frozen) {
      s = observe(s, env(s.theta), c);
      for (double t : solutions) {
        ASSERT_GE(t, s.lo) << "trial " << trial;
        ASSERT_LE(t, s.hi) << "trial " << trial;
      }
    }
    const bool ok = in_band(env(s.theta), c) || s.hi - s.lo <= c.theta_res;
    EXPECT_TRUE(ok) << "trial " << trial << " theta " << s.theta;
    if (!solutions.empty() && !in_band(env(s.theta), c)) {
      // Resolution stop: the band was narrower than the grid step allows the search to hit.
      EXPECT_LE(s.hi - s.lo, c.theta_res);
    }
  }
}

TEST(IbstProperty, RestartsEachCycleAndReconverges) {
  ControllerConfig c;  // ibst, C = 16
  auto phase1 = [](double t) { return std::min(1.0, 0.5 + 2.0 * t); };   // band near 0.2
  auto phase2 = [](double t) { return std::min(1.0, 0.1 + 1.0 * t); };   // band near 0.8
  auto ibst = initial_site_state(c);
  auto frozen_bst = initial_site_state(bst());
  std::size_t ibst_in_band_after = 0, bst_in_band_after = 0;
  for (std::size_t frame = 0; frame < 48; ++frame) {
    auto env = frame < c.cycle ? Environment(phase1) : Environment(phase2);
    const double si = env(ibst.theta), sb = env(frozen_bst.theta);
    if (frame >= 2 * c.cycle) {
      ibst_in_band_after += in_band(si, c) ? 1 : 0;
      bst_in_band_after += in_band(sb, bst()) ? 1 : 0;
    }
    ibst = observe(ibst, si, c);
    frozen_bst = observe(frozen_bst, sb, bst());
    if (frame + 1 == c.cycle) {
      EXPECT_FALSE(ibst.frozen);
      EXPECT_EQ(ibst.lo, 0.0);
      EXPECT_EQ(ibst.hi, c.theta_max);
    }
  }
  EXPECT_EQ(ibst_in_band_after, c.cycle);
  EXPECT_EQ(bst_in_band_after, 0u);
}

TEST(ThresholdController, SitesAreTruncationLayers) {
  auto g = parse_model("input 1 8 8\nconv 2 3 3 stride 1 pad 1\nrelu\nmaxpool 2 2 stride 2\nrelu notrunc\n");
  ThresholdController ctl(g, ControllerConfig{});
  EXPECT_TRUE(ctl.is_site(0));
  EXPECT_FALSE(ctl.is_site(1));
  EXPECT_TRUE(ctl.is_site(2));
  EXPECT_TRUE(ctl.is_site(3));
  EXPECT_FALSE(ctl.is_site(4));
  EXPECT_EQ(ctl.theta(1), 0.0f);
  for (const auto& [layer, s] : ctl.sites()) EXPECT_EQ(s.theta, 0.5) << layer;
}

TEST(ThresholdController, SnapshotCsvRoundTrip) {
  auto g = parse_model("input 1 8 8\nrelu\nrelu\n");
  ThresholdController a(g, ControllerConfig{}), b(g, ControllerConfig{});
  a.observe(0, 0.99);
  a.observe(1, 0.1);
  b.observe(2, 0.97);
  b.observe(2, 0.12);
  std::vector<ThresholdSnapshot> snaps{thresholds_snapshot(a), thresholds_snapshot(b)};
  EXPECT_EQ(parse_thresholds_csv(thresholds_csv(snaps)), snaps);
}

TEST(ParseTrunc, Forms) {
  auto f = parse_trunc_spec("fixed:0.25");
  EXPECT_EQ(f.policy, ThresholdPolicy::fixed);
  EXPECT_EQ(f.fixed_theta, 0.25);
  EXPECT_EQ(parse_trunc_spec("bst").policy, ThresholdPolicy::bst);
  auto i = parse_trunc_spec("ibst:T=0.8,eps=0.02,theta_max=2,theta_res=0.01,cycle=8");
  EXPECT_EQ(i.policy, ThresholdPolicy::ibst);
  EXPECT_EQ(i.target, 0.8);
  EXPECT_EQ(i.band, 0.02);
  EXPECT_EQ(i.theta_max, 2.0);
  EXPECT_EQ(i.theta_res, 0.01);
  EXPECT_EQ(i.cycle, 8u);
  auto line = parse_trunc_line("trunc policy=bst T=0.95 eps=0.01");
  EXPECT_EQ(line.policy, ThresholdPolicy::bst);
  EXPECT_EQ(line.target, 0.95);
  EXPECT_EQ(line.band, 0.01);
}

TEST(ParseTrunc, RejectsBadInput) {
  for (const char* bad : {"median", "fixed:-1", "fixed:abc", "bst:T=1.2", "ibst:cycle=0", "ibst:cycle=2.5",
                          "bst:theta_res=2", "bst:foo=1", "bst:T"}) {
    EXPECT_THROW(parse_trunc_spec(bad), ConfigError) << bad;
  }
  EXPECT_THROW(parse_trunc_line("truncate policy=bst"), ConfigError);
}
