#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rlvr/analysis.hpp"
#include "rlvr/problems.hpp"

using namespace rlvr;

namespace {

// Straightforward brute force used as the reference: every prompt, every
// trace (dead branch included), probabilities multiplied out explicitly.
struct Brute {
  double success = 0.0;
  Table<double> select;
  Table<double> joint;
};

Brute brute_force(const PolicyParams& params, const Problem& p) {
  const std::size_t S = p.num_steps;
  const std::size_t J = p.num_tasks;
  Brute b{0.0, Table<double>(S, J), Table<double>(S, J)};
  std::vector<std::size_t> digits(S, 0);
  std::vector<std::size_t> radix(S);
  for (std::size_t s = 0; s < S; ++s) radix[s] = J + (params.dead_tokens()[s] ? 1 : 0);
  for (;;) {
    std::vector<TaskChoice> trace(S);
    double w = 1.0;
    for (std::size_t s = 0; s < S; ++s) {
      double z = static_cast<double>(params.dead_tokens()[s]);
      for (std::size_t j = 0; j < J; ++j) z += std::exp(params.gamma() * params.logit(s, j));
      if (digits[s] < J) {
        trace[s] = digits[s];
        w *= std::exp(params.gamma() * params.logit(s, digits[s])) / z;
      } else {
        w *= static_cast<double>(params.dead_tokens()[s]) / z;
      }
    }
    for (const auto& wp : p.prompts) {
      Prefix x{wp.tokens, {}};
      for (const auto& c : trace) x.generated.push_back(c ? p.apply_task(*c, x) : Token::dead());
      const double a = wp.probability * w * p.accept_probability(x, trace);
      b.success += a;
      for (std::size_t s = 0; s < S; ++s) {
        if (trace[s]) {
          b.select(s, *trace[s]) += wp.probability * w;
          b.joint(s, *trace[s]) += a;
        }
      }
    }
    std::size_t s = 0;
    while (s < S && ++digits[s] == radix[s]) digits[s++] = 0;
    if (s == S) break;
  }
  return b;
}

PolicyParams random_params(Rng& rng, std::size_t S, std::size_t J, double gamma, std::size_t max_dead) {
  Table<double> u(S, J);
  for (double& x : u.flat()) x = 3.0 * rng.uniform() - 1.5;
  std::vector<std::size_t> dead(S);
  for (auto& w : dead) w = rng.below(max_dead + 1);
  return PolicyParams(u, gamma, dead);
}

PolicyParams trap_policy(double p, bool strict = false) {
  return correct_prob_policy(make_two_token_trap(strict).tau, 2, p, 1.0);
}

void expect_matches_brute(const PolicyParams& params, const Problem& p, bool shortcuts) {
  const Brute b = brute_force(params, p);
  const OutcomeTable t = enumerate_outcomes(params, p, {1e8, shortcuts});
  EXPECT_NEAR(t.success_prob, b.success, 1e-12) << p.name;
  for (std::size_t s = 0; s < p.num_steps; ++s) {
    for (std::size_t j = 0; j < p.num_tasks; ++j) {
      const double pa = b.select(s, j);
      EXPECT_NEAR(t.p_select(s, j), pa, 1e-12);
      EXPECT_NEAR(t.p_select(s, j), t.policy_prob(s, j), 1e-12);
      EXPECT_NEAR(t.p_accept_and_select(s, j), b.joint(s, j), 1e-12);
      EXPECT_NEAR(t.p_accept_and_not_select(s, j), b.success - b.joint(s, j), 1e-12);
      const double num = b.joint(s, j) / pa;
      // Complement through total probability, the textbook route.
      const double den = (b.success - b.joint(s, j)) / (1.0 - pa);
      EXPECT_NEAR(t.p_accept_given_select(s, j), num, 1e-10);
      EXPECT_NEAR(t.p_accept_given_not_select(s, j), den, 1e-10);
      EXPECT_NEAR(t.p_select_given_accept(s, j), b.joint(s, j) / b.success, 1e-10);
      if (den > 0.0 && num > 0.0) {
        EXPECT_NEAR(t.rho(s, j), num / den, 1e-9 * (1.0 + num / den));
      }
    }
  }
}

}  // namespace

TEST(Enumerate, TrapAtHalf) {
  const OutcomeTable t = enumerate_outcomes(trap_policy(0.5), make_two_token_trap(false));
  EXPECT_EQ(t.route, EnumerationRoute::full);
  EXPECT_NEAR(t.success_prob, 0.375, 1e-15);
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_NEAR(t.p_select_given_accept(s, 0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(t.rho(s, 0), 2.0, 1e-14);
    EXPECT_NEAR(t.rho(s, 1), 0.5, 1e-14);
  }
}

TEST(Enumerate, TrapClosedForms) {
  for (double p : {0.1, 0.25, 1.0 / 3.0, 0.5, 0.9}) {
    const OutcomeTable t = enumerate_outcomes(trap_policy(p), make_two_token_trap(false));
    const double q = 1.0 - p;
    const double posterior = 2.0 * p * p / (2.0 * p * p + q * q);
    for (std::size_t s = 0; s < 2; ++s) {
      EXPECT_NEAR(t.rho(s, 0), 2.0 * p / q, 1e-10) << p;
      EXPECT_NEAR(t.rho(s, 1), q / (2.0 * p), 1e-10) << p;
      EXPECT_NEAR(t.p_select_given_accept(s, 0), posterior, 1e-10) << p;
    }
    EXPECT_NEAR(t.success_prob, trap_success_prob(p), 1e-15);
  }
}

TEST(Enumerate, StrictTrapRhoZero) {
  const OutcomeTable t = enumerate_outcomes(trap_policy(0.4, true), make_two_token_trap(true));
  EXPECT_EQ(t.rho(0, 1), 0.0);
  EXPECT_EQ(t.rho(1, 1), 0.0);
  EXPECT_TRUE(std::isinf(t.rho(0, 0)));
}

TEST(Enumerate, ParityUniformRho) {
  const OutcomeTable t = enumerate_outcomes(uniform_policy(3, 2, 10.0), make_parity(3, {1, 2, 3}));
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_NEAR(t.rho(s, t.tau[s]), 1.25, 1e-12);
    EXPECT_LT(t.rho(s, 1 - t.tau[s]), 1.0);
  }
}

TEST(Enumerate, DeterministicPolicy) {
  for (const Problem& p : {make_two_token_trap(false), make_parity(4, {2, 3}), make_recovery(0.3, 3)}) {
    Table<double> u(p.num_steps, p.num_tasks, -50.0);
    for (std::size_t s = 0; s < p.num_steps; ++s) u(s, p.tau[s]) = 50.0;
    const OutcomeTable t = enumerate_outcomes(PolicyParams(u, 1.0), p);
    EXPECT_NEAR(t.success_prob, 1.0, 1e-12) << p.name;
    for (double r : t.error_ratio) EXPECT_NEAR(r, 0.0, 1e-12);
    EXPECT_NEAR(t.ce_loss, 0.0, 1e-12);
  }
}

TEST(Enumerate, MatchesBruteForceOnRandomPolicies) {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const double gamma = 0.5 + 2.0 * rng.uniform();
    expect_matches_brute(random_params(rng, 2, 2, gamma, 2), make_two_token_trap(trial % 2 == 0), true);
    expect_matches_brute(random_params(rng, 4, 2, gamma, 1), make_parity(4, {1, 4}), true);
    expect_matches_brute(random_params(rng, 4, 2, gamma, 1), make_parity(4, {1, 4}), false);
    expect_matches_brute(random_params(rng, 3, 2, gamma, 3), make_recovery({0.2, 0.5, 0.8}), true);
    expect_matches_brute(random_params(rng, 3, 2, gamma, 3), make_recovery({0.2, 0.5, 0.8}), false);
    expect_matches_brute(random_params(rng, 2, 2, gamma, 0), make_addition(1), true);
  }
}

TEST(Enumerate, ShortcutsAgreeWithFullEnumeration) {
  Rng rng(8);
  for (std::size_t d = 2; d <= 6; ++d) {
    const Problem p = make_parity(d, {1, d});
    const auto params = random_params(rng, d, 2, 1.0, 1);
    const OutcomeTable fast = enumerate_outcomes(params, p);
    const OutcomeTable full = enumerate_outcomes(params, p, {1e8, false});
    EXPECT_EQ(fast.route, EnumerationRoute::trace_shortcut);
    EXPECT_EQ(full.route, EnumerationRoute::full);
    EXPECT_NEAR(fast.success_prob, full.success_prob, 1e-12);
    for (std::size_t i = 0; i < fast.rho.flat().size(); ++i) {
      EXPECT_NEAR(fast.rho.flat()[i], full.rho.flat()[i], 1e-10);
    }
  }
}

TEST(Enumerate, CapacityError) {
  const Problem p = make_parity(12, {1});
  try {
    enumerate_outcomes(uniform_policy(12, 2, 1.0), p, {1e6, false});
    FAIL() << "expected CapacityError";
  } catch (const CapacityError& e) {
    EXPECT_DOUBLE_EQ(e.required_terms(), 4096.0 * 4096.0);
  }
  EXPECT_NO_THROW(enumerate_outcomes(uniform_policy(12, 2, 1.0), p, {1e6, true}));
}

TEST(Enumerate, ProbabilitiesInRange) {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const OutcomeTable t = enumerate_outcomes(random_params(rng, 3, 2, 2.0, 2), make_parity(3, {2}));
    EXPECT_GE(t.success_prob, 0.0);
    EXPECT_LE(t.success_prob, 1.0);
    for (double x : t.p_select_given_accept.flat()) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0 + 1e-12);
    }
    for (double r : t.error_ratio) EXPECT_GE(r, 0.0);
    EXPECT_GE(t.ce_loss, 0.0);
  }
}

TEST(Advantage, Conventions) {
  EXPECT_EQ(advantage_from_conditionals(0.0, 0.3), 0.0);
  EXPECT_EQ(advantage_from_conditionals(0.0, 0.0), 0.0);
  EXPECT_TRUE(std::isinf(advantage_from_conditionals(0.2, 0.0)));
  EXPECT_DOUBLE_EQ(advantage_from_conditionals(0.2, 0.4), 0.5);
  EXPECT_EQ(reciprocal(kInfinity), 0.0);
  EXPECT_TRUE(std::isinf(reciprocal(0.0)));
}

TEST(Advantage, RecoveryIsInverseLambda) {
  Rng rng(3);
  for (double lambda : {0.25, 0.5, 0.75}) {
    for (int draw = 0; draw < 5; ++draw) {
      const auto params = random_params(rng, 3, 2, 1.0 + rng.uniform(), 2);
      const OutcomeTable t = enumerate_outcomes(params, make_recovery(lambda, 3));
      for (std::size_t s = 0; s < 3; ++s) {
        EXPECT_NEAR(t.rho(s, 0), 1.0 / lambda, 1e-10);
        EXPECT_LT(t.rho(s, 1), 1.0);
      }
    }
  }
}

TEST(Advantage, MonteCarloTrap) {
  Rng rng(12);
  const auto est = estimate_advantage_ratio(trap_policy(0.5), make_two_token_trap(false), 0, 0, 100000, rng);
  ASSERT_TRUE(est.estimable);
  EXPECT_NEAR(est.estimate, 2.0, 3.0 * est.std_error);
}

TEST(Advantage, MonteCarloRecovery) {
  Rng rng(13);
  const auto est = estimate_advantage_ratio(uniform_policy(3, 2, 1.0), make_recovery(0.5, 3), 1, 0, 100000, rng);
  ASSERT_TRUE(est.estimable);
  EXPECT_NEAR(est.estimate, 2.0, 3.0 * est.std_error);
}

TEST(Advantage, DeterministicNotEstimable) {
  Rng rng(14);
  const auto params = PolicyParams(Table<double>::from_rows({{1e6, -1e6}, {1e6, -1e6}}), 1.0);
  const auto est = estimate_advantage_ratio(params, make_two_token_trap(false), 0, 0, 1000, rng);
  EXPECT_FALSE(est.estimable);
  EXPECT_EQ(est.n_other, 0u);
}

TEST(Margin, ParityHalvesWithD) {
  EXPECT_NEAR(margin_alpha(uniform_policy(4, 2, 1.0), make_parity(4, {1, 2, 3, 4})).alpha, 0.125, 1e-12);
  for (std::size_t d = 2; d <= 8; ++d) {
    const auto m = margin_alpha(uniform_policy(d, 2, 1.0), make_parity(d, {1, d}));
    EXPECT_TRUE(m.satisfied);
    EXPECT_NEAR(m.alpha, std::ldexp(1.0, -static_cast<int>(d - 1)), 1e-10);
  }
}

TEST(Margin, RecoveryHalf) {
  const auto m = margin_alpha(correct_prob_policy({0, 0, 0}, 2, 0.3, 1.0), make_recovery(0.5, 3));
  EXPECT_TRUE(m.satisfied);
  EXPECT_NEAR(m.alpha, 1.0, 1e-12);
}

TEST(Margin, TrapBelowCriticalViolates) {
  const auto m = margin_alpha(trap_policy(0.25), make_two_token_trap(false));
  EXPECT_FALSE(m.satisfied);
  EXPECT_NEAR(m.alpha, 2.0 / 3.0 - 1.0, 1e-12);
  int correct_violations = 0;
  for (const auto& v : m.violations) {
    if (v.task == 0) {
      ++correct_violations;
      EXPECT_NEAR(v.rho, 2.0 / 3.0, 1e-12);
    }
  }
  EXPECT_EQ(correct_violations, 2);
}

TEST(ExpectedUpdate, TrapHalf) {
  const OutcomeTable t = enumerate_outcomes(trap_policy(0.5), make_two_token_trap(false));
  EXPECT_NEAR(expected_update(t, 0, 0, 0.1, 1.0), 1.0 / 60.0, 1e-15);
}

TEST(ExpectedUpdate, TrapCriticalIsZero) {
  const OutcomeTable t = enumerate_outcomes(trap_policy(1.0 / 3.0), make_two_token_trap(false));
  EXPECT_NEAR(expected_update(t, 0, 0, 0.1, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(expected_update(t, 1, 1, 0.1, 1.0), 0.0, 1e-15);
}

TEST(ExpectedUpdate, RhoOneIsZero) {
  OutcomeTable t = enumerate_outcomes(trap_policy(0.5), make_two_token_trap(false));
  t.rho(0, 0) = 1.0;
  EXPECT_EQ(expected_update(t, 0, 0, 0.3, 2.0), 0.0);
}

TEST(ExpectedUpdate, RhoZeroBranch) {
  const OutcomeTable t = enumerate_outcomes(trap_policy(0.4, true), make_two_token_trap(true));
  EXPECT_NEAR(expected_update(t, 0, 1, 0.1, 1.0), -0.1 * 0.6, 1e-15);
}

TEST(ExpectedUpdate, EqualsPosteriorMinusPrior) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto params = random_params(rng, 3, 2, 1.5, 2);
    const OutcomeTable t = enumerate_outcomes(params, make_parity(3, {1, 3}));
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < 2; ++j) {
        const double direct = 0.2 * 1.5 * 1.5 * (t.p_select_given_accept(s, j) - t.policy_prob(s, j));
        EXPECT_NEAR(expected_update(t, s, j, 0.2, 1.5), direct, 1e-12);
      }
    }
  }
}

TEST(Bounds, Examples) {
  Table<double> u = Table<double>::from_rows({{40.0, -40.0}, {40.0, -40.0}});
  const auto det = bound_report(enumerate_outcomes(PolicyParams(u, 1.0), make_two_token_trap(false)));
  EXPECT_NEAR(det.success_prob, 1.0, 1e-12);
  EXPECT_NEAR(det.verifier_lower_bound, 1.0, 1e-12);
  EXPECT_NEAR(det.ce_loss, 0.0, 1e-12);
  EXPECT_TRUE(det.verifier_bound_holds && det.loss_bound_holds);

  const auto hi = bound_report(enumerate_outcomes(trap_policy(0.9), make_two_token_trap(false)));
  EXPECT_NEAR(hi.success_prob, 0.815, 1e-12);
  EXPECT_NEAR(hi.verifier_lower_bound, 1.0 - 2.0 / 9.0, 1e-12);
  EXPECT_TRUE(hi.verifier_bound_holds);

  const auto half = bound_report(enumerate_outcomes(trap_policy(0.5), make_two_token_trap(false)));
  EXPECT_NEAR(half.verifier_lower_bound, -1.0, 1e-12);
  EXPECT_NEAR(half.ce_loss, 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(half.sum_error_ratio, 2.0, 1e-12);
  EXPECT_TRUE(half.loss_bound_holds);
}

TEST(Bounds, HoldOnRandomPairs) {
  Rng rng(55);
  for (int trial = 0; trial < 60; ++trial) {
    const double gamma = 0.5 + 3.0 * rng.uniform();
    const Problem p = trial % 3 == 0   ? make_two_token_trap(false)
                      : trial % 3 == 1 ? make_parity(1 + rng.below(5), {1})
                                       : make_recovery(0.1 + 0.8 * rng.uniform(), 1 + rng.below(6));
    const OutcomeTable t = enumerate_outcomes(random_params(rng, p.num_steps, 2, gamma, 0), p);
    const auto b = bound_report(t);
    EXPECT_TRUE(b.verifier_bound_holds) << p.name;
    EXPECT_TRUE(b.loss_bound_holds) << p.name;
    EXPECT_LT(bayes_residual(t), 1e-10) << p.name;
  }
}

TEST(Bounds, BayesResidualDetectsCorruption) {
  OutcomeTable t = enumerate_outcomes(trap_policy(0.6), make_two_token_trap(false));
  EXPECT_LT(bayes_residual(t), 1e-12);
  t.p_select_given_accept(1, 0) += 1e-6;
  EXPECT_GT(bayes_residual(t), 1e-7);
}

TEST(MeanField, Drift) {
  EXPECT_EQ(mean_field_drift(1.0 / 3.0, 2.0 / 3.0, 0.1), 0.0);
  const double dz = mean_field_drift(0.5, 0.5, 0.1);
  EXPECT_NEAR(dz, 1.0 / 30.0, 1e-16);
  EXPECT_NEAR(sigmoid(dz), 0.5083325618141193, 1e-15);
  EXPECT_NEAR(mean_field_drift(0.25, 0.75, 0.1), -0.01363636363636364, 1e-16);
}

TEST(MeanField, DriftSignMatchesCriticalPoint) {
  for (int i = 1; i < 1000; ++i) {
    const double p = i / 1000.0;
    const double dz = mean_field_drift(p, 1.0 - p, 0.1);
    if (p > 1.0 / 3.0) {
      EXPECT_GT(dz, 0.0) << p;
    } else {
      EXPECT_LT(dz, 0.0) << p;
    }
  }
}

TEST(MeanField, DriftIsExpectedUpdateGap) {
  // The mean-field step is the exact expected change of z_1 - z_2 at gamma = 1.
  for (double p : {0.1, 0.3, 0.5, 0.8}) {
    const OutcomeTable t = enumerate_outcomes(trap_policy(p), make_two_token_trap(false));
    const double gap = expected_update(t, 0, 0, 0.1, 1.0) - expected_update(t, 0, 1, 0.1, 1.0);
    EXPECT_NEAR(gap, mean_field_drift(p, 1.0 - p, 0.1), 1e-14);
  }
}

TEST(MeanField, Limits) {
  const auto up = mean_field_trajectory(0.34, 0.1, 100000, 1e-4);
  EXPECT_EQ(up.limit, MeanFieldLimit::success);
  EXPECT_NEAR(up.success_prob.back(), 1.0, 1e-3);
  const auto down = mean_field_trajectory(0.32, 0.1, 100000, 1e-4);
  EXPECT_EQ(down.limit, MeanFieldLimit::collapse);
  EXPECT_NEAR(down.success_prob.back(), 0.5, 1e-3);
  const auto fast = mean_field_trajectory(0.9, 0.1, 100000, 1e-4);
  EXPECT_EQ(fast.limit, MeanFieldLimit::success);
  for (std::size_t t = 1; t < fast.p.size(); ++t) EXPECT_GT(fast.p[t], fast.p[t - 1]);
  for (std::size_t t = 0; t < fast.p.size(); ++t) EXPECT_NEAR(fast.p[t], sigmoid(fast.z[t]), 1e-12);
}

TEST(MeanField, Validation) {
  EXPECT_THROW(mean_field_trajectory(1.0 / 3.0, 0.1, 10, 1e-4), ValidationError);
  EXPECT_THROW(MeanFieldState::from_probability(0.0), ValidationError);
  EXPECT_EQ(mean_field_trajectory(0.5, 0.1, 3, 1e-4).limit, MeanFieldLimit::undetermined);
}
