#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "rlvr/core_model.hpp"
#include "rlvr/problems.hpp"
#include "rlvr/random.hpp"
#include "rlvr/rollout.hpp"

using namespace rlvr;

namespace {

PolicyParams random_params(Rng& rng, std::size_t S, std::size_t J, double gamma, std::size_t max_dead) {
  Table<double> u(S, J);
  for (double& x : u.flat()) x = 4.0 * rng.uniform() - 2.0;
  std::vector<std::size_t> dead(S);
  for (auto& w : dead) w = rng.below(max_dead + 1);
  return PolicyParams(u, gamma, dead);
}

}  // namespace

TEST(Token, EqualityNeedsValueAndTag) {
  EXPECT_EQ((Token{3, 1}), (Token{3, 1}));
  EXPECT_NE((Token{3, 1}), (Token{3, 0}));
  EXPECT_NE((Token{3, std::nullopt}), (Token{3, 0}));
  EXPECT_NE((Token{2, 1}), (Token{3, 1}));
  EXPECT_TRUE(Token::dead().is_dead());
}

TEST(Prefix, StepIsGeneratedLength) {
  Prefix p{{Token{1, {}}, Token{2, {}}}, {}};
  EXPECT_EQ(p.step(), 0u);
  p.generated.push_back(Token{5, 0});
  EXPECT_EQ(p.step(), 1u);
  EXPECT_EQ(p.from_end(1), (Token{5, 0}));
  EXPECT_EQ(p.from_end(2), (Token{2, {}}));
  EXPECT_THROW(p.from_end(4), std::out_of_range);
}

TEST(PolicyParams, RejectsBadInput) {
  EXPECT_THROW(PolicyParams(Table<double>(2, 2), 0.0), ValidationError);
  EXPECT_THROW(PolicyParams(Table<double>(2, 2), -1.0), ValidationError);
  EXPECT_THROW(PolicyParams(Table<double>(0, 2), 1.0), ValidationError);
  EXPECT_THROW(PolicyParams(Table<double>(2, 2), 1.0, {0}), ValidationError);
  Table<double> u(1, 2);
  u(0, 0) = std::nan("");
  EXPECT_THROW(PolicyParams(u, 1.0), ValidationError);
}

TEST(StepDistribution, ConstantRowIsUniform) {
  for (double c : {-3.0, 0.0, 7.5}) {
    const auto d = step_distribution(PolicyParams(Table<double>(1, 2, c), 2.0), 0);
    EXPECT_DOUBLE_EQ(d.task_probs[0], 0.5);
    EXPECT_DOUBLE_EQ(d.task_probs[1], 0.5);
    EXPECT_EQ(d.dead_mass, 0.0);
  }
}

TEST(StepDistribution, HandSoftmax) {
  const auto d = step_distribution(PolicyParams(Table<double>::from_rows({{std::log(3.0), 0.0}}), 1.0), 0);
  EXPECT_NEAR(d.task_probs[0], 0.75, 1e-15);
  EXPECT_NEAR(d.task_probs[1], 0.25, 1e-15);
}

TEST(StepDistribution, DeadTokensShareZeroLogit) {
  const auto d = step_distribution(PolicyParams(Table<double>(1, 2, 0.0), 1.0, {2}), 0);
  EXPECT_NEAR(d.task_probs[0], 0.25, 1e-15);
  EXPECT_NEAR(d.task_probs[1], 0.25, 1e-15);
  EXPECT_NEAR(d.dead_mass, 0.5, 1e-15);
}

TEST(StepDistribution, StepOutOfRange) {
  EXPECT_THROW(step_distribution(uniform_policy(2, 2, 1.0), 2), std::out_of_range);
}

TEST(StepDistribution, MatchesFormulaOnRandomParams) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto params = random_params(rng, 3, 4, 0.5 + 3.0 * rng.uniform(), 5);
    for (std::size_t s = 0; s < 3; ++s) {
      const auto d = step_distribution(params, s);
      double z = static_cast<double>(params.dead_tokens()[s]);
      for (std::size_t j = 0; j < 4; ++j) z += std::exp(params.gamma() * params.logit(s, j));
      double total = d.dead_mass;
      for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_NEAR(d.task_probs[j], std::exp(params.gamma() * params.logit(s, j)) / z, 1e-12);
        EXPECT_GE(d.task_probs[j], 0.0);
        EXPECT_NEAR(std::log(d.task_probs[j]), log_task_prob(params, s, j), 1e-12);
        total += d.task_probs[j];
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(StepDistribution, StableForHugeLogits) {
  const auto params = PolicyParams(Table<double>::from_rows({{1e6, -1e6}}), 10.0, {3});
  const auto d = step_distribution(params, 0);
  EXPECT_EQ(d.task_probs[0], 1.0);
  EXPECT_EQ(d.task_probs[1], 0.0);
  EXPECT_EQ(d.dead_mass, 0.0);
  EXPECT_TRUE(std::isfinite(log_task_prob(params, 0, 1)));
}

TEST(InitFromTaskProbs, UniformRoundTrip) {
  const auto params = init_from_task_probs(Table<double>(3, 2, 0.5), 10.0);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(params.logit(s, 0), params.logit(s, 1));
    EXPECT_NEAR(step_distribution(params, s).task_probs[0], 0.5, 1e-15);
  }
}

TEST(InitFromTaskProbs, QuarterGivesLogThirdGap) {
  const auto params = correct_prob_policy({0, 0}, 2, 0.25, 1.0);
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_NEAR(params.logit(s, 0) - params.logit(s, 1), std::log(1.0 / 3.0), 1e-15);
    const auto d = step_distribution(params, s);
    EXPECT_NEAR(d.task_probs[0], 0.25, 1e-15);
    EXPECT_NEAR(d.task_probs[1], 0.75, 1e-15);
  }
}

TEST(InitFromTaskProbs, CriticalThird) {
  const auto params = correct_prob_policy({0, 0}, 2, 1.0 / 3.0, 1.0);
  EXPECT_NEAR(step_distribution(params, 0).task_probs[0], 1.0 / 3.0, 1e-15);
}

TEST(InitFromTaskProbs, WithDeadTokens) {
  const auto params = init_from_task_probs(Table<double>::from_rows({{0.2, 0.3}, {0.1, 0.1}}), 2.0, {1, 4});
  const auto d0 = step_distribution(params, 0);
  const auto d1 = step_distribution(params, 1);
  EXPECT_NEAR(d0.task_probs[0], 0.2, 1e-14);
  EXPECT_NEAR(d0.dead_mass, 0.5, 1e-14);
  EXPECT_NEAR(d1.task_probs[1], 0.1, 1e-14);
  EXPECT_NEAR(d1.dead_mass, 0.8, 1e-14);
}

TEST(InitFromTaskProbs, Rejections) {
  EXPECT_THROW(init_from_task_probs(Table<double>::from_rows({{0.0, 1.0}}), 1.0), ValidationError);
  EXPECT_THROW(init_from_task_probs(Table<double>::from_rows({{0.7, 0.7}}), 1.0), ValidationError);
  EXPECT_THROW(init_from_task_probs(Table<double>::from_rows({{0.4, 0.4}}), 1.0), ValidationError);
  EXPECT_THROW(init_from_task_probs(Table<double>::from_rows({{0.5, 0.5}}), 1.0, {2}), ValidationError);
}

TEST(ApplyUpdate, ZeroQLeavesParams) {
  const auto params = correct_prob_policy({0, 1}, 2, 0.3, 2.0);
  EXPECT_EQ(apply_update(params, Table<double>(2, 2, 0.0), 0.1), params);
}

TEST(ApplyUpdate, SingleEntry) {
  const auto params = uniform_policy(2, 2, 1.0);
  Table<double> q(2, 2);
  q(0, 0) = 0.5;
  const auto next = apply_update(params, q, 0.1);
  EXPECT_NEAR(next.logit(0, 0), 0.05, 1e-15);
  EXPECT_EQ(next.logit(0, 1), 0.0);
  EXPECT_EQ(next.logit(1, 0), 0.0);
  EXPECT_EQ(next.logit(1, 1), 0.0);
}

TEST(ApplyUpdate, ShapeMismatch) {
  EXPECT_THROW(apply_update(uniform_policy(2, 2, 1.0), Table<double>(3, 2), 0.1), ValidationError);
  EXPECT_THROW(apply_update(uniform_policy(2, 2, 1.0), Table<double>(2, 2), 0.0), ValidationError);
}

TEST(ApplyUpdate, TokenLogitMovesByEtaGammaSquaredQ) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const double gamma = 0.5 + 5.0 * rng.uniform();
    const double eta = 0.01 + rng.uniform();
    const auto params = random_params(rng, 3, 3, gamma, 2);
    Table<double> q(3, 3);
    for (double& x : q.flat()) x = 2.0 * rng.uniform() - 1.0;
    const auto next = apply_update(params, q, eta);
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(logit_change(params, next, s, j), eta * gamma * gamma * q(s, j), 1e-12);
      }
      EXPECT_NEAR(logit_gap_change(params, next, s, 0, 1), eta * gamma * gamma * (q(s, 0) - q(s, 1)), 1e-12);
      EXPECT_NEAR(logit_gap_change(params, next, s, 0, std::nullopt), eta * gamma * gamma * q(s, 0), 1e-12);
    }
  }
}

TEST(ApplyUpdate, LipschitzFloor) {
  // Adversarial Q in [-1, 1] with eta below 1 / (4 gamma^2).
  Rng rng(17);
  for (int trial = 0; trial < 2000; ++trial) {
    const double gamma = 0.5 + 4.0 * rng.uniform();
    const double eta = rng.uniform() / (4.0 * gamma * gamma);
    const auto params = random_params(rng, 2, 3, gamma, 3);
    Table<double> q(2, 3);
    for (double& x : q.flat()) x = rng.bernoulli(0.5) ? 1.0 : -1.0;
    q(0, 0) = -1.0;
    const auto next = apply_update(params, q, eta);
    for (std::size_t s = 0; s < 2; ++s) {
      const double before = step_distribution(params, s).task_probs[0];
      const double after = step_distribution(next, s).task_probs[0];
      EXPECT_GE(after, before - 2.0 * eta * gamma * gamma - 1e-12);
    }
  }
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  Rng a = stream(42, StreamDomain::batch, 3, 7);
  Rng b = stream(42, StreamDomain::batch, 3, 7);
  Rng c = stream(42, StreamDomain::batch, 3, 8);
  Rng d = stream(42, StreamDomain::metrics, 3, 7);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, c());
  EXPECT_NE(x, d());
  EXPECT_NE(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
  EXPECT_NE(derive_seed(1, 0, 0), derive_seed(1, 1, 0));
}

TEST(Rng, UniformMoments) {
  Rng rng(3);
  const int n = 200000;
  double sum = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
  EXPECT_NEAR(sq / n, 1.0 / 3.0, 5e-3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) ++counts[rng.below(5)];
  for (int c : counts) EXPECT_NEAR(c, n / 5, 5.0 * std::sqrt(n * 0.2 * 0.8));
}

TEST(Rollout, DeterministicPolicyFollowsTau) {
  const Problem trap = make_two_token_trap(false);
  const auto params = PolicyParams(Table<double>::from_rows({{1e6, -1e6}, {1e6, -1e6}}), 1.0);
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const Rollout r = sample_rollout(params, trap, rng);
    EXPECT_EQ(r.sequence.generated, trap.correct_completion(r.sequence.prompt));
    EXPECT_TRUE(r.verified);
    EXPECT_EQ(r.accept_probability, 1.0);
  }
}

TEST(Rollout, SameSeedSameRollout) {
  const Problem parity = make_parity(5, {1, 3, 4});
  const auto params = correct_prob_policy(parity.tau, 2, 0.6, 3.0);
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    Rng a(seed);
    Rng b(seed);
    const Rollout x = sample_rollout(params, parity, a);
    const Rollout y = sample_rollout(params, parity, b);
    EXPECT_EQ(x.sequence.prompt, y.sequence.prompt);
    EXPECT_EQ(x.sequence.generated, y.sequence.generated);
    EXPECT_EQ(x.trace, y.trace);
    EXPECT_EQ(x.verified, y.verified);
  }
}

TEST(Rollout, DeadTokensAreSampled) {
  const Problem rec = make_recovery(0.5, 1);
  const auto params = PolicyParams(Table<double>(1, 2, 0.0), 1.0, {2});
  Rng rng(1);
  int dead = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const Rollout r = sample_rollout(params, rec, rng);
    if (!r.trace[0]) {
      ++dead;
      EXPECT_TRUE(r.sequence.generated[0].is_dead());
    }
  }
  EXPECT_NEAR(static_cast<double>(dead) / n, 0.5, 3.0 * std::sqrt(0.25 / n));
}
