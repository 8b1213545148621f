#pragma once

// Positive-sample REINFORCE: rejection-sample B verified rollouts, form the
// batch statistic Q, move the logits by eta * gamma * Q, repeat. Plus the
// hyperparameter planner that turns a target error into (eta, T, B).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rlvr/analysis.hpp"
#include "rlvr/core_model.hpp"
#include "rlvr/errors.hpp"
#include "rlvr/parallel.hpp"
#include "rlvr/problem.hpp"
#include "rlvr/random.hpp"
#include "rlvr/rollout.hpp"

namespace rlvr {

enum class MetricsMode { exact, monte_carlo };

struct TrainConfig {
  double eta = 0.1;
  std::size_t batch_size = 256;
  std::size_t iterations = 2000;
  std::size_t max_resample = 1'000'000;  // rejected draws allowed per batch slot
  std::uint64_t seed = 0;
  MetricsMode metrics_mode = MetricsMode::exact;
  std::size_t mc_samples = 10'000;
  std::optional<double> stop_at_success;
  std::size_t threads = 1;
  bool keep_records = true;
};

inline void validate(const TrainConfig& c) {
  if (!(c.eta > 0.0) || !std::isfinite(c.eta)) throw ValidationError("train: eta must be > 0");
  if (c.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (c.iterations < 1) throw ValidationError("train: iterations must be >= 1");
  if (c.max_resample < 1) throw ValidationError("train: max_resample must be >= 1");
  if (c.metrics_mode == MetricsMode::monte_carlo && c.mc_samples < 1) {
    throw ValidationError("train: mc_samples must be >= 1");
  }
  if (c.stop_at_success && !(*c.stop_at_success > 0.0 && *c.stop_at_success <= 1.0)) {
    throw ValidationError("train: stop_at_success must be in (0, 1]");
  }
}

/// Snapshot of the policy at the start of an iteration (before its update).
struct MetricsRecord {
  std::size_t iteration = 0;
  double success_prob = 0.0;
  std::size_t success_samples = 0;  // 0 means success_prob is exact
  std::vector<double> correct_prob;
  std::optional<Table<double>> rho;  // exact mode only
  std::optional<double> margin_alpha;
  bool margin_ok = false;
  std::vector<double> error_ratios;
  double verifier_lower_bound = 0.0;
  double ce_loss = 0.0;
  std::optional<double> acceptance_rate;  // unset when training stopped before sampling
};

struct PositiveBatch {
  std::vector<Rollout> rollouts;
  double acceptance_rate = 0.0;
  std::uint64_t draws = 0;
};

/// Fills B slots, each by drawing rollouts from its own stream
/// (seed, iteration, slot) until one is verified, so the accepted rollouts are
/// i.i.d. from P(. | V=1) and independent of the thread count.
inline PositiveBatch collect_positive_batch(const SamplingPolicy& policy, const Problem& problem,
                                            std::size_t batch_size, std::size_t max_resample,
                                            std::uint64_t seed, std::size_t iteration,
                                            std::size_t threads = 1) {
  if (batch_size < 1) throw ValidationError("collect_positive_batch: batch size must be >= 1");
  PositiveBatch out;
  out.rollouts.resize(batch_size);
  std::vector<std::uint64_t> draws(batch_size, 0);
  parallel_for(batch_size, threads, [&](std::size_t slot) {
    Rng rng = stream(seed, StreamDomain::batch, iteration, slot);
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt >= max_resample) throw RewardStarvation(iteration, slot, attempt);
      Rollout r = sample_rollout(policy, problem, rng);
      if (r.verified) {
        draws[slot] = attempt + 1;
        out.rollouts[slot] = std::move(r);
        return;
      }
    }
  });
  for (auto d : draws) out.draws += d;
  out.acceptance_rate = static_cast<double>(batch_size) / static_cast<double>(out.draws);
  return out;
}

inline PositiveBatch collect_positive_batch(const PolicyParams& params, const Problem& problem,
                                            std::size_t batch_size, std::size_t max_resample,
                                            std::uint64_t seed, std::size_t iteration,
                                            std::size_t threads = 1) {
  check_compatible(params, problem);
  return collect_positive_batch(SamplingPolicy(params), problem, batch_size, max_resample, seed,
                                iteration, threads);
}

/// Q[s][j] = mean over the batch of 1{task j selected at step s} - pi(s, j).
inline Table<double> compute_q_stats(std::span<const Rollout> batch, const SamplingPolicy& policy,
                                     std::size_t num_tasks) {
  if (batch.empty()) throw ValidationError("compute_q_stats: empty batch");
  const std::size_t S = policy.num_steps();
  Table<double> q(S, num_tasks);
  for (const Rollout& r : batch) {
    if (r.trace.size() != S) throw ValidationError("compute_q_stats: rollout length mismatch");
    for (std::size_t s = 0; s < S; ++s) {
      if (r.trace[s]) q(s, *r.trace[s]) += 1.0;
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t s = 0; s < S; ++s) {
    const auto& dist = policy.step(s);
    for (std::size_t j = 0; j < num_tasks; ++j) q(s, j) = q(s, j) * inv_b - dist.task_probs[j];
  }
  return q;
}

inline Table<double> compute_q_stats(std::span<const Rollout> batch, const PolicyParams& params) {
  return compute_q_stats(batch, SamplingPolicy(params), params.num_tasks());
}

struct TrainResult {
  PolicyParams final_params;
  std::vector<MetricsRecord> records;
  std::size_t updates = 0;  // iterations whose update was applied
  bool reached_target = false;
  double final_success_prob = 0.0;
  std::vector<double> final_correct_prob;
  std::optional<double> last_acceptance_rate;
  std::uint64_t rollouts_drawn = 0;
  // Iterates where the correct-task probability fell by more than 2 eta gamma^2
  // (only counted when eta < 1 / (4 gamma^2)).
  std::size_t lipschitz_violations = 0;
  // Iterates where the pointwise margin check failed (exact mode only).
  std::size_t margin_violations = 0;
};

namespace detail {

inline bool exact_metrics_available(const Problem& problem) {
  return problem.enumerable() || problem.step_factors || problem.trace_acceptance;
}

inline MetricsRecord measure(const PolicyParams& params, const Problem& problem,
                             const TrainConfig& config, std::size_t iteration) {
  MetricsRecord m;
  m.iteration = iteration;
  const std::size_t S = problem.num_steps;
  m.correct_prob.resize(S);
  m.error_ratios.resize(S);
  if (config.metrics_mode == MetricsMode::exact) {
    const OutcomeTable table = enumerate_outcomes(params, problem);
    const MarginReport margin = margin_alpha(table);
    m.success_prob = table.success_prob;
    m.rho = table.rho;
    m.margin_alpha = margin.alpha;
    m.margin_ok = margin.satisfied;
    for (std::size_t s = 0; s < S; ++s) {
      m.correct_prob[s] = table.correct_prob(s);
      m.error_ratios[s] = table.error_ratio[s];
    }
    m.ce_loss = table.ce_loss;
  } else {
    const SamplingPolicy policy(params);
    Rng rng = stream(config.seed, StreamDomain::metrics, iteration, 0);
    std::size_t accepted = 0;
    for (std::size_t i = 0; i < config.mc_samples; ++i) {
      accepted += sample_rollout(policy, problem, rng).verified;
    }
    m.success_prob = static_cast<double>(accepted) / static_cast<double>(config.mc_samples);
    m.success_samples = config.mc_samples;
    m.ce_loss = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      m.correct_prob[s] = policy.step(s).task_probs[problem.tau[s]];
      m.error_ratios[s] = 1.0 / m.correct_prob[s] - 1.0;
      m.ce_loss -= log_task_prob(params, s, problem.tau[s]);
    }
  }
  double sum_r = 0.0;
  for (double r : m.error_ratios) sum_r += r;
  m.verifier_lower_bound = 1.0 - sum_r;
  return m;
}

}  // namespace detail

/// Called with each record as it is produced.
using MetricsObserver = std::function<void(const MetricsRecord&)>;

/// Runs up to config.iterations rounds of collect -> Q -> update starting from
/// params0. Records are taken before each update. With stop_at_success the
/// run ends at the first iterate whose success probability reaches the target.
inline TrainResult train(const PolicyParams& params0, const Problem& problem,
                         const TrainConfig& config, const MetricsObserver& observer = {}) {
  validate(config);
  check_compatible(params0, problem);
  if (config.metrics_mode == MetricsMode::exact && !detail::exact_metrics_available(problem)) {
    throw ValidationError("train: exact metrics need an enumerable problem; use monte_carlo");
  }
  const double gamma = params0.gamma();
  const double lipschitz_slack = 2.0 * config.eta * gamma * gamma;
  const bool lipschitz_applies = config.eta < 1.0 / (4.0 * gamma * gamma);

  TrainResult result{params0, {}, 0, false, 0.0, {}, std::nullopt, 0, 0, 0};
  PolicyParams params = params0;
  const auto emit = [&](const MetricsRecord& m) {
    if (!m.margin_ok && m.rho) ++result.margin_violations;
    if (observer) observer(m);
    if (config.keep_records) result.records.push_back(m);
  };

  std::optional<MetricsRecord> pending;
  for (std::size_t t = 0; t < config.iterations; ++t) {
    MetricsRecord m = detail::measure(params, problem, config, t);
    if (config.stop_at_success && m.success_prob >= *config.stop_at_success) {
      result.reached_target = true;
      pending = std::move(m);
      break;
    }
    const SamplingPolicy policy(params);
    PositiveBatch batch = collect_positive_batch(policy, problem, config.batch_size,
                                                 config.max_resample, config.seed, t,
                                                 config.threads);
    result.rollouts_drawn += batch.draws;
    m.acceptance_rate = batch.acceptance_rate;
    result.last_acceptance_rate = batch.acceptance_rate;
    emit(m);

    const Table<double> q = compute_q_stats(batch.rollouts, policy, problem.num_tasks);
    PolicyParams next = apply_update(params, q, config.eta);
    if (lipschitz_applies) {
      for (std::size_t s = 0; s < problem.num_steps; ++s) {
        const double before = policy.step(s).task_probs[problem.tau[s]];
        const double after = step_distribution(next, s).task_probs[problem.tau[s]];
        if (after < before - lipschitz_slack - 1e-12) {
          ++result.lipschitz_violations;
          break;
        }
      }
    }
    params = std::move(next);
    ++result.updates;
  }

  MetricsRecord last = pending ? std::move(*pending)
                               : detail::measure(params, problem, config, result.updates);
  if (!pending && config.stop_at_success && last.success_prob >= *config.stop_at_success) {
    result.reached_target = true;
  }
  result.final_success_prob = last.success_prob;
  result.final_correct_prob = last.correct_prob;
  if (pending) emit(last);
  result.final_params = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------
// Hyperparameter planner with the explicit constants of the convergence
// theorem: eps~ = min(eps, 1/2, p0_min) / S, eta = eps~ / (8 gamma^2),
// T = ceil(96 (1 + 1/alpha) log(1/eps~) / eps~^2),
// B = 128 (1 + 1/alpha)^2 log(2 J S T / delta) / eps~^2.

struct PlannerInputs {
  double epsilon = 0.1;
  double delta = 0.1;
  double alpha = 1.0;  // +inf is accepted and means 1 / alpha = 0
  double p0_min = 0.5;
  std::size_t steps = 2;
  std::size_t tasks = 2;
  double gamma = 10.0;
};

struct HyperparameterPlan {
  double eps_tilde = 0.0;
  double eta = 0.0;
  std::uint64_t iterations = 0;
  double batch_size_real = 0.0;
  std::uint64_t batch_size = 0;
};

inline HyperparameterPlan plan_hyperparameters(const PlannerInputs& in) {
  if (!(in.epsilon > 0.0 && in.epsilon < 0.5)) throw ValidationError("plan: epsilon must be in (0, 1/2)");
  if (!(in.delta > 0.0 && in.delta < 1.0)) throw ValidationError("plan: delta must be in (0, 1)");
  if (!(in.alpha > 0.0)) throw ValidationError("plan: alpha must be positive");
  if (!(in.p0_min > 0.0 && in.p0_min < 1.0)) throw ValidationError("plan: p0_min must be in (0, 1)");
  if (in.steps < 1 || in.tasks < 1) throw ValidationError("plan: S and J must be >= 1");
  if (!(in.gamma > 0.0) || !std::isfinite(in.gamma)) throw ValidationError("plan: gamma must be > 0");

  HyperparameterPlan p;
  const double inv_alpha = std::isinf(in.alpha) ? 0.0 : 1.0 / in.alpha;
  p.eps_tilde = std::min({in.epsilon, 0.5, in.p0_min}) / static_cast<double>(in.steps);
  p.eta = p.eps_tilde / (8.0 * in.gamma * in.gamma);
  const double e2 = p.eps_tilde * p.eps_tilde;
  p.iterations = static_cast<std::uint64_t>(
      std::ceil(96.0 * (1.0 + inv_alpha) * std::log(1.0 / p.eps_tilde) / e2));
  const double jst = 2.0 * static_cast<double>(in.tasks) * static_cast<double>(in.steps) *
                     static_cast<double>(p.iterations);
  p.batch_size_real = 128.0 * (1.0 + inv_alpha) * (1.0 + inv_alpha) * std::log(jst / in.delta) / e2;
  p.batch_size = static_cast<std::uint64_t>(std::ceil(p.batch_size_real));
  return p;
}

/// Caps T * B at max_rollouts by shrinking B (eta and T are kept, so the
/// expected drift per iteration is unchanged). Returns the plan untouched when
/// it already fits.
inline HyperparameterPlan fit_rollout_budget(HyperparameterPlan plan, double max_rollouts,
                                             bool* substituted = nullptr) {
  const double total = static_cast<double>(plan.iterations) * static_cast<double>(plan.batch_size);
  const bool over = total > max_rollouts;
  if (substituted) *substituted = over;
  if (over) {
    plan.batch_size = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(max_rollouts / static_cast<double>(plan.iterations)));
  }
  return plan;
}

}  // namespace rlvr
