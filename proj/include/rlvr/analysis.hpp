#pragma once

// Exact outcome probabilities and the quantities derived from them: the
// task-advantage ratio rho, the margin alpha, expected logit updates, error
// ratios and the verifier / loss bounds. Also the infinite-batch (mean-field)
// recursion of the two-token trap.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "rlvr/core_model.hpp"
#include "rlvr/errors.hpp"
#include "rlvr/problem.hpp"
#include "rlvr/rollout.hpp"
#include "rlvr/table.hpp"

namespace rlvr {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class EnumerationRoute { full, trace_shortcut, factorized };

inline const char* to_string(EnumerationRoute r) {
  switch (r) {
    case EnumerationRoute::full: return "full";
    case EnumerationRoute::trace_shortcut: return "trace_shortcut";
    case EnumerationRoute::factorized: return "factorized";
  }
  return "?";
}

struct EnumerationOptions {
  double budget = 1e8;        // max weighted terms
  bool use_shortcuts = true;  // allow a problem's exact fast paths
};

/// All outcome probabilities of one (policy, problem) pair. Tables are S x J.
struct OutcomeTable {
  std::size_t num_steps = 0;
  std::size_t num_tasks = 0;
  std::vector<std::size_t> tau;
  EnumerationRoute route = EnumerationRoute::full;
  double terms = 0.0;

  double success_prob = 0.0;                // P(V=1)
  Table<double> policy_prob;                // pi(s, j), straight from the logits
  Table<double> p_select;                   // P(A_sj), summed over outcomes
  Table<double> p_accept_and_select;        // P(V=1, A_sj)
  Table<double> p_accept_and_not_select;    // P(V=1, not A_sj), accumulated directly
  Table<double> p_select_given_accept;      // P(A_sj | V=1)
  Table<double> p_accept_given_select;      // P(V=1 | A_sj)
  Table<double> p_accept_given_not_select;  // P(V=1 | not A_sj), from the direct sums
  Table<double> rho;                        // task-advantage ratio, may be 0 or +inf
  std::vector<double> error_ratio;          // R_s = 1 / P(A_{s,tau(s)}) - 1
  double ce_loss = 0.0;                     // E log 1 / P(f*(x0) | x0)

  double correct_prob(std::size_t s) const { return policy_prob.at(s, tau.at(s)); }
};

/// rho = num / den with the conventions rho = 0 when num = 0 and rho = +inf
/// when only den = 0.
inline double advantage_from_conditionals(double num, double den) {
  if (num <= 0.0) return 0.0;
  if (den <= 0.0) return kInfinity;
  return num / den;
}

/// 1 / rho with 1 / inf = 0 and 1 / 0 = inf.
inline double reciprocal(double rho) {
  if (std::isinf(rho)) return 0.0;
  if (rho == 0.0) return kInfinity;
  return 1.0 / rho;
}

namespace detail {

struct OutcomeAccumulator {
  std::size_t steps;
  std::size_t tasks;
  double accept = 0.0;
  Table<double> select;
  Table<double> accept_select;
  Table<double> accept_not_select;

  OutcomeAccumulator(std::size_t s, std::size_t j)
      : steps(s), tasks(j), select(s, j), accept_select(s, j), accept_not_select(s, j) {}

  void add(double weight, double acceptance, std::span<const TaskChoice> trace) {
    const double wa = weight * acceptance;
    accept += wa;
    for (std::size_t s = 0; s < steps; ++s) {
      for (std::size_t j = 0; j < tasks; ++j) {
        if (trace[s] == TaskChoice{j}) {
          select(s, j) += weight;
          accept_select(s, j) += wa;
        } else {
          accept_not_select(s, j) += wa;
        }
      }
    }
  }
};

inline std::size_t branching(const PolicyParams& params, std::size_t s) {
  return params.num_tasks() + (params.dead_tokens()[s] > 0 ? 1 : 0);
}

inline double trace_count(const PolicyParams& params) {
  double n = 1.0;
  for (std::size_t s = 0; s < params.num_steps(); ++s) n *= static_cast<double>(branching(params, s));
  return n;
}

// Depth-first walk over task traces. With a problem and prompt the prefix is
// built as we go; without one only the trace is tracked.
struct TraceWalker {
  const Problem& problem;
  const SamplingPolicy& policy;
  OutcomeAccumulator& acc;
  const Prefix* prompt = nullptr;  // null on the trace-shortcut route
  double prompt_weight = 1.0;
  Prefix prefix;
  std::vector<TaskChoice> trace;

  void walk(std::size_t s, double weight) {
    if (s == problem.num_steps) {
      const double a = prompt ? problem.accept_probability(prefix, trace)
                              : problem.trace_acceptance(trace);
      acc.add(prompt_weight * weight, a, trace);
      return;
    }
    const auto& dist = policy.step(s);
    for (std::size_t j = 0; j < problem.num_tasks; ++j) {
      trace[s] = j;
      if (prompt) prefix.generated.push_back(problem.apply_task(j, prefix));
      walk(s + 1, weight * dist.task_probs[j]);
      if (prompt) prefix.generated.pop_back();
    }
    if (dist.dead_mass > 0.0) {
      trace[s] = std::nullopt;
      if (prompt) prefix.generated.push_back(Token::dead());
      walk(s + 1, weight * dist.dead_mass);
      if (prompt) prefix.generated.pop_back();
    }
  }
};

inline void factorized_outcomes(const Problem& problem, const SamplingPolicy& policy,
                                OutcomeAccumulator& acc) {
  const auto& f = *problem.step_factors;
  const std::size_t S = problem.num_steps;
  const std::size_t J = problem.num_tasks;
  // Per-step expected acceptance factor m_s.
  std::vector<double> m(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& dist = policy.step(s);
    for (std::size_t j = 0; j < J; ++j) m[s] += dist.task_probs[j] * f(s, j);
    m[s] += dist.dead_mass * f(s, J);
  }
  acc.accept = 1.0;
  for (double x : m) acc.accept *= x;
  for (std::size_t s = 0; s < S; ++s) {
    double rest = 1.0;
    for (std::size_t k = 0; k < S; ++k) {
      if (k != s) rest *= m[k];
    }
    const auto& dist = policy.step(s);
    for (std::size_t j = 0; j < J; ++j) {
      // Summed rather than m[s] - own, which cancels when pi(s, j) is near 1.
      double others = dist.dead_mass * f(s, J);
      for (std::size_t k = 0; k < J; ++k) {
        if (k != j) others += dist.task_probs[k] * f(s, k);
      }
      acc.select(s, j) = dist.task_probs[j];
      acc.accept_select(s, j) = dist.task_probs[j] * f(s, j) * rest;
      acc.accept_not_select(s, j) = others * rest;
    }
  }
}

}  // namespace detail

/// Exact evaluation oracle. Sums trace probability times acceptance
/// probability over every (prompt, task trace) pair, dead-token branches
/// included, then derives conditionals, rho, error ratios and the loss.
/// Problems that expose an exact shortcut use it unless disabled.
inline OutcomeTable enumerate_outcomes(const PolicyParams& params, const Problem& problem,
                                       const EnumerationOptions& options = {}) {
  check_compatible(params, problem);
  const std::size_t S = problem.num_steps;
  const std::size_t J = problem.num_tasks;
  const SamplingPolicy policy(params);
  detail::OutcomeAccumulator acc(S, J);

  OutcomeTable t;
  t.num_steps = S;
  t.num_tasks = J;
  t.tau = problem.tau;

  if (options.use_shortcuts && problem.step_factors) {
    t.route = EnumerationRoute::factorized;
    t.terms = static_cast<double>(S * (J + 1));
    detail::factorized_outcomes(problem, policy, acc);
  } else if (options.use_shortcuts && problem.trace_acceptance) {
    t.route = EnumerationRoute::trace_shortcut;
    t.terms = detail::trace_count(params);
    if (t.terms > options.budget) throw CapacityError(t.terms, options.budget);
    detail::TraceWalker walker{problem, policy, acc, nullptr, 1.0, {}, std::vector<TaskChoice>(S)};
    walker.walk(0, 1.0);
  } else {
    if (!problem.enumerable()) {
      throw ValidationError("problem '" + problem.name + "' has no enumerable prompt distribution");
    }
    t.route = EnumerationRoute::full;
    t.terms = static_cast<double>(problem.prompts.size()) * detail::trace_count(params);
    if (t.terms > options.budget) throw CapacityError(t.terms, options.budget);
    for (const auto& wp : problem.prompts) {
      Prefix start{wp.tokens, {}};
      detail::TraceWalker walker{problem, policy, acc, &start, wp.probability, start,
                                 std::vector<TaskChoice>(S)};
      walker.prefix.generated.reserve(S);
      walker.walk(0, 1.0);
    }
  }

  t.success_prob = acc.accept;
  t.policy_prob = task_prob_table(params);
  t.p_select = acc.select;
  t.p_accept_and_select = acc.accept_select;
  t.p_accept_and_not_select = acc.accept_not_select;
  t.p_select_given_accept = Table<double>(S, J);
  t.p_accept_given_select = Table<double>(S, J);
  t.p_accept_given_not_select = Table<double>(S, J);
  t.rho = Table<double>(S, J);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& dist = policy.step(s);
    for (std::size_t j = 0; j < J; ++j) {
      const double pa = acc.select(s, j);
      const double joint = acc.accept_select(s, j);
      t.p_select_given_accept(s, j) = t.success_prob > 0.0 ? joint / t.success_prob : 0.0;
      t.p_accept_given_select(s, j) = pa > 0.0 ? joint / pa : 0.0;
      // P(not A) and P(V=1, not A) are summed directly; 1 - P(A) and
      // P(V=1) - P(V=1, A) lose all precision when P(A) is close to 1.
      double not_pa = dist.dead_mass;
      for (std::size_t k = 0; k < J; ++k) {
        if (k != j) not_pa += dist.task_probs[k];
      }
      t.p_accept_given_not_select(s, j) = not_pa > 0.0 ? acc.accept_not_select(s, j) / not_pa : 0.0;
      t.rho(s, j) = advantage_from_conditionals(t.p_accept_given_select(s, j),
                                                t.p_accept_given_not_select(s, j));
    }
  }
  t.error_ratio.resize(S);
  t.ce_loss = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    t.error_ratio[s] = 1.0 / t.correct_prob(s) - 1.0;
    // P(f*(x0) | x0) = prod_s pi(s, tau(s)) for every prompt, since task
    // tokens never collide and the policy ignores the prefix.
    t.ce_loss -= log_task_prob(params, s, problem.tau[s]);
  }
  return t;
}

inline double advantage_ratio(const PolicyParams& params, const Problem& problem, std::size_t s,
                              std::size_t j, const EnumerationOptions& options = {}) {
  return enumerate_outcomes(params, problem, options).rho.at(s, j);
}

struct AdvantageEstimate {
  bool estimable = false;
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t n_selected = 0;
  std::size_t n_other = 0;
};

/// Monte-Carlo rho from n rollouts: ratio of the empirical acceptance rates
/// with and without task j at step s, with a delta-method standard error.
/// Not estimable when a stratum is empty or the complement never accepts.
inline AdvantageEstimate estimate_advantage_ratio(const PolicyParams& params,
                                                  const Problem& problem, std::size_t s,
                                                  std::size_t j, std::size_t n, Rng& rng) {
  check_compatible(params, problem);
  if (n < 100) throw ValidationError("estimate_advantage_ratio: need n >= 100");
  if (s >= problem.num_steps || j >= problem.num_tasks) {
    throw std::out_of_range("estimate_advantage_ratio: (s, j) out of range");
  }
  const SamplingPolicy policy(params);
  std::size_t acc_sel = 0;
  std::size_t acc_other = 0;
  AdvantageEstimate out;
  for (std::size_t i = 0; i < n; ++i) {
    const Rollout r = sample_rollout(policy, problem, rng);
    if (r.trace[s] == TaskChoice{j}) {
      ++out.n_selected;
      acc_sel += r.verified;
    } else {
      ++out.n_other;
      acc_other += r.verified;
    }
  }
  if (out.n_selected == 0 || out.n_other == 0 || acc_other == 0) return out;
  const double a1 = static_cast<double>(acc_sel) / static_cast<double>(out.n_selected);
  const double a0 = static_cast<double>(acc_other) / static_cast<double>(out.n_other);
  out.estimable = true;
  out.estimate = a1 / a0;
  const double rel1 = a1 > 0.0 ? (1.0 - a1) / (a1 * static_cast<double>(out.n_selected)) : 0.0;
  const double rel0 = (1.0 - a0) / (a0 * static_cast<double>(out.n_other));
  out.std_error = out.estimate * std::sqrt(rel1 + rel0);
  return out;
}

struct MarginViolation {
  std::size_t step;
  std::size_t task;
  double rho;
};

/// Pointwise check of the uniform task-advantage condition at one policy.
struct MarginReport {
  bool satisfied = false;
  double alpha = 0.0;  // min_s rho_{s,tau(s)} - 1, reported even when violated
  std::vector<MarginViolation> violations;
};

inline MarginReport margin_alpha(const OutcomeTable& table) {
  MarginReport r;
  r.alpha = kInfinity;
  for (std::size_t s = 0; s < table.num_steps; ++s) {
    for (std::size_t j = 0; j < table.num_tasks; ++j) {
      const double rho = table.rho(s, j);
      if (j == table.tau[s]) {
        r.alpha = std::min(r.alpha, rho - 1.0);
        if (!(rho > 1.0)) r.violations.push_back({s, j, rho});
      } else if (!(rho < 1.0)) {
        r.violations.push_back({s, j, rho});
      }
    }
  }
  r.satisfied = r.violations.empty();
  return r;
}

inline MarginReport margin_alpha(const PolicyParams& params, const Problem& problem,
                                 const EnumerationOptions& options = {}) {
  return margin_alpha(enumerate_outcomes(params, problem, options));
}

/// Expected one-iteration change of the logit at the token task j emits at
/// step s: eta gamma^2 P(A|V=1) (1 - P(A)) (1 - 1/rho), or -eta gamma^2 P(A)
/// when rho = 0.
inline double expected_update(const OutcomeTable& table, std::size_t s, std::size_t j, double eta,
                              double gamma) {
  const double scale = eta * gamma * gamma;
  const double rho = table.rho.at(s, j);
  const double pa = table.policy_prob.at(s, j);
  if (rho == 0.0) return -scale * pa;
  return scale * table.p_select_given_accept(s, j) * (1.0 - pa) * (1.0 - reciprocal(rho));
}

inline double expected_update(const PolicyParams& params, const Problem& problem, std::size_t s,
                              std::size_t j, double eta, const EnumerationOptions& options = {}) {
  return expected_update(enumerate_outcomes(params, problem, options), s, j, eta, params.gamma());
}

/// Largest violation over (s, j) of P(A) P(V=1|A) = P(A|V=1) P(V=1), with P(A)
/// taken from the logits, and of the total-probability reconstruction
/// P(V=1) = P(V=1|A) P(A) + P(V=1|A) / rho * (1 - P(A)) where rho > 0.
inline double bayes_residual(const OutcomeTable& table) {
  double worst = 0.0;
  for (std::size_t s = 0; s < table.num_steps; ++s) {
    for (std::size_t j = 0; j < table.num_tasks; ++j) {
      const double pa = table.policy_prob(s, j);
      const double lhs = pa * table.p_accept_given_select(s, j);
      const double rhs = table.p_select_given_accept(s, j) * table.success_prob;
      worst = std::max(worst, std::abs(lhs - rhs));
      const double rho = table.rho(s, j);
      if (rho != 0.0) {
        const double cond = table.p_accept_given_select(s, j);
        const double rebuilt = cond * pa + cond * reciprocal(rho) * (1.0 - pa);
        worst = std::max(worst, std::abs(rebuilt - table.success_prob));
      }
    }
  }
  return worst;
}

struct BoundReport {
  double success_prob = 0.0;
  double verifier_lower_bound = 0.0;  // 1 - sum_s R_s
  double sum_error_ratio = 0.0;
  double ce_loss = 0.0;
  bool verifier_bound_holds = false;  // P(V=1) >= 1 - sum R_s
  bool loss_bound_holds = false;      // L <= sum R_s
};

inline BoundReport bound_report(const OutcomeTable& table, double tol = 1e-10) {
  BoundReport r;
  r.success_prob = table.success_prob;
  for (double x : table.error_ratio) r.sum_error_ratio += x;
  r.verifier_lower_bound = 1.0 - r.sum_error_ratio;
  r.ce_loss = table.ce_loss;
  r.verifier_bound_holds = r.success_prob >= r.verifier_lower_bound - tol;
  r.loss_bound_holds = r.ce_loss <= r.sum_error_ratio + tol;
  return r;
}

// ---------------------------------------------------------------------------
// Mean-field dynamics of the two-token trap (gamma = 1, B -> infinity). Both
// steps share the logit gap Z = z_1 - z_2 and p = sigmoid(Z).

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct MeanFieldState {
  double z = 0.0;
  double p = 0.5;
  std::size_t t = 0;

  static MeanFieldState from_probability(double p0) {
    if (!(p0 > 0.0 && p0 < 1.0)) throw ValidationError("mean-field p must be in (0, 1)");
    return MeanFieldState{std::log(p0) - std::log1p(-p0), p0, 0};
  }
  double miss() const { return sigmoid(-z); }  // 1 - p without cancellation
};

/// Trap acceptance probability when both steps pick the correct task w.p. p.
inline double trap_success_prob(double p) { return p * p + 0.5 * (1.0 - p) * (1.0 - p); }

inline double mean_field_drift(double p, double miss, double eta) {
  return 2.0 * eta * p * miss * (3.0 * p - 1.0) / (2.0 * p * p + miss * miss);
}

inline MeanFieldState mean_field_step(const MeanFieldState& state, double eta) {
  MeanFieldState next;
  next.z = state.z + mean_field_drift(state.p, state.miss(), eta);
  next.p = sigmoid(next.z);
  next.t = state.t + 1;
  return next;
}

enum class MeanFieldLimit { success, collapse, undetermined };

inline const char* to_string(MeanFieldLimit l) {
  switch (l) {
    case MeanFieldLimit::success: return "success";
    case MeanFieldLimit::collapse: return "collapse";
    case MeanFieldLimit::undetermined: return "undetermined";
  }
  return "?";
}

struct MeanFieldTrajectory {
  std::vector<double> p;             // p_0 .. p_T
  std::vector<double> success_prob;  // implied P(V=1) along the way
  std::vector<double> z;
  MeanFieldLimit limit = MeanFieldLimit::undetermined;
};

/// Iterates the recursion from p0 until 1 - p < tol (success, P(V=1) -> 1),
/// p < tol (collapse, P(V=1) -> 1/2) or max_iter steps.
inline MeanFieldTrajectory mean_field_trajectory(double p0, double eta, std::size_t max_iter,
                                                 double tol) {
  if (p0 == 1.0 / 3.0) throw ValidationError("p0 = 1/3 is the unstable fixed point");
  if (!(eta > 0.0)) throw ValidationError("mean-field eta must be positive");
  if (!(tol > 0.0 && tol < 0.5)) throw ValidationError("mean-field tol must be in (0, 1/2)");
  MeanFieldState state = MeanFieldState::from_probability(p0);
  MeanFieldTrajectory out;
  const auto record = [&out](const MeanFieldState& st) {
    out.p.push_back(st.p);
    out.z.push_back(st.z);
    out.success_prob.push_back(trap_success_prob(st.p));
  };
  record(state);
  for (;;) {
    if (state.miss() < tol) {
      out.limit = MeanFieldLimit::success;
      break;
    }
    if (state.p < tol) {
      out.limit = MeanFieldLimit::collapse;
      break;
    }
    if (state.t >= max_iter) break;
    state = mean_field_step(state, eta);
    record(state);
  }
  return out;
}

}  // namespace rlvr
