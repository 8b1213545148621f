#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlvr/core_model.hpp"
#include "rlvr/errors.hpp"
#include "rlvr/random.hpp"
#include "rlvr/table.hpp"

namespace rlvr {

using TaskFn = std::function<Token(const Prefix&)>;

/// Acceptance probability of a completed sequence (prompt + S tokens) given
/// the per-step task trace that produced it. Deterministic verifiers return
/// exactly 0 or 1.
using VerifierFn = std::function<double(const Prefix&, std::span<const TaskChoice>)>;

struct WeightedPrompt {
  std::vector<Token> tokens;
  double probability = 0.0;
};

/// An autoregressive composition problem: tasks, the correct composition tau,
/// a prompt distribution and a verifier. Immutable once built; every member
/// function is safe to call concurrently.
struct Problem {
  std::string name;
  std::size_t num_tasks = 0;
  std::size_t num_steps = 0;
  std::vector<TaskFn> tasks;
  std::vector<std::size_t> tau;

  /// Full support of the prompt distribution. Empty for sample-only problems.
  std::vector<WeightedPrompt> prompts;
  std::function<std::vector<Token>(Rng&)> sample_prompt;
  VerifierFn accept_probability;

  /// Optional exact shortcut: acceptance probability of a task trace averaged
  /// over prompts. Lets the oracle skip the prompt loop.
  std::function<double(std::span<const TaskChoice>)> trace_acceptance;

  /// Optional exact shortcut: acceptance factorizes as prod_s factor[s][c_s],
  /// where column J is used for a dead token. Shape S x (J + 1).
  std::optional<Table<double>> step_factors;

  bool enumerable() const noexcept { return !prompts.empty(); }

  Token apply_task(std::size_t j, const Prefix& prefix) const { return tasks.at(j)(prefix); }

  /// Generated tokens of the correct composition f*(x0).
  std::vector<Token> correct_completion(const std::vector<Token>& prompt) const {
    Prefix prefix{prompt, {}};
    for (std::size_t s = 0; s < num_steps; ++s) prefix.generated.push_back(apply_task(tau[s], prefix));
    return prefix.generated;
  }
};

/// Throws ValidationError unless the problem's shape is internally consistent.
inline void validate_problem(const Problem& p) {
  if (p.num_tasks < 1 || p.num_steps < 1) throw ValidationError(p.name + ": empty problem");
  if (p.tasks.size() != p.num_tasks) throw ValidationError(p.name + ": task count mismatch");
  if (p.tau.size() != p.num_steps) throw ValidationError(p.name + ": tau must have S entries");
  for (std::size_t t : p.tau) {
    if (t >= p.num_tasks) throw ValidationError(p.name + ": tau entry out of range");
  }
  if (!p.sample_prompt || !p.accept_probability) {
    throw ValidationError(p.name + ": prompt sampler and verifier are required");
  }
  if (p.step_factors &&
      (p.step_factors->rows() != p.num_steps || p.step_factors->cols() != p.num_tasks + 1)) {
    throw ValidationError(p.name + ": step_factors must be S x (J + 1)");
  }
}

inline void check_compatible(const PolicyParams& params, const Problem& problem) {
  if (params.num_steps() != problem.num_steps || params.num_tasks() != problem.num_tasks) {
    throw ValidationError("policy is " + std::to_string(params.num_steps()) + "x" +
                          std::to_string(params.num_tasks()) + " but problem '" + problem.name +
                          "' has S=" + std::to_string(problem.num_steps) +
                          ", J=" + std::to_string(problem.num_tasks));
  }
}

struct AssumptionReport {
  bool checked = false;  // false when the enumeration would exceed the budget
  bool prompt_mass_ok = true;
  bool correct_always_accepted = true;  // following tau is accepted with probability 1
  bool tasks_never_collide = true;      // tasks emit distinct tokens at every reachable prefix
  double terms = 0.0;
  std::string detail;

  bool ok() const noexcept {
    return prompt_mass_ok && correct_always_accepted && tasks_never_collide;
  }
};

namespace detail {

struct AssumptionWalker {
  const Problem& problem;
  AssumptionReport& report;
  Prefix prefix;
  std::vector<TaskChoice> trace;

  void walk(std::size_t s, bool on_tau) {
    if (!report.ok()) return;
    if (s == problem.num_steps) {
      if (on_tau && problem.accept_probability(prefix, trace) != 1.0) {
        report.correct_always_accepted = false;
        report.detail = "correct composition rejected for some prompt";
      }
      return;
    }
    std::vector<Token> emitted;
    emitted.reserve(problem.num_tasks);
    for (std::size_t j = 0; j < problem.num_tasks; ++j) {
      emitted.push_back(problem.apply_task(j, prefix));
      for (std::size_t k = 0; k < j; ++k) {
        if (emitted[k] == emitted[j]) {
          report.tasks_never_collide = false;
          report.detail = "tasks " + std::to_string(k) + " and " + std::to_string(j) +
                          " emit the same token at step " + std::to_string(s);
          return;
        }
      }
    }
    for (std::size_t j = 0; j < problem.num_tasks; ++j) {
      prefix.generated.push_back(emitted[j]);
      trace[s] = j;
      walk(s + 1, on_tau && j == problem.tau[s]);
      prefix.generated.pop_back();
    }
  }
};

}  // namespace detail

/// Exhaustively checks, over all prompts and task traces, that the prompt
/// distribution is normalized, that the correct composition is always
/// accepted and that no two tasks ever emit the same token.
inline AssumptionReport check_assumptions(const Problem& problem, double budget = 1e6) {
  AssumptionReport report;
  if (!problem.enumerable()) {
    report.detail = "prompt distribution is not enumerable";
    return report;
  }
  report.terms = static_cast<double>(problem.prompts.size()) *
                 std::pow(static_cast<double>(problem.num_tasks), static_cast<double>(problem.num_steps));
  if (report.terms > budget) {
    report.detail = "skipped: exceeds budget";
    return report;
  }
  report.checked = true;
  double mass = 0.0;
  for (const auto& p : problem.prompts) mass += p.probability;
  if (std::abs(mass - 1.0) > 1e-12) {
    report.prompt_mass_ok = false;
    report.detail = "prompt probabilities sum to " + std::to_string(mass);
    return report;
  }
  for (const auto& p : problem.prompts) {
    detail::AssumptionWalker walker{problem, report, Prefix{p.tokens, {}},
                                    std::vector<TaskChoice>(problem.num_steps)};
    walker.walk(0, true);
    if (!report.ok()) break;
  }
  return report;
}

}  // namespace rlvr
