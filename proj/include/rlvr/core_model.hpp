#pragma once

// Task-selection policy in its reduced per-step logit form.
//
// A policy is stored as the table u[s][j] (one logit coefficient per CoT step
// and task), a scale gamma and a per-step count of dead tokens. The logit of
// the token emitted by task j at any prefix with s generated tokens is
// gamma * u[s][j]; dead tokens carry logit 0. Since tasks never collide on a
// prefix, the probability of selecting task j depends only on s.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rlvr/errors.hpp"
#include "rlvr/table.hpp"

namespace rlvr {

/// Vocabulary symbol. task_tag is set when the expanded vocabulary V x [J]
/// is in use, so that tokens from different tasks never compare equal.
struct Token {
  std::int64_t value = 0;
  std::optional<std::size_t> task_tag;

  static constexpr std::int64_t kDeadValue = std::numeric_limits<std::int64_t>::min();

  /// Sentinel emitted when the policy samples one of the W_s dead tokens.
  static Token dead() { return Token{kDeadValue, std::nullopt}; }
  bool is_dead() const noexcept { return value == kDeadValue; }

  friend bool operator==(const Token&, const Token&) = default;
};

/// Prompt followed by the tokens generated so far.
struct Prefix {
  std::vector<Token> prompt;
  std::vector<Token> generated;

  /// Number of generated CoT tokens, i.e. the 0-based index of the next step.
  std::size_t step() const noexcept { return generated.size(); }
  std::size_t size() const noexcept { return prompt.size() + generated.size(); }

  /// Token `k` positions from the end (k = 1 is the last token).
  const Token& from_end(std::size_t k) const {
    if (k == 0 || k > size()) {
      throw std::out_of_range("Prefix::from_end(" + std::to_string(k) + ") on prefix of size " +
                              std::to_string(size()));
    }
    const std::size_t g = generated.size();
    return k <= g ? generated[g - k] : prompt[prompt.size() - (k - g)];
  }
};

/// Task selected at one step; nullopt means a dead token was emitted.
using TaskChoice = std::optional<std::size_t>;

class PolicyParams {
 public:
  PolicyParams(Table<double> logits, double gamma)
      : PolicyParams(logits, gamma, std::vector<std::size_t>(logits.rows(), 0)) {}

  PolicyParams(Table<double> logits, double gamma, std::vector<std::size_t> dead_tokens)
      : logits_(std::move(logits)), gamma_(gamma), dead_tokens_(std::move(dead_tokens)) {
    if (logits_.rows() == 0 || logits_.cols() == 0) {
      throw ValidationError("PolicyParams: logit table must be non-empty");
    }
    if (!(gamma_ > 0.0) || !std::isfinite(gamma_)) {
      throw ValidationError("PolicyParams: gamma must be positive and finite");
    }
    if (dead_tokens_.size() != logits_.rows()) {
      throw ValidationError("PolicyParams: need one dead-token count per step");
    }
    for (double u : logits_.flat()) {
      if (!std::isfinite(u)) throw ValidationError("PolicyParams: logits must be finite");
    }
  }

  std::size_t num_steps() const noexcept { return logits_.rows(); }
  std::size_t num_tasks() const noexcept { return logits_.cols(); }
  const Table<double>& logits() const noexcept { return logits_; }
  double logit(std::size_t s, std::size_t j) const { return logits_.at(s, j); }
  double gamma() const noexcept { return gamma_; }
  const std::vector<std::size_t>& dead_tokens() const noexcept { return dead_tokens_; }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  Table<double> logits_;
  double gamma_;
  std::vector<std::size_t> dead_tokens_;
};

struct StepDistribution {
  std::vector<double> task_probs;
  double dead_mass = 0.0;
};

namespace detail {

inline void check_step(const PolicyParams& params, std::size_t s) {
  if (s >= params.num_steps()) {
    throw std::out_of_range("step " + std::to_string(s) + " outside [0, " +
                            std::to_string(params.num_steps()) + ")");
  }
}

// Largest scaled logit at step s, including the zero logit of dead tokens.
inline double max_scaled_logit(const PolicyParams& params, std::size_t s) {
  double m = params.dead_tokens()[s] > 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  for (double u : params.logits().row(s)) m = std::max(m, params.gamma() * u);
  return m;
}

}  // namespace detail

/// Softmax over the J task tokens plus W_s zero-logit dead tokens at step s
/// (0-based). Throws std::out_of_range for s >= S.
inline StepDistribution step_distribution(const PolicyParams& params, std::size_t s) {
  detail::check_step(params, s);
  const double m = detail::max_scaled_logit(params, s);
  StepDistribution out;
  out.task_probs.reserve(params.num_tasks());
  double z = 0.0;
  for (double u : params.logits().row(s)) {
    out.task_probs.push_back(std::exp(params.gamma() * u - m));
    z += out.task_probs.back();
  }
  const double dead = static_cast<double>(params.dead_tokens()[s]) * std::exp(-m);
  z += dead;
  for (double& p : out.task_probs) p /= z;
  out.dead_mass = dead / z;
  return out;
}

/// log pi(s, j), computed without forming the probability first.
inline double log_task_prob(const PolicyParams& params, std::size_t s, std::size_t j) {
  detail::check_step(params, s);
  const double m = detail::max_scaled_logit(params, s);
  double z = static_cast<double>(params.dead_tokens()[s]) * std::exp(-m);
  for (double u : params.logits().row(s)) z += std::exp(params.gamma() * u - m);
  return params.gamma() * params.logits().at(s, j) - m - std::log(z);
}

/// Per-step task probabilities as an S x J table.
inline Table<double> task_prob_table(const PolicyParams& params) {
  Table<double> out(params.num_steps(), params.num_tasks());
  for (std::size_t s = 0; s < params.num_steps(); ++s) {
    const auto dist = step_distribution(params, s);
    std::copy(dist.task_probs.begin(), dist.task_probs.end(), out.row(s).begin());
  }
  return out;
}

/// Realizes a target per-step task distribution. Row s of `target` holds the
/// task probabilities; whatever mass the row leaves over goes to the dead
/// tokens of that step, so rows must sum to exactly 1 when dead_tokens[s] == 0
/// and to less than 1 otherwise.
inline PolicyParams init_from_task_probs(const Table<double>& target, double gamma,
                                         std::vector<std::size_t> dead_tokens) {
  constexpr double kRowTol = 1e-12;
  if (dead_tokens.size() != target.rows()) {
    throw ValidationError("init_from_task_probs: need one dead-token count per step");
  }
  if (!(gamma > 0.0)) throw ValidationError("init_from_task_probs: gamma must be positive");
  Table<double> u(target.rows(), target.cols());
  for (std::size_t s = 0; s < target.rows(); ++s) {
    double row_sum = 0.0;
    for (double p : target.row(s)) {
      if (!(p > 0.0) || !std::isfinite(p)) {
        throw ValidationError("init_from_task_probs: probabilities must be positive (step " +
                              std::to_string(s) + ")");
      }
      row_sum += p;
    }
    if (row_sum > 1.0 + kRowTol) {
      throw ValidationError("init_from_task_probs: row " + std::to_string(s) + " sums to " +
                            std::to_string(row_sum) + " > 1");
    }
    // exp(gamma u_j) = p_j * Z where Z = W / dead_mass, or Z = 1 without dead tokens.
    double log_z = 0.0;
    if (dead_tokens[s] > 0) {
      const double dead_mass = 1.0 - row_sum;
      if (!(dead_mass > 0.0)) {
        throw ValidationError("init_from_task_probs: row " + std::to_string(s) +
                              " leaves no mass for its dead tokens");
      }
      log_z = std::log(static_cast<double>(dead_tokens[s])) - std::log(dead_mass);
    } else if (std::abs(row_sum - 1.0) > kRowTol) {
      throw ValidationError("init_from_task_probs: row " + std::to_string(s) +
                            " must sum to 1 when the step has no dead tokens");
    }
    for (std::size_t j = 0; j < target.cols(); ++j) {
      u(s, j) = (std::log(target(s, j)) + log_z) / gamma;
    }
  }
  return PolicyParams(std::move(u), gamma, std::move(dead_tokens));
}

inline PolicyParams init_from_task_probs(const Table<double>& target, double gamma) {
  return init_from_task_probs(target, gamma, std::vector<std::size_t>(target.rows(), 0));
}

/// All-zero logits: uniform over tasks (and dead tokens, if any).
inline PolicyParams uniform_policy(std::size_t steps, std::size_t tasks, double gamma) {
  return PolicyParams(Table<double>(steps, tasks, 0.0), gamma);
}

/// Policy selecting the correct task tau[s] with probability p0 at every step,
/// the remaining mass split evenly over the other tasks.
inline PolicyParams correct_prob_policy(const std::vector<std::size_t>& tau, std::size_t tasks,
                                        double p0, double gamma) {
  if (!(p0 > 0.0 && p0 < 1.0)) throw ValidationError("correct_prob_policy: p0 must be in (0, 1)");
  if (tasks < 2) throw ValidationError("correct_prob_policy: need at least two tasks");
  Table<double> target(tau.size(), tasks, (1.0 - p0) / static_cast<double>(tasks - 1));
  for (std::size_t s = 0; s < tau.size(); ++s) target.at(s, tau[s]) = p0;
  return init_from_task_probs(target, gamma);
}

/// u'[s][j] = u[s][j] + eta * gamma * q[s][j]. The logit of the token emitted
/// by task j therefore moves by eta * gamma^2 * q[s][j].
inline PolicyParams apply_update(const PolicyParams& params, const Table<double>& q, double eta) {
  if (q.rows() != params.num_steps() || q.cols() != params.num_tasks()) {
    throw ValidationError("apply_update: Q is " + std::to_string(q.rows()) + "x" +
                          std::to_string(q.cols()) + ", policy is " +
                          std::to_string(params.num_steps()) + "x" +
                          std::to_string(params.num_tasks()));
  }
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ValidationError("apply_update: eta must be > 0");
  Table<double> u = params.logits();
  const double scale = eta * params.gamma();
  for (std::size_t s = 0; s < u.rows(); ++s) {
    for (std::size_t j = 0; j < u.cols(); ++j) u(s, j) += scale * q(s, j);
  }
  return PolicyParams(std::move(u), params.gamma(), params.dead_tokens());
}

/// Change of the logit at the token task j emits on any step-s prefix.
inline double logit_change(const PolicyParams& before, const PolicyParams& after, std::size_t s,
                           std::size_t j) {
  return before.gamma() * (after.logit(s, j) - before.logit(s, j));
}

/// Change in the logit gap between the tokens of tasks `correct` and `other`
/// at step s. Pass std::nullopt as `other` for a dead token (logit fixed at 0).
inline double logit_gap_change(const PolicyParams& before, const PolicyParams& after,
                               std::size_t s, std::size_t correct, TaskChoice other) {
  const double c = logit_change(before, after, s, correct);
  return other ? c - logit_change(before, after, s, *other) : c;
}

}  // namespace rlvr
