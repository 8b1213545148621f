#pragma once

#include <cstddef>
#include <vector>

#include "rlvr/core_model.hpp"
#include "rlvr/problem.hpp"
#include "rlvr/random.hpp"

namespace rlvr {

struct Rollout {
  Prefix sequence;                 // prompt + S generated tokens
  std::vector<TaskChoice> trace;   // task selected at each step (nullopt = dead token)
  double accept_probability = 0.0;
  bool verified = false;
};

/// Step distributions of a policy, precomputed once so that sampling many
/// rollouts from the same parameters does not redo the softmax.
class SamplingPolicy {
 public:
  explicit SamplingPolicy(const PolicyParams& params) {
    steps_.reserve(params.num_steps());
    for (std::size_t s = 0; s < params.num_steps(); ++s) {
      steps_.push_back(step_distribution(params, s));
    }
  }

  std::size_t num_steps() const noexcept { return steps_.size(); }
  const StepDistribution& step(std::size_t s) const { return steps_.at(s); }

  TaskChoice sample(std::size_t s, Rng& rng) const {
    const auto& dist = steps_[s];
    const double u = rng.uniform();
    double cdf = 0.0;
    const std::size_t last = dist.task_probs.size() - 1;
    for (std::size_t j = 0; j < dist.task_probs.size(); ++j) {
      cdf += dist.task_probs[j];
      if (u < cdf) return j;
    }
    // Rounding can leave cdf slightly below 1.
    return dist.dead_mass > 0.0 ? TaskChoice{} : TaskChoice{last};
  }

 private:
  std::vector<StepDistribution> steps_;
};

/// Draws a prompt, then S task selections, then the verifier outcome.
/// Stochastic verifiers are resolved with one Bernoulli draw.
inline Rollout sample_rollout(const SamplingPolicy& policy, const Problem& problem, Rng& rng) {
  Rollout r;
  r.sequence.prompt = problem.sample_prompt(rng);
  r.sequence.generated.reserve(problem.num_steps);
  r.trace.reserve(problem.num_steps);
  for (std::size_t s = 0; s < problem.num_steps; ++s) {
    const TaskChoice choice = policy.sample(s, rng);
    r.sequence.generated.push_back(choice ? problem.apply_task(*choice, r.sequence) : Token::dead());
    r.trace.push_back(choice);
  }
  r.accept_probability = problem.accept_probability(r.sequence, r.trace);
  if (r.accept_probability >= 1.0) {
    r.verified = true;
  } else if (r.accept_probability > 0.0) {
    r.verified = rng.bernoulli(r.accept_probability);
  }
  return r;
}

inline Rollout sample_rollout(const PolicyParams& params, const Problem& problem, Rng& rng) {
  check_compatible(params, problem);
  return sample_rollout(SamplingPolicy(params), problem, rng);
}

}  // namespace rlvr
