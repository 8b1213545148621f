#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rlvr {

/// Bad parameters, shapes or ranges supplied by the caller.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An exact computation would exceed its configured term budget.
class CapacityError : public std::runtime_error {
 public:
  CapacityError(double required_terms, double budget)
      : std::runtime_error("enumeration needs " + std::to_string(required_terms) +
                           " weighted terms, budget is " + std::to_string(budget)),
        required_terms_(required_terms) {}
  double required_terms() const noexcept { return required_terms_; }

 private:
  double required_terms_;
};

/// Rejection sampling could not find a verified rollout within the resample cap.
class RewardStarvation : public std::runtime_error {
 public:
  RewardStarvation(std::size_t iteration, std::size_t slot, std::size_t attempts)
      : std::runtime_error("reward starvation at iteration " + std::to_string(iteration) +
                           " (batch slot " + std::to_string(slot) + ", " +
                           std::to_string(attempts) + " rejected draws)"),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

}  // namespace rlvr
