#pragma once

// Built-in environments: sparse parity scanned bit by bit, the recovery
// problem with per-step recovery probabilities, the two-token trap and a
// long-addition demo.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "rlvr/problem.hpp"

namespace rlvr {

namespace detail {

inline Problem checked(Problem p) {
  validate_problem(p);
  const auto report = check_assumptions(p);
  if (report.checked && !report.ok()) {
    throw std::logic_error(p.name + " violates its construction invariants: " + report.detail);
  }
  return p;
}

inline bool any_dead(std::span<const TaskChoice> trace) {
  return std::any_of(trace.begin(), trace.end(), [](const TaskChoice& c) { return !c; });
}

// +-1 bit carried by a token; dead tokens carry 0 so products involving them
// never match a parity.
inline std::int64_t bit_value(const Token& t) { return t.is_dead() ? 0 : t.value; }

}  // namespace detail

/// Largest d for which the parity prompt space is materialized. Larger
/// instances are sample-only but keep the exact per-trace shortcut.
inline constexpr std::size_t kParityEnumerableBits = 12;

/// Parity over `parity_set` (1-based bit positions) of d uniform +-1 bits.
/// Prompts are the d bits followed by a constant +1. At step s the "multiply"
/// task (index 1) emits x_s times the last token and the "copy" task
/// (index 0) repeats the last token; both tag their tokens with the task
/// index. tau(s) = 1 iff s is in the parity set.
inline Problem make_parity(std::size_t d, const std::vector<std::size_t>& parity_set) {
  if (d < 1 || d > 20) throw ValidationError("make_parity: d must be in [1, 20]");
  std::set<std::size_t> members;
  for (std::size_t i : parity_set) {
    if (i < 1 || i > d) {
      throw ValidationError("make_parity: parity index " + std::to_string(i) + " not in [1, " +
                            std::to_string(d) + "]");
    }
    if (!members.insert(i).second) throw ValidationError("make_parity: duplicate parity index");
  }

  Problem p;
  p.name = "parity";
  p.num_tasks = 2;
  p.num_steps = d;
  p.tau.assign(d, 0);
  for (std::size_t i : members) p.tau[i - 1] = 1;

  p.tasks.push_back([](const Prefix& x) {
    return Token{detail::bit_value(x.from_end(1)), 0};
  });
  p.tasks.push_back([](const Prefix& x) {
    const std::int64_t bit = x.prompt.at(x.step()).value;
    return Token{bit * detail::bit_value(x.from_end(1)), 1};
  });

  const auto target = [members](const std::vector<Token>& prompt) {
    std::int64_t v = 1;
    for (std::size_t i : members) v *= prompt[i - 1].value;
    return v;
  };

  p.accept_probability = [target](const Prefix& x, std::span<const TaskChoice> trace) {
    if (detail::any_dead(trace)) return 0.0;
    return x.generated.back().value == target(x.prompt) ? 1.0 : 0.0;
  };

  // Distinct parities are uncorrelated under the uniform prompt distribution,
  // so any trace except the correct one is accepted on exactly half the prompts.
  const auto tau = p.tau;
  p.trace_acceptance = [tau](std::span<const TaskChoice> trace) {
    if (detail::any_dead(trace)) return 0.0;
    for (std::size_t s = 0; s < trace.size(); ++s) {
      if (*trace[s] != tau[s]) return 0.5;
    }
    return 1.0;
  };

  p.sample_prompt = [d](Rng& rng) {
    std::vector<Token> prompt;
    prompt.reserve(d + 1);
    for (std::size_t i = 0; i < d; ++i) prompt.push_back(Token{rng.below(2) ? 1 : -1, std::nullopt});
    prompt.push_back(Token{1, std::nullopt});
    return prompt;
  };

  if (d <= kParityEnumerableBits) {
    const std::size_t n = std::size_t{1} << d;
    const double prob = 1.0 / static_cast<double>(n);
    p.prompts.reserve(n);
    for (std::size_t mask = 0; mask < n; ++mask) {
      WeightedPrompt wp{{}, prob};
      for (std::size_t i = 0; i < d; ++i) {
        wp.tokens.push_back(Token{(mask >> i) & 1 ? -1 : 1, std::nullopt});
      }
      wp.tokens.push_back(Token{1, std::nullopt});
      p.prompts.push_back(std::move(wp));
    }
  }
  return detail::checked(std::move(p));
}

/// Two tasks per step (index 0 correct, index 1 wrong), each emitting its own
/// index as a constant token. The verifier accepts with probability
/// prod over wrong steps of lambda_s; a dead token counts as a wrong step.
inline Problem make_recovery(const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw ValidationError("make_recovery: need at least one step");
  for (double l : lambdas) {
    if (!(l > 0.0 && l < 1.0)) throw ValidationError("make_recovery: lambda must be in (0, 1)");
  }
  Problem p;
  p.name = "recovery";
  p.num_tasks = 2;
  p.num_steps = lambdas.size();
  p.tau.assign(p.num_steps, 0);
  for (std::int64_t j = 0; j < 2; ++j) {
    p.tasks.push_back([j](const Prefix&) { return Token{j, std::nullopt}; });
  }
  p.accept_probability = [lambdas](const Prefix&, std::span<const TaskChoice> trace) {
    double a = 1.0;
    for (std::size_t s = 0; s < trace.size(); ++s) {
      if (trace[s] != TaskChoice{0}) a *= lambdas[s];
    }
    return a;
  };
  Table<double> factors(p.num_steps, 3);
  for (std::size_t s = 0; s < p.num_steps; ++s) {
    factors(s, 0) = 1.0;
    factors(s, 1) = lambdas[s];
    factors(s, 2) = lambdas[s];
  }
  p.step_factors = std::move(factors);
  p.prompts.push_back(WeightedPrompt{{}, 1.0});
  p.sample_prompt = [](Rng&) { return std::vector<Token>{}; };
  return detail::checked(std::move(p));
}

inline Problem make_recovery(double lambda, std::size_t steps) {
  return make_recovery(std::vector<double>(steps, lambda));
}

/// Vocabulary {1, 2}, two constant tasks (index 0 emits 1, index 1 emits 2),
/// a uniform prompt in {1, 2} and two CoT steps. The verifier accepts
/// (1,1,1), (2,1,1) and, unless `strict`, also (1,2,2).
inline Problem make_two_token_trap(bool strict) {
  Problem p;
  p.name = strict ? "trap_strict" : "trap";
  p.num_tasks = 2;
  p.num_steps = 2;
  p.tau = {0, 0};
  p.tasks.push_back([](const Prefix&) { return Token{1, std::nullopt}; });
  p.tasks.push_back([](const Prefix&) { return Token{2, std::nullopt}; });
  p.accept_probability = [strict](const Prefix& x, std::span<const TaskChoice>) {
    const std::int64_t a = x.prompt.at(0).value;
    const std::int64_t b = x.generated.at(0).value;
    const std::int64_t c = x.generated.at(1).value;
    if (b == 1 && c == 1 && (a == 1 || a == 2)) return 1.0;
    if (!strict && a == 1 && b == 2 && c == 2) return 1.0;
    return 0.0;
  };
  p.prompts = {WeightedPrompt{{Token{1, std::nullopt}}, 0.5},
               WeightedPrompt{{Token{2, std::nullopt}}, 0.5}};
  p.sample_prompt = [](Rng& rng) {
    return std::vector<Token>{Token{rng.below(2) ? 2 : 1, std::nullopt}};
  };
  return detail::checked(std::move(p));
}

/// Largest digit count whose prompt space is materialized.
inline constexpr std::size_t kAdditionEnumerableDigits = 2;

/// Column-wise long addition of two uniformly random num_digits-digit numbers
/// (leading zeros allowed). The prompt lists the digits of a then b, least
/// significant first. Step s handles column s; the last step emits the final
/// carry. Tokens encode digit + 10 * carry_out. Task 0 adds the incoming
/// carry, task 1 drops it. The verifier reads the emitted digits as the sum.
inline Problem make_addition(std::size_t num_digits) {
  if (num_digits < 1 || num_digits > 6) {
    throw ValidationError("make_addition: num_digits must be in [1, 6]");
  }
  const std::size_t n = num_digits;
  Problem p;
  p.name = "addition";
  p.num_tasks = 2;
  p.num_steps = n + 1;
  p.tau.assign(n + 1, 0);

  const auto column = [n](const Prefix& x, bool use_carry, std::size_t tag) {
    const std::size_t s = x.step();
    std::int64_t carry_in = 0;
    if (use_carry && s > 0) {
      const Token& last = x.generated.back();
      carry_in = last.is_dead() ? 0 : last.value / 10;
    }
    const std::int64_t a = s < n ? x.prompt.at(s).value : 0;
    const std::int64_t b = s < n ? x.prompt.at(n + s).value : 0;
    // digit + 10 * carry_out is just the column total.
    return Token{a + b + carry_in, tag};
  };
  p.tasks.push_back([column](const Prefix& x) { return column(x, true, 0); });
  p.tasks.push_back([column](const Prefix& x) { return column(x, false, 1); });

  const auto read_number = [n](std::span<const Token> digits) {
    std::int64_t v = 0;
    for (std::size_t i = digits.size(); i-- > 0;) v = 10 * v + digits[i].value;
    return v;
  };
  p.accept_probability = [n, read_number](const Prefix& x, std::span<const TaskChoice> trace) {
    if (detail::any_dead(trace)) return 0.0;
    std::vector<Token> out;
    out.reserve(x.generated.size());
    for (const Token& t : x.generated) out.push_back(Token{t.value % 10, std::nullopt});
    const std::span<const Token> prompt(x.prompt);
    const std::int64_t sum = read_number(prompt.subspan(0, n)) + read_number(prompt.subspan(n, n));
    return read_number(out) == sum ? 1.0 : 0.0;
  };

  p.sample_prompt = [n](Rng& rng) {
    std::vector<Token> prompt;
    prompt.reserve(2 * n);
    for (std::size_t i = 0; i < 2 * n; ++i) {
      prompt.push_back(Token{static_cast<std::int64_t>(rng.below(10)), std::nullopt});
    }
    return prompt;
  };

  if (n <= kAdditionEnumerableDigits) {
    std::size_t count = 1;
    for (std::size_t i = 0; i < 2 * n; ++i) count *= 10;
    const double prob = 1.0 / static_cast<double>(count);
    p.prompts.reserve(count);
    for (std::size_t code = 0; code < count; ++code) {
      WeightedPrompt wp{{}, prob};
      std::size_t c = code;
      for (std::size_t i = 0; i < 2 * n; ++i, c /= 10) {
        wp.tokens.push_back(Token{static_cast<std::int64_t>(c % 10), std::nullopt});
      }
      p.prompts.push_back(std::move(wp));
    }
  }
  return detail::checked(std::move(p));
}

}  // namespace rlvr
