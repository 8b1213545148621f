#pragma once

// Experiment configuration: a single JSON document (schema_version 1), parsed
// fail-fast with unknown keys rejected, and re-emitted with every default
// filled in so a run can be reproduced from its own output directory.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rlvr/core_model.hpp"
#include "rlvr/errors.hpp"
#include "rlvr/io.hpp"
#include "rlvr/problems.hpp"
#include "rlvr/training.hpp"

namespace rlvr {

using io::json;

inline constexpr int kSchemaVersion = 1;

enum class ExperimentKind { simulate, sweep_length, sweep_p0, verify, plan, mean_field };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::simulate: return "simulate";
    case ExperimentKind::sweep_length: return "sweep_length";
    case ExperimentKind::sweep_p0: return "sweep_p0";
    case ExperimentKind::verify: return "verify";
    case ExperimentKind::plan: return "plan";
    case ExperimentKind::mean_field: return "mean_field";
  }
  return "?";
}

/// Accepts both "sweep_length" and "sweep-length".
inline std::optional<ExperimentKind> parse_kind(std::string_view name) {
  std::string s(name);
  std::replace(s.begin(), s.end(), '-', '_');
  for (auto k : {ExperimentKind::simulate, ExperimentKind::sweep_length, ExperimentKind::sweep_p0,
                 ExperimentKind::verify, ExperimentKind::plan, ExperimentKind::mean_field}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

struct ProblemSpec {
  std::string name = "trap";  // trap | parity | recovery | addition
  bool strict = false;
  std::size_t d = 3;
  std::vector<std::size_t> parity_set;  // 1-based; empty means every bit
  std::vector<double> lambdas;          // recovery; empty means `steps` copies of `lambda`
  double lambda = 0.5;
  std::size_t steps = 4;
  std::size_t digits = 2;
};

struct InitSpec {
  std::string kind = "uniform";  // uniform | correct_prob | logits
  double p0 = 0.5;
  std::vector<std::vector<double>> logits;
};

struct SweepSpec {
  std::vector<double> grid;
  double target_accuracy = 0.9;
  std::size_t iteration_cap = 1'000'000;
  std::string eta_scaling = "constant";  // constant | inverse_length
};

struct VerifySpec {
  std::size_t mc_batches = 20'000;
  std::size_t batch_size = 32;
  std::size_t mc_rollouts = 100'000;
  std::size_t random_pairs = 100;
  double eta = 0.1;
};

struct PlanSpec {
  PlannerInputs inputs;
  std::optional<double> acceptance_rate;  // default: p0_min^S
};

struct MeanFieldSpec {
  std::vector<double> p0_grid{0.1, 0.2, 0.25, 0.32, 0.34, 0.4, 0.5, 0.9};
  double eta = 0.1;
  std::size_t max_iter = 100'000;
  double tol = 1e-4;
  std::size_t stride = 100;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::simulate;
  std::uint64_t seed = 0;
  ProblemSpec problem;
  InitSpec init;
  double gamma = 1.0;
  std::size_t dead_tokens = 0;
  TrainConfig train;
  std::size_t replicates = 1;
  SweepSpec sweep;
  VerifySpec verify;
  PlanSpec plan;
  MeanFieldSpec mean_field;
};

// ---------------------------------------------------------------------------
// Building problems and initial policies.

inline Problem build_problem(const ProblemSpec& spec) {
  if (spec.name == "trap") return make_two_token_trap(spec.strict);
  if (spec.name == "parity") {
    std::vector<std::size_t> set = spec.parity_set;
    if (set.empty()) {
      for (std::size_t i = 1; i <= spec.d; ++i) set.push_back(i);
    }
    return make_parity(spec.d, set);
  }
  if (spec.name == "recovery") {
    return spec.lambdas.empty() ? make_recovery(spec.lambda, spec.steps) : make_recovery(spec.lambdas);
  }
  if (spec.name == "addition") return make_addition(spec.digits);
  throw ValidationError("unknown problem '" + spec.name + "' (trap, parity, recovery, addition)");
}

/// The same problem family at CoT length `length` (S for recovery, d for parity).
inline ProblemSpec with_length(ProblemSpec spec, std::size_t length) {
  if (spec.name == "recovery") {
    spec.lambdas.clear();
    spec.steps = length;
  } else if (spec.name == "parity") {
    spec.d = length;
    spec.parity_set.clear();
  } else {
    throw ValidationError("length sweeps support recovery and parity only");
  }
  return spec;
}

inline PolicyParams build_policy(const InitSpec& init, const Problem& problem, double gamma,
                                 std::size_t dead_tokens) {
  const std::size_t S = problem.num_steps;
  const std::size_t J = problem.num_tasks;
  const std::vector<std::size_t> dead(S, dead_tokens);
  if (init.kind == "uniform") return PolicyParams(Table<double>(S, J, 0.0), gamma, dead);
  if (init.kind == "correct_prob") {
    if (dead_tokens > 0) throw ValidationError("init correct_prob does not support dead tokens");
    return correct_prob_policy(problem.tau, J, init.p0, gamma);
  }
  if (init.kind == "logits") {
    if (init.logits.size() != S) throw ValidationError("init logits must have S rows");
    for (const auto& row : init.logits) {
      if (row.size() != J) throw ValidationError("init logits must have J columns");
    }
    return PolicyParams(Table<double>::from_rows(init.logits), gamma, dead);
  }
  throw ValidationError("unknown init kind '" + init.kind + "' (uniform, correct_prob, logits)");
}

// ---------------------------------------------------------------------------
// Parsing.

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ValidationError(where_ + ": expected a JSON object");
  }

  const json* take(const std::string& key) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ValidationError(where_ + ": unknown key '" + key + "'");
    }
  }

  const std::string& where() const { return where_; }

  std::string path(const std::string& key) const { return where_ + "." + key; }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

inline double as_real(const json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
  }
  throw ValidationError(where + ": expected a number");
}

inline std::uint64_t as_count(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  if (v.is_number_float()) {
    const double x = v.get<double>();
    if (x >= 0.0 && x < 1.8e19 && std::floor(x) == x) return static_cast<std::uint64_t>(x);
  }
  throw ValidationError(where + ": expected a non-negative integer");
}

inline bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw ValidationError(where + ": expected true or false");
  return v.get<bool>();
}

inline std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw ValidationError(where + ": expected a string");
  return v.get<std::string>();
}

inline std::vector<double> as_reals(const json& v, const std::string& where) {
  if (!v.is_array()) throw ValidationError(where + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) out.push_back(as_real(x, where));
  return out;
}

inline std::vector<std::size_t> as_counts(const json& v, const std::string& where) {
  if (!v.is_array()) throw ValidationError(where + ": expected an array of integers");
  std::vector<std::size_t> out;
  for (const auto& x : v) out.push_back(as_count(x, where));
  return out;
}

template <typename T, typename Conv>
void read(ObjectReader& r, const std::string& key, T& target, Conv conv) {
  if (const json* v = r.take(key)) target = static_cast<T>(conv(*v, r.path(key)));
}

inline bool exact_metrics_feasible(const Problem& p) {
  if (p.step_factors) return true;
  const double traces = std::pow(static_cast<double>(p.num_tasks), static_cast<double>(p.num_steps));
  if (p.trace_acceptance) return traces <= 1e7;
  return p.enumerable() && traces * static_cast<double>(p.prompts.size()) <= 1e7;
}

inline void parse_problem(const json& v, ProblemSpec& spec, bool sweep) {
  ObjectReader r(v, "problem");
  read(r, "name", spec.name, as_string);
  if (spec.name == "trap") {
    read(r, "strict", spec.strict, as_bool);
  } else if (spec.name == "parity") {
    if (!sweep) {
      read(r, "d", spec.d, as_count);
      read(r, "parity_set", spec.parity_set, as_counts);
    }
  } else if (spec.name == "recovery") {
    const bool scalar = v.contains("lambda") || v.contains("steps");
    read(r, "lambda", spec.lambda, as_real);
    if (!sweep) {
      read(r, "steps", spec.steps, as_count);
      read(r, "lambdas", spec.lambdas, as_reals);
      if (scalar && v.contains("lambdas")) {
        throw ValidationError("problem: give either lambdas or lambda/steps, not both");
      }
      if (v.contains("lambdas") && spec.lambdas.empty()) {
        throw ValidationError("problem.lambdas: must be non-empty");
      }
    }
  } else if (spec.name == "addition") {
    read(r, "digits", spec.digits, as_count);
  } else {
    throw ValidationError("problem.name: unknown problem '" + spec.name +
                          "' (trap, parity, recovery, addition)");
  }
  r.finish();
}

inline void parse_train(const json& v, TrainConfig& t, ExperimentKind kind, bool& mode_given) {
  ObjectReader r(v, "train");
  read(r, "eta", t.eta, as_real);
  read(r, "batch_size", t.batch_size, as_count);
  read(r, "max_resample", t.max_resample, as_count);
  read(r, "mc_samples", t.mc_samples, as_count);
  // Length sweeps take their iteration budget and stop rule from "sweep".
  if (kind != ExperimentKind::sweep_length) read(r, "iterations", t.iterations, as_count);
  if (kind == ExperimentKind::simulate) {
    if (const json* s = r.take("stop_at_success")) {
      if (s->is_null()) {
        t.stop_at_success.reset();
      } else {
        t.stop_at_success = as_real(*s, "train.stop_at_success");
      }
    }
  }
  if (const json* m = r.take("metrics_mode")) {
    const auto mode = as_string(*m, "train.metrics_mode");
    if (mode == "exact") {
      t.metrics_mode = MetricsMode::exact;
    } else if (mode == "monte_carlo") {
      t.metrics_mode = MetricsMode::monte_carlo;
    } else {
      throw ValidationError("train.metrics_mode: expected exact or monte_carlo");
    }
    mode_given = true;
  }
  r.finish();
}

inline std::vector<double> default_length_grid(const std::string& problem) {
  if (problem == "parity") return {2, 3, 4, 5, 6};
  return {2, 4, 8, 16};
}

/// Kind- and problem-dependent defaults, applied after the problem is known
/// and before the rest of the document overrides them.
inline void apply_defaults(ExperimentConfig& c) {
  const bool trap = c.problem.name == "trap";
  switch (c.kind) {
    case ExperimentKind::simulate:
      c.gamma = trap ? 1.0 : 10.0;
      c.init.kind = trap ? "correct_prob" : "uniform";
      c.train.eta = 0.1;
      c.train.batch_size = 256;
      c.train.iterations = 2000;
      break;
    case ExperimentKind::sweep_length:
      c.gamma = 1.0;
      c.replicates = 5;
      c.sweep.grid = default_length_grid(c.problem.name);
      c.train.eta = 0.2;
      if (c.problem.name == "parity") {
        c.train.batch_size = 1024;
        c.sweep.eta_scaling = "constant";
      } else {
        c.train.batch_size = 32;
        c.sweep.eta_scaling = "inverse_length";
      }
      break;
    case ExperimentKind::sweep_p0:
      c.gamma = 1.0;
      c.train.eta = 0.1;
      c.train.batch_size = 256;
      c.train.iterations = 2000;
      c.sweep.grid = {0.15, 0.25, 0.30, 1.0 / 3.0, 0.40, 0.60, 0.90};
      break;
    default:
      break;
  }
}

}  // namespace detail

inline void validate(const ExperimentConfig& c);

/// Parses a config document for the given subcommand. A document that names
/// a different experiment is rejected.
inline ExperimentConfig parse_config(const json& doc, ExperimentKind kind) {
  using namespace detail;
  ExperimentConfig c;
  c.kind = kind;
  ObjectReader r(doc, "config");

  if (const json* v = r.take("schema_version")) {
    if (as_count(*v, "schema_version") != static_cast<std::uint64_t>(kSchemaVersion)) {
      throw ValidationError("schema_version: only version 1 is supported");
    }
  }
  if (const json* v = r.take("experiment")) {
    const auto named = parse_kind(as_string(*v, "experiment"));
    if (!named) throw ValidationError("experiment: unknown kind");
    if (*named != kind) {
      throw ValidationError(std::string("experiment: config is for '") + to_string(*named) +
                            "' but the command is '" + to_string(kind) + "'");
    }
  }
  read(r, "seed", c.seed, as_count);

  const bool training = kind == ExperimentKind::simulate || kind == ExperimentKind::sweep_length ||
                        kind == ExperimentKind::sweep_p0;
  const bool sweep = kind == ExperimentKind::sweep_length || kind == ExperimentKind::sweep_p0;
  if (kind == ExperimentKind::sweep_length) c.problem.name = "recovery";
  if (training) {
    if (const json* v = r.take("problem")) parse_problem(*v, c.problem, kind == ExperimentKind::sweep_length);
  }
  apply_defaults(c);

  bool mode_given = false;
  if (training) {
    read(r, "gamma", c.gamma, as_real);
    if (const json* v = r.take("train")) parse_train(*v, c.train, kind, mode_given);
    read(r, "replicates", c.replicates, as_count);
  }
  if (kind == ExperimentKind::simulate || kind == ExperimentKind::sweep_length) {
    read(r, "dead_tokens", c.dead_tokens, as_count);
    if (const json* v = r.take("init")) {
      ObjectReader ir(*v, "init");
      read(ir, "kind", c.init.kind, as_string);
      if (c.init.kind == "correct_prob") read(ir, "p0", c.init.p0, as_real);
      if (c.init.kind == "logits") {
        if (const json* u = ir.take("u")) {
          if (!u->is_array()) throw ValidationError("init.u: expected an array of rows");
          c.init.logits.clear();
          for (const auto& row : *u) c.init.logits.push_back(as_reals(row, "init.u"));
        } else {
          throw ValidationError("init.u: required for kind logits");
        }
      }
      ir.finish();
    }
  }
  if (sweep) {
    if (const json* v = r.take("sweep")) {
      ObjectReader sr(*v, "sweep");
      read(sr, "grid", c.sweep.grid, as_reals);
      if (kind == ExperimentKind::sweep_length) {
        read(sr, "target_accuracy", c.sweep.target_accuracy, as_real);
        read(sr, "iteration_cap", c.sweep.iteration_cap, as_count);
        read(sr, "eta_scaling", c.sweep.eta_scaling, as_string);
      }
      sr.finish();
    }
  }
  if (kind == ExperimentKind::verify) {
    if (const json* v = r.take("verify")) {
      ObjectReader vr(*v, "verify");
      read(vr, "mc_batches", c.verify.mc_batches, as_count);
      read(vr, "batch_size", c.verify.batch_size, as_count);
      read(vr, "mc_rollouts", c.verify.mc_rollouts, as_count);
      read(vr, "random_pairs", c.verify.random_pairs, as_count);
      read(vr, "eta", c.verify.eta, as_real);
      vr.finish();
    }
  }
  if (kind == ExperimentKind::plan) {
    if (const json* v = r.take("plan")) {
      ObjectReader pr(*v, "plan");
      auto& in = c.plan.inputs;
      read(pr, "epsilon", in.epsilon, as_real);
      read(pr, "delta", in.delta, as_real);
      read(pr, "alpha", in.alpha, as_real);
      read(pr, "p0_min", in.p0_min, as_real);
      read(pr, "steps", in.steps, as_count);
      read(pr, "tasks", in.tasks, as_count);
      read(pr, "gamma", in.gamma, as_real);
      if (const json* a = pr.take("acceptance_rate")) {
        if (!a->is_null()) c.plan.acceptance_rate = as_real(*a, "plan.acceptance_rate");
      }
      pr.finish();
    }
  }
  if (kind == ExperimentKind::mean_field) {
    if (const json* v = r.take("mean_field")) {
      ObjectReader mr(*v, "mean_field");
      read(mr, "p0_grid", c.mean_field.p0_grid, as_reals);
      read(mr, "eta", c.mean_field.eta, as_real);
      read(mr, "max_iter", c.mean_field.max_iter, as_count);
      read(mr, "tol", c.mean_field.tol, as_real);
      read(mr, "stride", c.mean_field.stride, as_count);
      mr.finish();
    }
  }
  r.finish();

  if (training && !mode_given) {
    const ProblemSpec probe = kind == ExperimentKind::sweep_length
                                  ? with_length(c.problem, static_cast<std::size_t>(
                                                               *std::max_element(c.sweep.grid.begin(),
                                                                                 c.sweep.grid.end())))
                                  : c.problem;
    c.train.metrics_mode = exact_metrics_feasible(build_problem(probe)) ? MetricsMode::exact
                                                                        : MetricsMode::monte_carlo;
  }
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_text(std::string_view text, ExperimentKind kind) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc, kind);
}

inline ExperimentConfig default_config(ExperimentKind kind) {
  return parse_config(json::object(), kind);
}

// ---------------------------------------------------------------------------
// Validation.

inline std::size_t as_length(double x, const char* what) {
  if (!(x >= 1.0) || std::floor(x) != x || x > 1e6) {
    throw ValidationError(std::string(what) + ": grid values must be positive integers");
  }
  return static_cast<std::size_t>(x);
}

inline void validate(const ExperimentConfig& c) {
  const bool training = c.kind == ExperimentKind::simulate || c.kind == ExperimentKind::sweep_length ||
                        c.kind == ExperimentKind::sweep_p0;
  if (training) {
    if (!(c.gamma > 0.0) || !std::isfinite(c.gamma)) throw ValidationError("gamma must be > 0");
    if (c.replicates < 1) throw ValidationError("replicates must be >= 1");
    TrainConfig t = c.train;
    if (c.kind == ExperimentKind::sweep_length) t.iterations = std::max<std::size_t>(1, c.sweep.iteration_cap);
    validate(t);
  }
  switch (c.kind) {
    case ExperimentKind::simulate: {
      const Problem p = build_problem(c.problem);
      build_policy(c.init, p, c.gamma, c.dead_tokens);
      if (c.train.metrics_mode == MetricsMode::exact && !detail::exact_metrics_feasible(p)) {
        throw ValidationError("exact metrics are too expensive for this problem; use monte_carlo");
      }
      break;
    }
    case ExperimentKind::sweep_length: {
      if (c.problem.name != "recovery" && c.problem.name != "parity") {
        throw ValidationError("sweep_length: problem must be recovery or parity");
      }
      if (c.sweep.grid.empty()) throw ValidationError("sweep.grid must be non-empty");
      if (!(c.sweep.target_accuracy > 0.0 && c.sweep.target_accuracy <= 1.0)) {
        throw ValidationError("sweep.target_accuracy must be in (0, 1]");
      }
      if (c.sweep.iteration_cap < 1) throw ValidationError("sweep.iteration_cap must be >= 1");
      if (c.sweep.eta_scaling != "constant" && c.sweep.eta_scaling != "inverse_length") {
        throw ValidationError("sweep.eta_scaling must be constant or inverse_length");
      }
      for (double x : c.sweep.grid) {
        const Problem p = build_problem(with_length(c.problem, as_length(x, "sweep.grid")));
        build_policy(c.init, p, c.gamma, c.dead_tokens);
        if (c.train.metrics_mode == MetricsMode::exact && !detail::exact_metrics_feasible(p)) {
          throw ValidationError("exact metrics are too expensive at this length; use monte_carlo");
        }
      }
      break;
    }
    case ExperimentKind::sweep_p0:
      if (c.problem.name != "trap") throw ValidationError("sweep_p0: problem must be trap");
      if (c.sweep.grid.empty()) throw ValidationError("sweep.grid must be non-empty");
      for (double p0 : c.sweep.grid) {
        if (!(p0 > 0.0 && p0 < 1.0)) throw ValidationError("sweep.grid: p0 must be in (0, 1)");
      }
      break;
    case ExperimentKind::verify:
      if (c.verify.mc_batches < 2 || c.verify.mc_rollouts < 100 || c.verify.batch_size < 1) {
        throw ValidationError("verify: need mc_batches >= 2, mc_rollouts >= 100, batch_size >= 1");
      }
      if (!(c.verify.eta > 0.0)) throw ValidationError("verify.eta must be > 0");
      break;
    case ExperimentKind::plan:
      plan_hyperparameters(c.plan.inputs);
      if (c.plan.acceptance_rate && !(*c.plan.acceptance_rate > 0.0 && *c.plan.acceptance_rate <= 1.0)) {
        throw ValidationError("plan.acceptance_rate must be in (0, 1]");
      }
      break;
    case ExperimentKind::mean_field:
      if (c.mean_field.p0_grid.empty()) throw ValidationError("mean_field.p0_grid must be non-empty");
      for (double p0 : c.mean_field.p0_grid) {
        if (!(p0 > 0.0 && p0 < 1.0)) throw ValidationError("mean_field.p0_grid: p0 must be in (0, 1)");
      }
      if (!(c.mean_field.eta > 0.0)) throw ValidationError("mean_field.eta must be > 0");
      if (!(c.mean_field.tol > 0.0 && c.mean_field.tol < 0.5)) {
        throw ValidationError("mean_field.tol must be in (0, 1/2)");
      }
      if (c.mean_field.stride < 1) throw ValidationError("mean_field.stride must be >= 1");
      break;
  }
}

// ---------------------------------------------------------------------------
// Resolved form.

inline json to_json(const ProblemSpec& p, bool sweep) {
  json j;
  j["name"] = p.name;
  if (p.name == "trap") {
    j["strict"] = p.strict;
  } else if (p.name == "parity") {
    if (!sweep) {
      j["d"] = p.d;
      std::vector<std::size_t> set = p.parity_set;
      if (set.empty()) {
        for (std::size_t i = 1; i <= p.d; ++i) set.push_back(i);
      }
      j["parity_set"] = set;
    }
  } else if (p.name == "recovery") {
    if (sweep) {
      j["lambda"] = p.lambda;
    } else {
      j["lambdas"] = p.lambdas.empty() ? std::vector<double>(p.steps, p.lambda) : p.lambdas;
    }
  } else if (p.name == "addition") {
    j["digits"] = p.digits;
  }
  return j;
}

/// Every parameter that influences the outputs, defaults included. The
/// thread count is deliberately absent: results do not depend on it.
inline json resolved_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["experiment"] = to_string(c.kind);
  j["seed"] = c.seed;
  const bool sweep = c.kind == ExperimentKind::sweep_length || c.kind == ExperimentKind::sweep_p0;
  if (c.kind == ExperimentKind::simulate || sweep) {
    j["problem"] = to_json(c.problem, c.kind == ExperimentKind::sweep_length);
    if (c.kind != ExperimentKind::sweep_p0) {
      json init;
      init["kind"] = c.init.kind;
      if (c.init.kind == "correct_prob") init["p0"] = c.init.p0;
      if (c.init.kind == "logits") init["u"] = c.init.logits;
      j["init"] = init;
      j["dead_tokens"] = c.dead_tokens;
    }
    j["gamma"] = c.gamma;
    json t;
    t["eta"] = c.train.eta;
    t["batch_size"] = c.train.batch_size;
    if (!sweep || c.kind == ExperimentKind::sweep_p0) t["iterations"] = c.train.iterations;
    t["max_resample"] = c.train.max_resample;
    t["metrics_mode"] = c.train.metrics_mode == MetricsMode::exact ? "exact" : "monte_carlo";
    t["mc_samples"] = c.train.mc_samples;
    if (c.kind == ExperimentKind::simulate) {
      t["stop_at_success"] = c.train.stop_at_success ? json(*c.train.stop_at_success) : json(nullptr);
    }
    j["train"] = t;
    j["replicates"] = c.replicates;
  }
  if (sweep) {
    json s;
    s["grid"] = c.sweep.grid;
    if (c.kind == ExperimentKind::sweep_length) {
      s["target_accuracy"] = c.sweep.target_accuracy;
      s["iteration_cap"] = c.sweep.iteration_cap;
      s["eta_scaling"] = c.sweep.eta_scaling;
    }
    j["sweep"] = s;
  }
  if (c.kind == ExperimentKind::verify) {
    j["verify"] = {{"mc_batches", c.verify.mc_batches},
                   {"batch_size", c.verify.batch_size},
                   {"mc_rollouts", c.verify.mc_rollouts},
                   {"random_pairs", c.verify.random_pairs},
                   {"eta", c.verify.eta}};
  }
  if (c.kind == ExperimentKind::plan) {
    const auto& in = c.plan.inputs;
    json p;
    p["epsilon"] = in.epsilon;
    p["delta"] = in.delta;
    p["alpha"] = in.alpha;
    p["p0_min"] = in.p0_min;
    p["steps"] = in.steps;
    p["tasks"] = in.tasks;
    p["gamma"] = in.gamma;
    p["acceptance_rate"] = c.plan.acceptance_rate ? json(*c.plan.acceptance_rate) : json(nullptr);
    j["plan"] = p;
  }
  if (c.kind == ExperimentKind::mean_field) {
    j["mean_field"] = {{"p0_grid", c.mean_field.p0_grid},
                       {"eta", c.mean_field.eta},
                       {"max_iter", c.mean_field.max_iter},
                       {"tol", c.mean_field.tol},
                       {"stride", c.mean_field.stride}};
  }
  return j;
}

}  // namespace rlvr
