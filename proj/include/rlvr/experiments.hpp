#pragma once

// Experiment recipes behind the CLI subcommands. Each run_* function takes a
// validated config, optionally writes its files into ctx.out_dir and returns
// the numbers it wrote so tests can inspect them without parsing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rlvr/analysis.hpp"
#include "rlvr/config.hpp"
#include "rlvr/io.hpp"
#include "rlvr/parallel.hpp"
#include "rlvr/problems.hpp"
#include "rlvr/random.hpp"
#include "rlvr/training.hpp"

namespace rlvr {

struct RunContext {
  std::filesystem::path out_dir;  // empty: write nothing
  std::size_t threads = 1;
  std::ostream* log = nullptr;
};

namespace detail {

inline json file_header(const ExperimentConfig& c, const std::vector<std::string>& notes = {}) {
  json h;
  h["schema_version"] = kSchemaVersion;
  h["seed"] = c.seed;
  h["config"] = resolved_json(c);
  if (!notes.empty()) h["notes"] = notes;
  return h;
}

inline void write_config(const ExperimentConfig& c, const RunContext& ctx) {
  if (ctx.out_dir.empty()) return;
  io::write_file(ctx.out_dir / "config.json", io::to_json_text(resolved_json(c), 2) + "\n");
}

inline void write_output(const RunContext& ctx, const char* name, const std::string& text) {
  if (!ctx.out_dir.empty()) io::write_file(ctx.out_dir / name, text);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double min_of(const std::vector<double>& v) {
  return v.empty() ? std::nan("") : *std::min_element(v.begin(), v.end());
}

inline std::vector<std::string> trap_notes() {
  return {"eta, gamma and iterations of the trap recipe are artifact choices; only B = 256 is given"};
}

}  // namespace detail

/// Least-squares slope of log(y) against log(x).
inline std::optional<double> loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) return std::nullopt;
  return sxy / sxx;
}

inline json metrics_json(const MetricsRecord& m, std::size_t replicate) {
  json j;
  j["replicate"] = replicate;
  j["iteration"] = m.iteration;
  j["success_prob"] = m.success_prob;
  j["success_samples"] = m.success_samples;
  j["correct_prob"] = m.correct_prob;
  if (m.rho) {
    json rows = json::array();
    for (std::size_t s = 0; s < m.rho->rows(); ++s) {
      const auto r = m.rho->row(s);
      rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    j["rho"] = rows;
  } else {
    j["rho"] = nullptr;
  }
  j["margin_alpha"] = m.margin_alpha ? json(*m.margin_alpha) : json(nullptr);
  j["margin_ok"] = m.rho ? json(m.margin_ok) : json(nullptr);
  j["error_ratios"] = m.error_ratios;
  j["verifier_lower_bound"] = m.verifier_lower_bound;
  j["ce_loss"] = m.ce_loss;
  j["acceptance_rate"] = m.acceptance_rate ? json(*m.acceptance_rate) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateRun {
  std::uint64_t seed = 0;
  TrainResult result;
};

struct SimulateResult {
  std::vector<SimulateRun> runs;
};

inline SimulateResult run_simulate(const ExperimentConfig& c, const RunContext& ctx = {}) {
  validate(c);
  const Problem problem = build_problem(c.problem);
  const PolicyParams params0 = build_policy(c.init, problem, c.gamma, c.dead_tokens);

  std::vector<std::optional<SimulateRun>> slots(c.replicates);
  const bool across = c.replicates > 1 && ctx.threads > 1;
  const auto job = [&](std::size_t r) {
    TrainConfig t = c.train;
    t.seed = derive_seed(c.seed, 0, r);
    t.threads = across ? 1 : ctx.threads;
    t.keep_records = true;
    slots[r] = SimulateRun{t.seed, train(params0, problem, t)};
  };
  parallel_for(c.replicates, across ? ctx.threads : 1, job);

  SimulateResult out;
  for (auto& s : slots) out.runs.push_back(std::move(*s));

  const auto notes = problem.name == "trap" ? detail::trap_notes() : std::vector<std::string>{};
  const json header = detail::file_header(c, notes);
  std::string jsonl = io::to_json_text(json{{"header", header}}) + "\n";
  io::CsvWriter summary(header);
  for (const char* col : {"replicate", "seed", "updates", "reached_target", "final_success_prob",
                          "min_final_correct_prob", "last_acceptance_rate", "rollouts_drawn",
                          "lipschitz_violations", "margin_violations"}) {
    summary.cell(col);
  }
  summary.end_row();
  for (std::size_t r = 0; r < out.runs.size(); ++r) {
    const auto& run = out.runs[r];
    for (const auto& m : run.result.records) jsonl += io::to_json_text(metrics_json(m, r)) + "\n";
    const auto& res = run.result;
    summary.cell(r).cell(run.seed).cell(res.updates).cell(res.reached_target)
        .cell(res.final_success_prob).cell(detail::min_of(res.final_correct_prob))
        .cell(res.last_acceptance_rate.value_or(std::nan(""))).cell(res.rollouts_drawn)
        .cell(res.lipschitz_violations).cell(res.margin_violations);
    summary.end_row();
    if (ctx.log) {
      *ctx.log << "replicate " << r << ": final success_prob " << io::format_double(res.final_success_prob)
               << " after " << res.updates << " updates\n";
    }
  }
  detail::write_config(c, ctx);
  detail::write_output(ctx, "metrics.jsonl", jsonl);
  detail::write_output(ctx, "summary.csv", summary.text());
  return out;
}

// ---------------------------------------------------------------------------
// sweep-length

struct SweepLengthPoint {
  std::size_t length = 0;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  double eta = 0.0;
  std::size_t iterations = 0;  // first iterate reaching the target, or the cap
  bool capped = false;
  double final_success_prob = 0.0;
  double last_batch_accuracy = 0.0;
};

struct LengthSummary {
  std::size_t length = 0;
  std::size_t replicates = 0;
  std::size_t capped = 0;
  double median_iterations = 0.0;  // capped replicates count as the cap
  bool median_capped = false;
};

struct SweepLengthResult {
  std::vector<SweepLengthPoint> points;
  std::vector<LengthSummary> summary;
  std::optional<double> slope;  // over lengths whose median is uncapped
};

inline SweepLengthResult run_sweep_length(const ExperimentConfig& c, const RunContext& ctx = {}) {
  validate(c);
  const std::size_t G = c.sweep.grid.size();
  const std::size_t R = c.replicates;
  std::vector<SweepLengthPoint> points(G * R);
  parallel_for(G * R, ctx.threads, [&](std::size_t k) {
    const std::size_t g = k / R;
    const std::size_t r = k % R;
    const std::size_t length = as_length(c.sweep.grid[g], "sweep.grid");
    const Problem problem = build_problem(with_length(c.problem, length));
    const PolicyParams params0 = build_policy(c.init, problem, c.gamma, c.dead_tokens);
    TrainConfig t = c.train;
    t.seed = derive_seed(c.seed, g, r);
    t.threads = 1;
    t.keep_records = false;
    t.iterations = c.sweep.iteration_cap;
    t.stop_at_success = c.sweep.target_accuracy;
    if (c.sweep.eta_scaling == "inverse_length") t.eta = c.train.eta / static_cast<double>(length);
    const TrainResult res = train(params0, problem, t);
    SweepLengthPoint& p = points[k];
    p.length = length;
    p.replicate = r;
    p.seed = t.seed;
    p.eta = t.eta;
    p.capped = !res.reached_target;
    p.iterations = res.reached_target ? res.updates : c.sweep.iteration_cap;
    p.final_success_prob = res.final_success_prob;
    p.last_batch_accuracy = res.last_acceptance_rate.value_or(std::nan(""));
  });

  SweepLengthResult out;
  out.points = points;
  std::vector<double> xs, ys;
  for (std::size_t g = 0; g < G; ++g) {
    LengthSummary s;
    s.length = points[g * R].length;
    s.replicates = R;
    std::vector<double> its;
    for (std::size_t r = 0; r < R; ++r) {
      const auto& p = points[g * R + r];
      its.push_back(static_cast<double>(p.iterations));
      s.capped += p.capped;
    }
    s.median_iterations = detail::median(its);
    s.median_capped = s.median_iterations >= static_cast<double>(c.sweep.iteration_cap);
    if (!s.median_capped) {
      xs.push_back(static_cast<double>(s.length));
      ys.push_back(std::max(1.0, s.median_iterations));
    }
    out.summary.push_back(s);
  }
  out.slope = loglog_slope(xs, ys);

  const json header = detail::file_header(
      c, {"grid, replicates, learning rate, batch size and iteration cap are artifact choices",
          "iterations is the index of the first iterate whose exact success probability reaches the target"});
  io::CsvWriter sweep(header);
  for (const char* col : {"length", "replicate", "seed", "eta", "iterations", "capped",
                          "final_success_prob", "last_batch_accuracy"}) {
    sweep.cell(col);
  }
  sweep.end_row();
  for (const auto& p : out.points) {
    sweep.cell(p.length).cell(p.replicate).cell(p.seed).cell(p.eta).cell(p.iterations).cell(p.capped)
        .cell(p.final_success_prob).cell(p.last_batch_accuracy);
    sweep.end_row();
  }
  io::CsvWriter summary(header);
  for (const char* col : {"length", "replicates", "capped", "median_iterations", "ratio_to_previous"}) {
    summary.cell(col);
  }
  summary.end_row();
  for (std::size_t g = 0; g < out.summary.size(); ++g) {
    const auto& s = out.summary[g];
    const double ratio = g == 0 ? std::nan("") : s.median_iterations / out.summary[g - 1].median_iterations;
    summary.cell(s.length).cell(s.replicates).cell(s.capped).cell(s.median_iterations).cell(ratio);
    summary.end_row();
    if (ctx.log) {
      *ctx.log << "length " << s.length << ": median iterations " << io::format_double(s.median_iterations)
               << " (" << s.capped << "/" << s.replicates << " capped)\n";
    }
  }
  summary.comment("loglog_slope=" + io::format_double(out.slope.value_or(std::nan(""))));
  if (ctx.log) *ctx.log << "log-log slope " << io::format_double(out.slope.value_or(std::nan(""))) << "\n";
  detail::write_config(c, ctx);
  detail::write_output(ctx, "sweep.csv", sweep.text());
  detail::write_output(ctx, "summary.csv", summary.text());
  return out;
}

// ---------------------------------------------------------------------------
// sweep-p0

struct SweepP0Point {
  double p0 = 0.0;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  double last_batch_accuracy = 0.0;
  double exact_success_prob = 0.0;
  std::optional<double> expected_limit;  // none at p0 = 1/3
};

struct SweepP0Result {
  std::vector<SweepP0Point> points;
};

inline SweepP0Result run_sweep_p0(const ExperimentConfig& c, const RunContext& ctx = {}) {
  validate(c);
  const Problem problem = build_problem(c.problem);
  const std::size_t G = c.sweep.grid.size();
  const std::size_t R = c.replicates;
  std::vector<SweepP0Point> points(G * R);
  parallel_for(G * R, ctx.threads, [&](std::size_t k) {
    const std::size_t g = k / R;
    const std::size_t r = k % R;
    const double p0 = c.sweep.grid[g];
    TrainConfig t = c.train;
    t.seed = derive_seed(c.seed, g, r);
    t.threads = 1;
    t.keep_records = false;
    const TrainResult res = train(correct_prob_policy(problem.tau, problem.num_tasks, p0, c.gamma), problem, t);
    SweepP0Point& p = points[k];
    p.p0 = p0;
    p.replicate = r;
    p.seed = t.seed;
    p.last_batch_accuracy = res.last_acceptance_rate.value_or(std::nan(""));
    p.exact_success_prob = res.final_success_prob;
    if (p0 > 1.0 / 3.0) p.expected_limit = 1.0;
    if (p0 < 1.0 / 3.0) p.expected_limit = 0.5;
  });

  auto notes = detail::trap_notes();
  notes.push_back("last_batch_accuracy is the acceptance rate of the final training batch");
  io::CsvWriter csv(detail::file_header(c, notes));
  for (const char* col : {"p0", "replicate", "seed", "last_batch_accuracy", "exact_success_prob",
                          "expected_limit"}) {
    csv.cell(col);
  }
  csv.end_row();
  for (const auto& p : points) {
    csv.cell(p.p0).cell(p.replicate).cell(p.seed).cell(p.last_batch_accuracy).cell(p.exact_success_prob);
    if (p.expected_limit) {
      csv.cell(*p.expected_limit);
    } else {
      csv.cell("none");
    }
    csv.end_row();
    if (ctx.log) {
      *ctx.log << "p0 " << io::format_double(p.p0) << " replicate " << p.replicate << ": exact success "
               << io::format_double(p.exact_success_prob) << ", last batch "
               << io::format_double(p.last_batch_accuracy) << "\n";
    }
  }
  detail::write_config(c, ctx);
  detail::write_output(ctx, "sweep.csv", csv.text());
  return SweepP0Result{std::move(points)};
}

// ---------------------------------------------------------------------------
// plan

struct PlanResult {
  HyperparameterPlan plan;
  double acceptance_rate = 1.0;
  double expected_draws = 0.0;
};

inline PlanResult run_plan(const ExperimentConfig& c, const RunContext& ctx = {}) {
  validate(c);
  PlanResult out;
  out.plan = plan_hyperparameters(c.plan.inputs);
  // With the correct composition always accepted, P(V=1) >= p0_min^S at init.
  out.acceptance_rate = c.plan.acceptance_rate.value_or(
      std::pow(c.plan.inputs.p0_min, static_cast<double>(c.plan.inputs.steps)));
  out.expected_draws = static_cast<double>(out.plan.iterations) *
                       static_cast<double>(out.plan.batch_size) / out.acceptance_rate;

  io::CsvWriter csv(detail::file_header(c));
  for (const char* col : {"eps_tilde", "eta", "iterations", "batch_size_real", "batch_size",
                          "acceptance_rate", "expected_draws"}) {
    csv.cell(col);
  }
  csv.end_row();
  csv.cell(out.plan.eps_tilde).cell(out.plan.eta).cell(out.plan.iterations).cell(out.plan.batch_size_real)
      .cell(out.plan.batch_size).cell(out.acceptance_rate).cell(out.expected_draws);
  csv.end_row();
  if (ctx.log) {
    auto& o = *ctx.log;
    o << "eps_tilde        " << io::format_double(out.plan.eps_tilde) << "\n"
      << "eta              " << io::format_double(out.plan.eta) << "\n"
      << "T                " << out.plan.iterations << "\n"
      << "B (real)         " << io::format_double(out.plan.batch_size_real) << "\n"
      << "B                " << out.plan.batch_size << "\n"
      << "feasibility      about " << io::format_double(out.expected_draws)
      << " rollout draws (T * B / acceptance rate " << io::format_double(out.acceptance_rate) << ")\n";
  }
  detail::write_config(c, ctx);
  detail::write_output(ctx, "plan.csv", csv.text());
  return out;
}

// ---------------------------------------------------------------------------
// mean-field

struct MeanFieldRow {
  double p0 = 0.0;
  MeanFieldLimit limit = MeanFieldLimit::undetermined;
  std::size_t iterations = 0;
  double final_p = 0.0;
  double final_success_prob = 0.0;
  std::optional<double> expected_limit;
};

struct MeanFieldResult {
  std::vector<MeanFieldRow> rows;
};

inline MeanFieldResult run_mean_field(const ExperimentConfig& c, const RunContext& ctx = {}) {
  validate(c);
  const auto& mf = c.mean_field;
  const json header = detail::file_header(c);
  io::CsvWriter summary(header);
  io::CsvWriter traj(header);
  for (const char* col : {"p0", "limit", "iterations", "final_p", "final_success_prob", "expected_limit"}) {
    summary.cell(col);
  }
  summary.end_row();
  for (const char* col : {"p0", "t", "z", "p", "success_prob"}) traj.cell(col);
  traj.end_row();

  MeanFieldResult out;
  for (double p0 : mf.p0_grid) {
    MeanFieldRow row;
    row.p0 = p0;
    if (p0 == 1.0 / 3.0) {
      // Unstable fixed point: the recursion never leaves it.
      row.final_p = p0;
      row.final_success_prob = trap_success_prob(p0);
    } else {
      const MeanFieldTrajectory tr = mean_field_trajectory(p0, mf.eta, mf.max_iter, mf.tol);
      row.limit = tr.limit;
      row.iterations = tr.p.size() - 1;
      row.final_p = tr.p.back();
      row.final_success_prob = tr.success_prob.back();
      row.expected_limit = p0 > 1.0 / 3.0 ? 1.0 : 0.5;
      for (std::size_t t = 0; t < tr.p.size(); ++t) {
        if (t % mf.stride != 0 && t + 1 != tr.p.size()) continue;
        traj.cell(p0).cell(t).cell(tr.z[t]).cell(tr.p[t]).cell(tr.success_prob[t]);
        traj.end_row();
      }
    }
    summary.cell(row.p0).cell(to_string(row.limit)).cell(row.iterations).cell(row.final_p)
        .cell(row.final_success_prob);
    if (row.expected_limit) {
      summary.cell(*row.expected_limit);
    } else {
      summary.cell("none");
    }
    summary.end_row();
    if (ctx.log) {
      *ctx.log << "p0 " << io::format_double(p0) << ": " << to_string(row.limit) << " after " << row.iterations
               << " iterations, P(V=1) " << io::format_double(row.final_success_prob) << "\n";
    }
    out.rows.push_back(row);
  }
  detail::write_config(c, ctx);
  detail::write_output(ctx, "mean_field.csv", summary.text());
  detail::write_output(ctx, "mean_field_trajectory.csv", traj.text());
  return out;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyCheck {
  std::string name;
  bool passed = false;
  double statistic = 0.0;  // worst deviation, or worst |z| for Monte-Carlo checks
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyResult {
  std::vector<VerifyCheck> checks;
  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed; });
  }
};

/// Applied to every oracle table before it is checked (fault injection).
using TableHook = std::function<void(OutcomeTable&)>;

namespace detail {

struct Verifier {
  const ExperimentConfig& config;
  std::size_t threads;
  TableHook hook;
  std::vector<VerifyCheck> checks;

  OutcomeTable oracle(const PolicyParams& params, const Problem& problem,
                      EnumerationOptions options = {}) const {
    OutcomeTable t = enumerate_outcomes(params, problem, options);
    if (hook) hook(t);
    return t;
  }

  Rng rng(std::uint64_t check, std::uint64_t index = 0) const {
    return stream(config.seed, StreamDomain::verify, check, index);
  }

  void add(std::string name, bool passed, double statistic, double tolerance, std::string detail = "") {
    checks.push_back(VerifyCheck{std::move(name), passed, statistic, tolerance, std::move(detail)});
  }

  // Max-deviation check: passes when worst <= tol.
  void add_max(std::string name, double worst, double tol, std::string detail = "") {
    add(std::move(name), worst <= tol, worst, tol, std::move(detail));
  }

  static PolicyParams random_policy(Rng& rng, std::size_t S, std::size_t J, double gamma,
                                    std::size_t max_dead) {
    Table<double> u(S, J);
    for (double& x : u.flat()) x = 4.0 * rng.uniform() - 2.0;
    std::vector<std::size_t> dead(S, 0);
    if (max_dead > 0) {
      for (auto& w : dead) w = rng.below(max_dead + 1);
    }
    return PolicyParams(std::move(u), gamma, std::move(dead));
  }

  struct Pair {
    std::string label;
    Problem problem;
    PolicyParams params;
  };

  std::vector<Pair> random_pairs(std::size_t n, std::uint64_t check) const {
    std::vector<Pair> out;
    for (std::size_t k = 0; k < n; ++k) {
      Rng g = rng(check, k);
      const double gamma = g.bernoulli(0.5) ? 1.0 : 3.0;
      switch (k % 3) {
        case 0: {
          Problem p = make_two_token_trap(g.bernoulli(0.25));
          out.push_back({p.name, p, random_policy(g, 2, 2, gamma, 0)});
          break;
        }
        case 1: {
          const std::size_t d = 1 + g.below(5);
          std::vector<std::size_t> set;
          for (std::size_t i = 1; i <= d; ++i) {
            if (g.bernoulli(0.5)) set.push_back(i);
          }
          Problem p = make_parity(d, set);
          out.push_back({"parity d=" + std::to_string(d), p, random_policy(g, d, 2, gamma, 2)});
          break;
        }
        default: {
          const std::size_t S = 1 + g.below(6);
          std::vector<double> lambdas(S);
          for (double& l : lambdas) l = 0.05 + 0.9 * g.uniform();
          Problem p = make_recovery(lambdas);
          out.push_back({"recovery S=" + std::to_string(S), p, random_policy(g, S, 2, gamma, 2)});
          break;
        }
      }
    }
    return out;
  }

  void bound_suite() {
    double bayes = 0.0, ver = 0.0, loss = 0.0, total = 0.0;
    std::string bayes_at, ver_at, loss_at;
    for (const auto& pair : random_pairs(config.verify.random_pairs, 1)) {
      const OutcomeTable t = oracle(pair.params, pair.problem);
      const double b = bayes_residual(t);
      if (!(b <= bayes)) {
        bayes = std::isnan(b) ? kInfinity : b;
        bayes_at = pair.label;
      }
      double sum_r = 0.0;
      for (double r : t.error_ratio) sum_r += r;
      const double ver_gap = (1.0 - sum_r) - t.success_prob;  // must be <= 0
      if (ver_gap > ver) {
        ver = ver_gap;
        ver_at = pair.label;
      }
      const double loss_gap = t.ce_loss - sum_r;  // must be <= 0
      if (loss_gap > loss) {
        loss = loss_gap;
        loss_at = pair.label;
      }
      for (std::size_t s = 0; s < t.num_steps; ++s) {
        for (std::size_t j = 0; j < t.num_tasks; ++j) {
          const double miss = 1.0 - t.p_select(s, j);
          if (miss < 1e-4) continue;  // the subtraction below has no precision left
          const double via_total = (t.success_prob - t.p_accept_and_select(s, j)) / miss;
          total = std::max(total, std::abs(via_total - t.p_accept_given_not_select(s, j)));
        }
      }
    }
    const std::string n = std::to_string(config.verify.random_pairs) + " random pairs";
    add_max("bayes_identity", bayes, 1e-10, bayes_at.empty() ? n : n + "; worst " + bayes_at);
    add_max("verifier_bound", ver, 1e-10, ver_at.empty() ? n : n + "; worst " + ver_at);
    add_max("loss_bound", loss, 1e-10, loss_at.empty() ? n : n + "; worst " + loss_at);
    add_max("total_probability", total, 1e-10, "P(V=1 | not A) by total probability against the direct sum");
  }

  void parity_closed_form() {
    double worst = 0.0;
    bool incorrect_below_one = true;
    for (std::size_t d = 2; d <= 8; ++d) {
      std::vector<std::size_t> set;
      for (std::size_t i = 1; i <= d; i += 2) set.push_back(i);
      const Problem p = make_parity(d, set);
      const OutcomeTable t = oracle(uniform_policy(d, 2, 1.0), p);
      const double expect = 1.0 + std::ldexp(1.0, -static_cast<int>(d - 1));
      for (std::size_t s = 0; s < d; ++s) {
        worst = std::max(worst, std::abs(t.rho(s, t.tau[s]) - expect));
        if (!(t.rho(s, 1 - t.tau[s]) < 1.0)) incorrect_below_one = false;
      }
      worst = std::max(worst, std::abs(margin_alpha(t).alpha - (expect - 1.0)));
    }
    add_max("parity_advantage", worst, 1e-10, "rho = 1 + 2^-(d-1) and alpha at uniform init; d = 2..8");
    add("parity_incorrect_rho_below_one", incorrect_below_one, 0.0, 0.0, "d = 2..8");

    double diff = 0.0;
    for (std::size_t d = 1; d <= 6; ++d) {
      Rng g = rng(2, d);
      std::vector<std::size_t> set;
      for (std::size_t i = 1; i <= d; ++i) {
        if (g.bernoulli(0.5)) set.push_back(i);
      }
      const Problem p = make_parity(d, set);
      const PolicyParams params = random_policy(g, d, 2, 1.0, 1);
      const OutcomeTable fast = oracle(params, p);
      const OutcomeTable full = oracle(params, p, EnumerationOptions{1e8, false});
      diff = std::max(diff, std::abs(fast.success_prob - full.success_prob));
      for (std::size_t i = 0; i < fast.p_select.flat().size(); ++i) {
        diff = std::max(diff, std::abs(fast.p_select.flat()[i] - full.p_select.flat()[i]));
        diff = std::max(diff, std::abs(fast.p_accept_and_select.flat()[i] - full.p_accept_and_select.flat()[i]));
      }
    }
    add_max("parity_shortcut_matches_enumeration", diff, 1e-12, "d = 1..6, random policies");
  }

  void recovery_closed_form() {
    double worst = 0.0;
    double factor_diff = 0.0;
    bool incorrect_below_one = true;
    std::size_t k = 0;
    for (double lambda : {0.25, 0.5, 0.75}) {
      for (std::size_t S : {1, 2, 3, 5}) {
        for (int draw = 0; draw < 5; ++draw, ++k) {
          Rng g = rng(3, k);
          const Problem p = make_recovery(lambda, S);
          const PolicyParams params = random_policy(g, S, 2, 1.0 + 4.0 * g.uniform(), 0);
          const OutcomeTable t = oracle(params, p);
          for (std::size_t s = 0; s < S; ++s) {
            worst = std::max(worst, std::abs(t.rho(s, 0) - 1.0 / lambda));
            if (!(t.rho(s, 1) < 1.0)) incorrect_below_one = false;
          }
          const OutcomeTable full = oracle(params, p, EnumerationOptions{1e8, false});
          factor_diff = std::max(factor_diff, std::abs(t.success_prob - full.success_prob));
          for (std::size_t i = 0; i < t.rho.flat().size(); ++i) {
            factor_diff = std::max(factor_diff,
                                   std::abs(t.p_accept_and_select.flat()[i] - full.p_accept_and_select.flat()[i]));
          }
        }
      }
    }
    add_max("recovery_advantage", worst, 1e-10, "rho_tau = 1 / lambda; random policies");
    add("recovery_incorrect_rho_below_one", incorrect_below_one, 0.0, 0.0, "random policies");
    add_max("recovery_factorization_matches_enumeration", factor_diff, 1e-12, "random policies");
  }

  void trap_closed_form() {
    double worst = 0.0;
    for (double p : {0.1, 0.25, 1.0 / 3.0, 0.5, 0.9}) {
      const Problem trap = make_two_token_trap(false);
      const OutcomeTable t = oracle(correct_prob_policy(trap.tau, 2, p, 1.0), trap);
      const double q = 1.0 - p;
      const double dq = p * p / (p * p + 0.5 * q * q);
      worst = std::max(worst, std::abs(t.success_prob - trap_success_prob(p)));
      for (std::size_t s = 0; s < 2; ++s) {
        worst = std::max(worst, std::abs(t.rho(s, 0) - 2.0 * p / q));
        worst = std::max(worst, std::abs(t.rho(s, 1) - q / (2.0 * p)));
        worst = std::max(worst, std::abs(t.p_select_given_accept(s, 0) - dq));
      }
    }
    add_max("trap_closed_form", worst, 1e-10, "rho = 2p/(1-p) and (1-p)/(2p); P(A | V=1) = D(p)");

    bool zero = true;
    for (double p : {0.1, 0.5, 0.9}) {
      const Problem strict = make_two_token_trap(true);
      const OutcomeTable t = oracle(correct_prob_policy(strict.tau, 2, p, 1.0), strict);
      for (std::size_t s = 0; s < 2; ++s) zero = zero && t.rho(s, 1) == 0.0;
    }
    add("strict_trap_rho_zero", zero, 0.0, 0.0, "incorrect task never accepted");
  }

  // Monte-Carlo mean of the single-step logit change against the analytic
  // expectation; returns the worst |z| over all (s, j).
  double expected_update_z(const Problem& problem, const PolicyParams& params, std::uint64_t check,
                           bool rho_zero_only, std::string& detail) {
    const std::size_t n = config.verify.mc_batches;
    const std::size_t S = params.num_steps(), J = params.num_tasks();
    const double eta = config.verify.eta;
    const SamplingPolicy policy(params);
    std::vector<double> change(n * S * J);
    const std::uint64_t seed = stream(config.seed, StreamDomain::verify, check, 0)();
    parallel_for(n, threads, [&](std::size_t b) {
      const PositiveBatch batch = collect_positive_batch(policy, problem, config.verify.batch_size,
                                                         1'000'000, seed, b, 1);
      const PolicyParams next = apply_update(params, compute_q_stats(batch.rollouts, policy, J), eta);
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t j = 0; j < J; ++j) change[(b * S + s) * J + j] = logit_change(params, next, s, j);
      }
    });
    const OutcomeTable t = oracle(params, problem);
    double worst = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t j = 0; j < J; ++j) {
        if (rho_zero_only && t.rho(s, j) != 0.0) continue;
        double sum = 0.0, sq = 0.0;
        for (std::size_t b = 0; b < n; ++b) sum += change[(b * S + s) * J + j];
        const double mean = sum / static_cast<double>(n);
        for (std::size_t b = 0; b < n; ++b) {
          const double d = change[(b * S + s) * J + j] - mean;
          sq += d * d;
        }
        const double se = std::sqrt(sq / static_cast<double>(n - 1) / static_cast<double>(n));
        const double expect = rlvr::expected_update(t, s, j, eta, params.gamma());
        // Deviations at rounding level count as a match: on the rho = 0 branch
        // every batch gives the same change and the standard error is ~0.
        const double diff = std::abs(mean - expect);
        const double z = diff <= 1e-12 ? 0.0 : (se > 0.0 ? diff / se : kInfinity);
        if (!(z <= worst)) {
          worst = std::isnan(z) ? kInfinity : z;
          detail = "worst at s=" + std::to_string(s) + " j=" + std::to_string(j) + " mean " +
                   io::format_double(mean) + " expected " + io::format_double(expect);
        }
      }
    }
    return worst;
  }

  void expected_update() {
    const Problem trap = make_two_token_trap(false);
    double worst = 0.0;
    std::string detail;
    std::uint64_t check = 10;
    for (double p : {0.25, 0.5, 0.75}) {
      std::string d;
      const double z = expected_update_z(trap, correct_prob_policy(trap.tau, 2, p, 1.0), check++, false, d);
      if (!(z <= worst)) {
        worst = z;
        detail = "p=" + io::format_double(p) + " " + d;
      }
    }
    add("expected_update_trap", worst <= 3.0, worst, 3.0,
        std::to_string(config.verify.mc_batches) + " batches; " + detail);

    const Problem strict = make_two_token_trap(true);
    std::string d;
    const double z = expected_update_z(strict, correct_prob_policy(strict.tau, 2, 0.5, 1.0), check++, true, d);
    add("expected_update_rho_zero", z <= 3.0, z, 3.0, "strict trap p=0.5; " + d);
  }

  // Unfiltered rollouts: each Q entry has mean zero.
  void q_centering() {
    const std::size_t n = config.verify.mc_rollouts;
    double worst = 0.0;
    std::uint64_t check = 20;
    const Problem trap = make_two_token_trap(false);
    const Problem parity = make_parity(3, {1, 3});
    Rng g = rng(check);
    const std::vector<std::pair<const Problem*, PolicyParams>> cases{
        {&trap, correct_prob_policy(trap.tau, 2, 0.5, 1.0)}, {&parity, random_policy(g, 3, 2, 1.0, 1)}};
    for (const auto& [problem, params] : cases) {
      const SamplingPolicy policy(params);
      Rng r = rng(check, 1 + (problem == &parity));
      const std::size_t S = params.num_steps(), J = params.num_tasks();
      Table<double> count(S, J);
      for (std::size_t i = 0; i < n; ++i) {
        const Rollout ro = sample_rollout(policy, *problem, r);
        for (std::size_t s = 0; s < S; ++s) {
          if (ro.trace[s]) count(s, *ro.trace[s]) += 1.0;
        }
      }
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t j = 0; j < J; ++j) {
          const double pi = policy.step(s).task_probs[j];
          const double mean = count(s, j) / static_cast<double>(n) - pi;
          const double se = std::sqrt(pi * (1.0 - pi) / static_cast<double>(n));
          worst = std::max(worst, std::abs(mean) / se);
        }
      }
    }
    add("q_centering", worst <= 3.0, worst, 3.0, std::to_string(n) + " unfiltered rollouts per case");
  }

  void oracle_vs_monte_carlo() {
    const std::size_t n = config.verify.mc_rollouts;
    Rng g = rng(30);
    std::vector<std::pair<Problem, PolicyParams>> cases;
    {
      Problem p = make_two_token_trap(false);
      cases.emplace_back(p, correct_prob_policy(p.tau, 2, 0.5, 1.0));
    }
    {
      Problem p = make_two_token_trap(true);
      cases.emplace_back(p, random_policy(g, 2, 2, 1.0, 0));
    }
    cases.emplace_back(make_parity(3, {1, 3}), random_policy(g, 3, 2, 1.0, 1));
    cases.emplace_back(make_recovery({0.3, 0.6, 0.9}), random_policy(g, 3, 2, 1.0, 1));
    cases.emplace_back(make_addition(1), random_policy(g, 2, 2, 1.0, 0));
    double worst = 0.0;
    std::string where;
    for (std::size_t c = 0; c < cases.size(); ++c) {
      const auto& [problem, params] = cases[c];
      const OutcomeTable t = oracle(params, problem);
      const SamplingPolicy policy(params);
      Rng r = rng(31, c);
      const std::size_t S = params.num_steps(), J = params.num_tasks();
      double acc = 0.0;
      Table<double> sel(S, J), acc_sel(S, J);
      for (std::size_t i = 0; i < n; ++i) {
        const Rollout ro = sample_rollout(policy, problem, r);
        acc += ro.verified;
        for (std::size_t s = 0; s < S; ++s) {
          if (!ro.trace[s]) continue;
          sel(s, *ro.trace[s]) += 1.0;
          acc_sel(s, *ro.trace[s]) += ro.verified;
        }
      }
      const auto z = [n](double hits, double p) {
        const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
        const double diff = std::abs(hits / static_cast<double>(n) - p);
        return se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : kInfinity);
      };
      const auto note = [&](double zz, const std::string& what) {
        if (!(zz <= worst)) {
          worst = std::isnan(zz) ? kInfinity : zz;
          where = problem.name + " " + what;
        }
      };
      note(z(acc, t.success_prob), "P(V=1)");
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t j = 0; j < J; ++j) {
          note(z(sel(s, j), t.p_select(s, j)), "P(A)");
          note(z(acc_sel(s, j), t.p_accept_and_select(s, j)), "P(V=1 and A)");
        }
      }
    }
    add("oracle_matches_monte_carlo", worst <= 3.0, worst, 3.0,
        std::to_string(n) + " rollouts per problem; worst " + where);
  }

  void lipschitz() {
    double worst = -kInfinity;  // largest drop minus 2 eta gamma^2
    Rng g = rng(40);
    for (int k = 0; k < 1000; ++k) {
      const std::size_t S = 1 + g.below(4), J = 2 + g.below(3);
      const double gamma = 0.5 + 3.0 * g.uniform();
      const PolicyParams params = random_policy(g, S, J, gamma, 2);
      Table<double> q(S, J);
      for (double& x : q.flat()) x = 2.0 * g.uniform() - 1.0;
      const double eta = g.uniform() / (4.0 * gamma * gamma);
      if (!(eta > 0.0)) continue;
      const PolicyParams next = apply_update(params, q, eta);
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t j = g.below(J);
        const double drop = step_distribution(params, s).task_probs[j] - step_distribution(next, s).task_probs[j];
        worst = std::max(worst, drop - 2.0 * eta * gamma * gamma);
      }
    }
    add_max("lipschitz_single_step", worst, 1e-12, "1000 random (policy, Q) pairs; statistic = drop - 2 eta gamma^2");

    // Trajectory floor: P_t(A_tau) >= P_0(A_tau) - 2 eta gamma^2.
    double floor_gap = -kInfinity;
    std::size_t margin_failures = 0;
    const double eta = 0.05;
    std::uint64_t seed = 41;
    for (const Problem& p : {make_recovery(0.5, 4), make_parity(3, {1, 3})}) {
      TrainConfig t;
      t.eta = eta;
      t.batch_size = 64;
      t.iterations = 200;
      t.seed = stream(config.seed, StreamDomain::verify, seed++, 0)();
      t.threads = threads;
      const TrainResult res = train(uniform_policy(p.num_steps, 2, 1.0), p, t);
      const auto& first = res.records.front().correct_prob;
      for (const auto& m : res.records) {
        for (std::size_t s = 0; s < m.correct_prob.size(); ++s) {
          floor_gap = std::max(floor_gap, first[s] - 2.0 * eta - m.correct_prob[s]);
        }
      }
      margin_failures += res.margin_violations;
    }
    add_max("lipschitz_trajectory_floor", floor_gap, 1e-12,
            "recovery S=4 and parity d=3 from uniform init; statistic = floor - P_t");
    add("margin_along_trajectory", margin_failures == 0, static_cast<double>(margin_failures), 0.0,
        "iterates failing the pointwise margin check");
  }

  void mean_field() {
    bool signs = true;
    for (int i = 1; i < 1000; ++i) {
      const double p = i / 1000.0;
      const double dz = mean_field_drift(p, 1.0 - p, 0.1);
      if ((p > 1.0 / 3.0) != (dz > 0.0)) signs = false;
    }
    const double at_fixed = mean_field_drift(1.0 / 3.0, 2.0 / 3.0, 0.1);
    add("mean_field_sign", signs && at_fixed == 0.0, std::abs(at_fixed), 0.0,
        "drift > 0 iff p > 1/3 on a 999-point grid; zero at 1/3");

    double worst = 0.0;
    std::string where;
    for (double p0 : {0.1, 0.2, 0.25, 0.32, 0.34, 0.4, 0.5, 0.9}) {
      const MeanFieldTrajectory tr = mean_field_trajectory(p0, 0.1, 100'000, 1e-4);
      const double limit = p0 > 1.0 / 3.0 ? 1.0 : 0.5;
      const bool classified = tr.limit == (p0 > 1.0 / 3.0 ? MeanFieldLimit::success : MeanFieldLimit::collapse);
      const double gap = classified ? std::abs(tr.success_prob.back() - limit) : kInfinity;
      if (!(gap <= worst)) {
        worst = gap;
        where = "p0=" + io::format_double(p0);
      }
    }
    add_max("mean_field_limits", worst, 1e-3, "eta = 0.1; success above 1/3 and 1/2 below" +
                                                  (where.empty() ? std::string() : "; worst " + where));
  }
};

}  // namespace detail

inline VerifyResult run_verify(const ExperimentConfig& c, const RunContext& ctx = {},
                               const TableHook& hook = {}) {
  validate(c);
  detail::Verifier v{c, ctx.threads, hook, {}};
  v.bound_suite();
  v.parity_closed_form();
  v.recovery_closed_form();
  v.trap_closed_form();
  v.expected_update();
  v.q_centering();
  v.oracle_vs_monte_carlo();
  v.lipschitz();
  v.mean_field();

  VerifyResult out{std::move(v.checks)};
  io::CsvWriter csv(detail::file_header(c));
  for (const char* col : {"check", "passed", "statistic", "tolerance", "detail"}) csv.cell(col);
  csv.end_row();
  for (const auto& ch : out.checks) {
    csv.cell(ch.name).cell(ch.passed).cell(ch.statistic).cell(ch.tolerance).cell(ch.detail);
    csv.end_row();
  }
  if (ctx.log) {
    for (const auto& ch : out.checks) {
      char line[160];
      std::snprintf(line, sizeof line, "%-44s %-4s %-24s <= %-8s ", ch.name.c_str(), ch.passed ? "PASS" : "FAIL",
                    io::format_double(ch.statistic).c_str(), io::format_double(ch.tolerance).c_str());
      *ctx.log << line << ch.detail << "\n";
    }
    const auto failed = std::count_if(out.checks.begin(), out.checks.end(),
                                      [](const VerifyCheck& ch) { return !ch.passed; });
    *ctx.log << out.checks.size() - static_cast<std::size_t>(failed) << "/" << out.checks.size()
             << " checks passed\n";
  }
  detail::write_config(c, ctx);
  detail::write_output(ctx, "verify.csv", csv.text());
  return out;
}

}  // namespace rlvr
