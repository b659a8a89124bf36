#pragma once

#include <CLI11.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vbl/alloc.hpp"
#include "vbl/error.hpp"
#include "vbl/fisher.hpp"
#include "vbl/io.hpp"
#include "vbl/scene.hpp"
#include "vbl/validate.hpp"

namespace vbl::cli {

inline constexpr const char* kSweepHeader = "budget,algorithm,seed,rel_speb_root_m,wall_ms,m_star,iterations";

struct AlgorithmOptions {
  double delta = 0.05;
  int rounding_trials = 100;
  int decouple_rounds = 5;
  SaSchedule sa;
};

inline const std::vector<std::string>& algorithm_names() {
  static const std::vector<std::string> names = {"uniform", "vgd", "decouple", "sa"};
  return names;
}

inline AllocationResult run_algorithm(const std::string& algo, const BudgetProblem& p, const AlgorithmOptions& o) {
  if (algo == "uniform") return uniform_allocate(p);
  if (algo == "vgd") return vgd_allocate(p);
  if (algo == "decouple") {
    DecouplingOptions d;
    d.rounds = o.decouple_rounds;
    return decoupling_allocate(p, d);
  }
  if (algo == "sa") return sa_allocate(p, o.sa);
  throw Error(ErrorCode::invalid_input, "unknown algorithm '" + algo + "'");
}

/// Seed from the flag, else VBL_SEED, else 0.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  const char* env = std::getenv("VBL_SEED");
  if (!env || !*env) return 0;
  std::uint64_t v = 0;
  const std::string_view text(env);
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error(ErrorCode::invalid_input, "VBL_SEED must be a nonnegative integer");
  }
  return v;
}

/// Parses start:stop:step (inclusive of stop).
inline std::vector<long> parse_budget_range(const std::string& spec) {
  std::vector<long> parts;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t colon = std::min(spec.find(':', pos), spec.size());
    long v = 0;
    const auto res = std::from_chars(spec.data() + pos, spec.data() + colon, v);
    if (res.ec != std::errc() || res.ptr != spec.data() + colon) {
      throw Error(ErrorCode::invalid_input, "budget range must be start:stop:step");
    }
    parts.push_back(v);
    pos = colon + 1;
  }
  if (parts.size() != 3 || parts[0] < 1 || parts[2] < 1 || parts[1] < parts[0]) {
    throw Error(ErrorCode::invalid_input, "budget range must be start:stop:step with 1 <= start <= stop, step >= 1");
  }
  std::vector<long> out;
  for (long b = parts[0]; b <= parts[1]; b += parts[2]) out.push_back(b);
  return out;
}

struct SweepCell {
  long budget = 0;
  std::string algorithm;
  std::optional<AllocationResult> result;
  std::string error;
};

/// Runs every (budget, algorithm) cell on up to `jobs` threads. Cells are
/// returned in (budget, algorithm) order whatever the completion order.
inline std::vector<SweepCell> run_sweep(const Scenario& s, const std::vector<long>& budgets,
                                        const std::vector<std::string>& algos, std::uint64_t seed,
                                        const AlgorithmOptions& o, unsigned jobs) {
  std::vector<SweepCell> cells;
  for (long b : budgets) {
    for (const auto& a : algos) cells.push_back({b, a, std::nullopt, {}});
  }
  auto work = [&](SweepCell& c) {
    try {
      const BudgetProblem p{s, c.budget, o.delta, o.rounding_trials, seed};
      AllocationResult r = run_algorithm(c.algorithm, p, o);
      if (!std::isfinite(r.speb)) {
        c.error = to_string(ErrorCode::unobservable);
      } else {
        c.result = std::move(r);
      }
    } catch (const Error& e) {
      c.error = to_string(e.code());
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
  if (workers == 1) {
    for (auto& c : cells) work(c);
    return cells;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < cells.size(); k = next++) work(cells[k]);
    });
  }
  for (auto& t : pool) t.join();
  return cells;
}

/// Sweep table. The trailing `error` column appears only when a cell failed.
inline std::string sweep_csv(const std::vector<SweepCell>& cells, std::uint64_t seed) {
  bool failures = false;
  for (const auto& c : cells) failures = failures || !c.result;
  CsvWriter csv;
  std::vector<std::string> header = {"budget", "algorithm", "seed", "rel_speb_root_m", "wall_ms", "m_star",
                                     "iterations"};
  if (failures) header.emplace_back("error");
  csv.row(header);
  const std::string seed_text = std::to_string(seed);
  for (const auto& c : cells) {
    std::vector<std::string> row = {format_number(static_cast<long long>(c.budget)), c.algorithm, seed_text};
    if (c.result) {
      row.push_back(format_number(std::sqrt(c.result->speb)));
      row.push_back(format_number(c.result->wall_ms));
      row.push_back(format_number(c.result->m_star));
      row.push_back(format_number(static_cast<long long>(c.result->iterations)));
    } else {
      row.insert(row.end(), 4, "");
    }
    if (failures) row.push_back(c.error);
    csv.row(row);
  }
  return csv.str();
}

inline std::string validation_csv(const McReport& rep) {
  CsvWriter csv;
  csv.row({"kind", "trial", "epsilon_t", "epsilon_r", "epsilon_r_features", "status", "mean_epsilon_r", "bound",
           "ratio", "failures"});
  for (const auto& t : rep.per_trial) {
    const std::string trial = format_number(static_cast<long long>(t.trial));
    if (t.failed) {
      csv.row({"trial", trial, "", "", "", "failed", "", "", "", ""});
    } else {
      csv.row({"trial", trial, format_number(t.epsilon_t), format_number(t.epsilon_r),
               format_number(t.epsilon_r_features), "ok", "", "", "", ""});
    }
  }
  csv.row({"summary", "", "", "", "", "", format_number(rep.empirical_relative_mse), format_number(rep.bound),
           format_number(rep.ratio), format_number(static_cast<long long>(rep.failures))});
  return csv.str();
}

inline void report_error(std::ostream& err, ErrorCode code, const std::string& message) {
  err << "error code=" << to_string(code) << " message=" << CsvWriter::quote(message) << '\n';
}

/// Entry point of the `vbl` tool. Returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bit allocation for cooperative vision-based localization"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  AlgorithmOptions algo_opts;
  std::optional<double> sa_t0;
  unsigned jobs = 1;

  auto add_seed = [&](CLI::App* cmd) { cmd->add_option("--seed", seed, "master seed (fallback: VBL_SEED, then 0)"); };
  auto add_algo_options = [&](CLI::App* cmd) {
    cmd->add_option("--delta", algo_opts.delta, "grid step of the camera bit share")->capture_default_str();
    cmd->add_option("--rounding-trials", algo_opts.rounding_trials, "randomized rounding trials")
        ->capture_default_str();
    cmd->add_option("--decouple-rounds", algo_opts.decouple_rounds, "rounds of the decoupling optimizer")
        ->capture_default_str();
    cmd->add_option("--sa-initial-temperature", sa_t0, "initial temperature (default: calibrated)");
    cmd->add_option("--sa-cooling", algo_opts.sa.cooling_factor, "geometric cooling factor")->capture_default_str();
    cmd->add_option("--sa-moves", algo_opts.sa.moves_per_temperature, "moves per temperature")
        ->capture_default_str();
    cmd->add_option("--sa-stop-acceptance", algo_opts.sa.stop_acceptance, "stop below this acceptance rate")
        ->capture_default_str();
    cmd->add_option("--sa-min-temperature-ratio", algo_opts.sa.min_temperature_ratio,
                    "stop below this fraction of the initial temperature")
        ->capture_default_str();
  };

  std::string preset;
  std::string out_path;
  auto* gen = app.add_subcommand("gen", "generate a scenario file");
  gen->add_option("--preset", preset, "scenario preset")->required()->check(CLI::IsMember({"paper", "toy"}));
  gen->add_option("--out", out_path, "output JSON path")->required();
  add_seed(gen);

  std::string scenario_path;
  long budget = 0;
  std::string algo;
  auto* allocate = app.add_subcommand("allocate", "allocate a bit budget");
  allocate->add_option("--scenario", scenario_path, "scenario JSON")->required();
  allocate->add_option("--budget", budget, "total bits B")->required();
  allocate->add_option("--algo", algo, "algorithm")->required()->check(CLI::IsMember(algorithm_names()));
  allocate->add_option("--out", out_path, "output allocation JSON");
  add_seed(allocate);
  add_algo_options(allocate);

  std::string budgets;
  std::vector<std::string> algos = algorithm_names();
  auto* sweep = app.add_subcommand("sweep", "sweep budgets and algorithms");
  sweep->add_option("--scenario", scenario_path, "scenario JSON")->required();
  sweep->add_option("--budgets", budgets, "start:stop:step, inclusive")->required();
  sweep->add_option("--algos", algos, "algorithms")->delimiter(',')->check(CLI::IsMember(algorithm_names()));
  sweep->add_option("--out", out_path, "output CSV")->required();
  sweep->add_option("--jobs", jobs, "concurrent cells")->capture_default_str();
  add_seed(sweep);
  add_algo_options(sweep);

  std::string alloc_path;
  std::size_t trials = 200;
  auto* validate = app.add_subcommand("validate", "Monte Carlo check of the bound");
  validate->add_option("--scenario", scenario_path, "scenario JSON")->required();
  validate->add_option("--allocation", alloc_path, "allocation JSON")->required();
  validate->add_option("--trials", trials, "Monte Carlo trials")->capture_default_str();
  validate->add_option("--out", out_path, "output CSV")->required();
  validate->add_option("--jobs", jobs, "concurrent trials")->capture_default_str();
  add_seed(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::Error& e) {
    report_error(err, ErrorCode::invalid_input, e.what());
    return exit_status(ErrorCode::invalid_input);
  }

  try {
    const std::uint64_t s = resolve_seed(seed);
    algo_opts.sa.initial_temperature = sa_t0;
    if (jobs < 1) throw Error(ErrorCode::invalid_input, "--jobs must be at least 1");

    if (*gen) {
      const Scenario sc = preset == "paper" ? generate_paper_scenario(s) : generate_toy_scenario(s);
      save_scenario(out_path, sc);
      const MeasurementLayout lay = sc.layout();
      out << "preset=" << preset << " vehicles=" << lay.n_vehicles() << " features=" << lay.n_features()
          << " D=" << lay.dimension() << " fim=" << lay.fim_size() << 'x' << lay.fim_size() << '\n';
      return 0;
    }
    if (*allocate) {
      const Scenario sc = load_scenario(scenario_path);
      const BudgetProblem p{sc, budget, algo_opts.delta, algo_opts.rounding_trials, s};
      const AllocationResult r = run_algorithm(algo, p, algo_opts);
      if (!std::isfinite(r.speb)) throw Error(ErrorCode::unobservable, "allocation leaves the network unobservable");
      if (!out_path.empty()) write_file(out_path, allocation_to_json(r, budget, s).dump(2) + "\n");
      out << "algorithm=" << r.algorithm << " budget=" << budget << " rel_speb_root_m=" << format_number(std::sqrt(r.speb))
          << " m_star=" << format_number(r.m_star) << " iterations=" << r.iterations
          << " wall_ms=" << format_number(r.wall_ms) << '\n';
      return 0;
    }
    if (*sweep) {
      const Scenario sc = load_scenario(scenario_path);
      const auto cells = run_sweep(sc, parse_budget_range(budgets), algos, s, algo_opts, jobs);
      write_file(out_path, sweep_csv(cells, s));
      std::size_t failed = 0;
      for (const auto& c : cells) failed += c.result ? 0 : 1;
      out << "rows=" << cells.size() << " failed=" << failed << '\n';
      return 0;
    }
    if (*validate) {
      const Scenario sc = load_scenario(scenario_path);
      const BitAllocation bits = load_allocation(alloc_path);
      MonteCarloOptions mc;
      mc.jobs = jobs;
      const McReport rep = run_monte_carlo(sc, bits, trials, s, mc);
      write_file(out_path, validation_csv(rep));
      out << "trials=" << rep.trials << " failures=" << rep.failures
          << " mean_epsilon_r=" << format_number(rep.empirical_relative_mse) << " bound=" << format_number(rep.bound)
          << " ratio=" << format_number(rep.ratio) << '\n';
      return 0;
    }
  } catch (const Error& e) {
    report_error(err, e.code(), e.what());
    return exit_status(e.code());
  }
  return 0;
}

}  // namespace vbl::cli
